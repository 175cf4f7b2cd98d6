#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prefseg {

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// exit categories; library code throws and never catches these.
class Error : public std::runtime_error {
public:
    enum class Kind {
        Shape,            // mismatched domains / modes / channel counts
        Numeric,          // NaN or Inf where finite values are required
        Format,           // bad magic, version, or truncated file
        Config,           // invalid or unknown configuration fields
        DegeneratePair,   // empty disagreement region under region normalization
        DegenerateSlate,  // fewer than two distinct proposals
        MissingLabel,     // ground truth required but absent
        Io,               // filesystem failures
    };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const { return kind_; }

    const char* kind_name() const {
        switch (kind_) {
            case Kind::Shape: return "shape";
            case Kind::Numeric: return "numeric";
            case Kind::Format: return "format";
            case Kind::Config: return "config";
            case Kind::DegeneratePair: return "degenerate-pair";
            case Kind::DegenerateSlate: return "degenerate-slate";
            case Kind::MissingLabel: return "missing-label";
            case Kind::Io: return "io";
        }
        return "unknown";
    }

private:
    Kind kind_;
};

[[noreturn]] inline void throw_shape(const std::string& what) {
    throw Error(Error::Kind::Shape, what);
}

inline constexpr const char* kVersionString = "prefseg 0.1.0";

}  // namespace prefseg
