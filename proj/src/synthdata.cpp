#include "prefseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "prefseg/rng.hpp"

namespace prefseg {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Qc: return "qc";
    }
    return "?";
}

const std::vector<Sample>& Dataset::split(Split s) const {
    switch (s) {
        case Split::Train: return train;
        case Split::Val: return val;
        case Split::Test: return test;
        case Split::Qc: return qc;
    }
    return train;
}

std::vector<Sample>& Dataset::split(Split s) {
    return const_cast<std::vector<Sample>&>(static_cast<const Dataset*>(this)->split(s));
}

void DatasetSpec::validate() const {
    if (fg_classes < 1) throw Error(Error::Kind::Config, "dataset: fg_classes must be >= 1");
    if (height < 8 || width < 8 || height % 4 != 0 || width % 4 != 0)
        throw Error(Error::Kind::Config, "dataset: height/width must be >= 8 and divisible by 4");
    if (train_count < 1 || val_count < 1 || test_count < 1 || qc_count < 0)
        throw Error(Error::Kind::Config, "dataset: split counts must be positive");
    if (noise_sigma < 0.0) throw Error(Error::Kind::Config, "dataset: noise_sigma must be >= 0");
    if (!(min_size_frac > 0.0) || !(max_size_frac > min_size_frac) || max_size_frac > 0.45)
        throw Error(Error::Kind::Config, "dataset: infeasible size fractions");
    if (!class_intensities.empty() && static_cast<int>(class_intensities.size()) != fg_classes)
        throw Error(Error::Kind::Config, "dataset: class_intensities must have one entry per class");
    if (mode == MaskMode::MultiClass && fg_classes != 3)
        throw Error(Error::Kind::Config, "dataset: multi-class geometry is defined for fg_classes == 3");
}

namespace {

std::vector<double> intensities(const DatasetSpec& spec) {
    if (!spec.class_intensities.empty()) return spec.class_intensities;
    std::vector<double> v(spec.fg_classes);
    for (int c = 0; c < spec.fg_classes; ++c)
        v[c] = 0.40 + 0.50 * (spec.fg_classes == 1 ? 1.0 : static_cast<double>(c) / (spec.fg_classes - 1));
    return v;
}

struct EllipseShape {
    double cx, cy, rx, ry, angle;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = (dx * ca + dy * sa) / rx;
        const double v = (-dx * sa + dy * ca) / ry;
        return u * u + v * v <= 1.0;
    }
};

struct BarShape {
    double cx, cy, half_len, half_wid, angle;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double u = dx * ca + dy * sa;
        const double v = -dx * sa + dy * ca;
        return std::abs(u) <= half_len && std::abs(v) <= half_wid;
    }
};

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.next_double(); }

void paint(Mask& mask, Image& img, int c, double intensity, const auto& shape) {
    const int h = mask.domain.height, w = mask.domain.width;
    const int hw = h * w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!shape.contains(x + 0.5, y + 0.5)) continue;
            const int i = y * w + x;
            if (mask.mode == MaskMode::MultiClass)
                mask.labels[i] = static_cast<uint8_t>(c + 1);  // class ids 1..fg
            else
                mask.labels[static_cast<size_t>(c) * hw + i] = 1;
            img.values[i] = intensity;
        }
}

Sample render(const DatasetSpec& spec, Split split, int index, bool with_noise) {
    const PixelDomain d{spec.height, spec.width};
    const double s = std::min(spec.height, spec.width);
    Rng rng(Rng::mix(spec.master_seed, static_cast<uint64_t>(split), static_cast<uint64_t>(index)));

    Sample sample;
    sample.id = static_cast<uint64_t>(split) * 1000000ULL + static_cast<uint64_t>(index);
    sample.image = Image::zeros(d, 1);
    std::fill(sample.image.values.begin(), sample.image.values.end(), spec.background_intensity);
    const std::vector<double> level = intensities(spec);

    if (spec.mode == MaskMode::MultiClass) {
        sample.mask = Mask::multi_class(d, spec.mask_classes());
        // ring + nested disk
        const double r_out = s * uniform_in(rng, 0.6 * spec.max_size_frac, spec.max_size_frac);
        const double r_in = r_out * uniform_in(rng, 0.50, 0.68);
        const double rcx = uniform_in(rng, r_out + 1.5, spec.width - r_out - 1.5);
        const double rcy = uniform_in(rng, r_out + 1.5, spec.height - r_out - 1.5);
        // free blob; placed away from the ring so structures stay disjoint
        const double br = s * uniform_in(rng, spec.min_size_frac, 0.55 * spec.max_size_frac);
        double bx = 0.0, by = 0.0;
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            bx = uniform_in(rng, br + 1.0, spec.width - br - 1.0);
            by = uniform_in(rng, br + 1.0, spec.height - br - 1.0);
            const double dist = std::hypot(bx - rcx, by - rcy);
            placed = dist >= r_out + br + 2.0;
        }
        const double blob_angle = uniform_in(rng, 0.0, 3.14159265358979);
        if (placed) {
            paint(sample.mask, sample.image, 0, level[0],
                  EllipseShape{bx, by, br, 0.75 * br, blob_angle});
        }
        const int h = d.height, w = d.width;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dist = std::hypot(x + 0.5 - rcx, y + 0.5 - rcy);
                if (dist > r_out) continue;
                const int i = y * w + x;
                sample.mask.labels[i] = static_cast<uint8_t>(dist <= r_in ? 3 : 2);
                sample.image.values[i] = dist <= r_in ? level[2] : level[1];
            }
    } else {
        sample.mask = Mask::multi_label(d, spec.mask_classes());
        // large ellipse
        const double r0 = s * uniform_in(rng, 0.8 * spec.max_size_frac, 1.15 * spec.max_size_frac);
        paint(sample.mask, sample.image, 0, level[0],
              EllipseShape{uniform_in(rng, r0, spec.width - r0), uniform_in(rng, r0, spec.height - r0),
                           r0, uniform_in(rng, 0.7, 0.95) * r0, uniform_in(rng, 0.0, 3.14159265)});
        // medium ellipse, overlap allowed
        const double r1 = s * uniform_in(rng, spec.min_size_frac, 0.55 * spec.max_size_frac);
        paint(sample.mask, sample.image, 1, level[std::min(1, spec.fg_classes - 1)],
              EllipseShape{uniform_in(rng, r1 + 1, spec.width - r1 - 1),
                           uniform_in(rng, r1 + 1, spec.height - r1 - 1), r1,
                           uniform_in(rng, 0.6, 0.9) * r1, uniform_in(rng, 0.0, 3.14159265)});
        // remaining classes: small thin bars
        for (int c = 2; c < spec.fg_classes; ++c) {
            const double hl = s * uniform_in(rng, 0.08, 0.14);
            const double hw2 = s * uniform_in(rng, 0.020, 0.040);
            paint(sample.mask, sample.image, c, level[c],
                  BarShape{uniform_in(rng, hl + 1, spec.width - hl - 1),
                           uniform_in(rng, hl + 1, spec.height - hl - 1), hl, hw2,
                           uniform_in(rng, 0.0, 3.14159265)});
        }
    }

    if (with_noise && spec.noise_sigma > 0.0) {
        Rng noise(Rng::mix(spec.master_seed, 0xA0 + static_cast<uint64_t>(split),
                           static_cast<uint64_t>(index)));
        for (double& v : sample.image.values) v += spec.noise_sigma * noise.next_gaussian();
    }
    // quantize so the float32 file format round-trips bit-exactly
    for (double& v : sample.image.values) v = static_cast<double>(static_cast<float>(v));
    return sample;
}

}  // namespace

Sample make_sample(const DatasetSpec& spec, Split split, int index) {
    return render(spec, split, index, /*with_noise=*/true);
}

Sample make_clean_sample(const DatasetSpec& spec, Split split, int index) {
    return render(spec, split, index, /*with_noise=*/false);
}

Dataset generate(const DatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    auto fill = [&spec](std::vector<Sample>& out, Split split, int count) {
        out.reserve(count);
        for (int i = 0; i < count; ++i) out.push_back(make_sample(spec, split, i));
    };
    fill(ds.train, Split::Train, spec.train_count);
    fill(ds.val, Split::Val, spec.val_count);
    fill(ds.test, Split::Test, spec.test_count);
    fill(ds.qc, Split::Qc, spec.qc_count);
    return ds;
}

namespace {

constexpr uint32_t kSampleVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct SampleReader {
    std::string bytes;
    size_t offset = 0;

    void need(size_t n, const char* what) const {
        if (offset + n > bytes.size())
            throw Error(Error::Kind::Format, std::string("truncated sample file reading ") + what +
                                                 " at byte offset " + std::to_string(offset));
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<uint8_t>(bytes[offset++]);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint8_t>(bytes[offset]) |
                     (static_cast<uint16_t>(static_cast<uint8_t>(bytes[offset + 1])) << 8);
        offset += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[offset + i])) << (8 * i);
        offset += 4;
        return v;
    }
    float f32(const char* what) {
        const uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

}  // namespace

void write_sample(const std::string& path, const Sample& sample) {
    const int h = sample.image.domain.height, w = sample.image.domain.width;
    const int cin = sample.image.channels;
    const int hw = h * w;
    std::string out;
    out.reserve(16 + static_cast<size_t>(hw) * cin * 4 + sample.mask.labels.size());
    out += "PSMP";
    put_u32(out, kSampleVersion);
    out.push_back(static_cast<char>(sample.mask.mode == MaskMode::MultiClass ? 0 : 1));
    put_u16(out, static_cast<uint16_t>(sample.mask.num_classes));
    put_u32(out, static_cast<uint32_t>(h));
    put_u32(out, static_cast<uint32_t>(w));
    put_u16(out, static_cast<uint16_t>(cin));
    // image interleaved row-major H x W x Cin
    for (int i = 0; i < hw; ++i)
        for (int c = 0; c < cin; ++c) put_f32(out, static_cast<float>(sample.image.at(c, i)));
    if (sample.mask.mode == MaskMode::MultiClass) {
        out.append(reinterpret_cast<const char*>(sample.mask.labels.data()), sample.mask.labels.size());
    } else {
        const int plane_bytes = (hw + 7) / 8;
        for (int c = 0; c < sample.mask.num_classes; ++c) {
            std::string packed(plane_bytes, '\0');
            for (int i = 0; i < hw; ++i)
                if (sample.mask.labels[static_cast<size_t>(c) * hw + i])
                    packed[i / 8] |= static_cast<char>(1 << (i % 8));
            out += packed;
        }
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(Error::Kind::Io, "cannot open sample file for writing: " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw Error(Error::Kind::Io, "write failed: " + path);
}

Sample read_sample(const std::string& path) {
    SampleReader r;
    {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(Error::Kind::Io, "cannot open sample file: " + path);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        r.bytes = std::move(bytes);
    }
    r.need(4, "magic");
    if (r.bytes.compare(0, 4, "PSMP") != 0)
        throw Error(Error::Kind::Format, "bad sample magic at byte offset 0");
    r.offset = 4;
    const uint32_t version = r.u32("version");
    if (version != kSampleVersion)
        throw Error(Error::Kind::Format,
                    "unsupported sample version " + std::to_string(version) + " at byte offset 4");
    const uint8_t mode_byte = r.u8("mode");
    if (mode_byte > 1)
        throw Error(Error::Kind::Format, "bad sample mode at byte offset " + std::to_string(r.offset - 1));
    const MaskMode mode = mode_byte == 0 ? MaskMode::MultiClass : MaskMode::MultiLabel;
    const int classes = r.u16("class count");
    const int h = static_cast<int>(r.u32("height"));
    const int w = static_cast<int>(r.u32("width"));
    const int cin = r.u16("input channels");
    if (classes < 1 || h < 1 || w < 1 || cin < 1)
        throw Error(Error::Kind::Format, "bad sample header dimensions");
    const int hw = h * w;

    Sample sample;
    sample.image = Image::zeros(PixelDomain{h, w}, cin);
    for (int i = 0; i < hw; ++i)
        for (int c = 0; c < cin; ++c)
            sample.image.at(c, i) = static_cast<double>(r.f32("image data"));
    if (mode == MaskMode::MultiClass) {
        sample.mask = Mask::multi_class(PixelDomain{h, w}, classes);
        r.need(static_cast<size_t>(hw), "mask data");
        for (int i = 0; i < hw; ++i) {
            const uint8_t v = static_cast<uint8_t>(r.bytes[r.offset + i]);
            if (v >= classes)
                throw Error(Error::Kind::Format, "mask label out of range at byte offset " +
                                                     std::to_string(r.offset + i));
            sample.mask.labels[i] = v;
        }
        r.offset += static_cast<size_t>(hw);
    } else {
        sample.mask = Mask::multi_label(PixelDomain{h, w}, classes);
        const int plane_bytes = (hw + 7) / 8;
        for (int c = 0; c < classes; ++c) {
            r.need(static_cast<size_t>(plane_bytes), "mask plane");
            for (int i = 0; i < hw; ++i)
                sample.mask.labels[static_cast<size_t>(c) * hw + i] =
                    (static_cast<uint8_t>(r.bytes[r.offset + i / 8]) >> (i % 8)) & 1;
            r.offset += static_cast<size_t>(plane_bytes);
        }
    }
    if (r.offset != r.bytes.size())
        throw Error(Error::Kind::Format,
                    "trailing bytes in sample file at byte offset " + std::to_string(r.offset));
    return sample;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "psmp-dataset-v1";
    manifest["mode"] = ds.spec.mode == MaskMode::MultiClass ? "multi_class" : "multi_label";
    manifest["classes"] = ds.spec.mask_classes();
    manifest["height"] = ds.spec.height;
    manifest["width"] = ds.spec.width;
    manifest["master_seed"] = ds.spec.master_seed;
    for (Split split : {Split::Train, Split::Val, Split::Test, Split::Qc}) {
        const auto& samples = ds.split(split);
        fs::create_directories(fs::path(dir) / split_name(split));
        nlohmann::json entries = nlohmann::json::array();
        for (size_t i = 0; i < samples.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "%05zu.psmp", i);
            const std::string rel = std::string(split_name(split)) + "/" + name;
            write_sample((fs::path(dir) / rel).string(), samples[i]);
            entries.push_back({{"file", rel}, {"id", samples[i].id}});
        }
        manifest["splits"][split_name(split)] = entries;
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw Error(Error::Kind::Io, "cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw Error(Error::Kind::Io, "cannot open manifest.json in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, std::string("bad manifest.json: ") + e.what());
    }
    if (manifest.value("format", "") != "psmp-dataset-v1")
        throw Error(Error::Kind::Format, "manifest.json has unknown format tag");
    Dataset ds;
    ds.spec.mode = manifest.at("mode") == "multi_label" ? MaskMode::MultiLabel : MaskMode::MultiClass;
    ds.spec.height = manifest.at("height").get<int>();
    ds.spec.width = manifest.at("width").get<int>();
    ds.spec.master_seed = manifest.at("master_seed").get<uint64_t>();
    const int classes = manifest.at("classes").get<int>();
    ds.spec.fg_classes = ds.spec.mode == MaskMode::MultiClass ? classes - 1 : classes;
    for (Split split : {Split::Train, Split::Val, Split::Test, Split::Qc}) {
        auto& out = ds.split(split);
        for (const auto& entry : manifest.at("splits").at(split_name(split))) {
            Sample s = read_sample((fs::path(dir) / entry.at("file").get<std::string>()).string());
            s.id = entry.at("id").get<uint64_t>();
            out.push_back(std::move(s));
        }
    }
    ds.spec.train_count = static_cast<int>(ds.train.size());
    ds.spec.val_count = static_cast<int>(ds.val.size());
    ds.spec.test_count = static_cast<int>(ds.test.size());
    ds.spec.qc_count = static_cast<int>(ds.qc.size());
    return ds;
}

}  // namespace prefseg
