#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefseg/grid.hpp"

namespace prefseg {

enum class Split : uint8_t { Train = 0, Val = 1, Test = 2, Qc = 3 };

const char* split_name(Split s);

// Synthetic desk-scale segmentation tasks.
//   MultiClass: mutually exclusive nested structures per sample - one free
//     ellipse blob (class 1) and a ring (class 2) enclosing a disk (class 3),
//     over background class 0.
//   MultiLabel: overlappable structures of distinct scales - a large ellipse
//     (class 0), a medium ellipse (class 1) and a small thin bar (class 2).
// Images are one grayscale channel: per-class intensity plus additive
// Gaussian noise, quantized to float32 so sample files round-trip bit-exactly.
struct DatasetSpec {
    MaskMode mode = MaskMode::MultiClass;
    int fg_classes = 3;
    int height = 48;
    int width = 48;
    int train_count = 200;
    int val_count = 40;
    int test_count = 40;
    int qc_count = 20;
    double noise_sigma = 0.10;
    double background_intensity = 0.15;
    std::vector<double> class_intensities;  // one per fg class; defaults if empty
    uint64_t master_seed = 7;

    // fractions of min(height,width); checked for feasibility
    double min_size_frac = 0.10;
    double max_size_frac = 0.30;

    int mask_classes() const { return mode == MaskMode::MultiClass ? fg_classes + 1 : fg_classes; }
    void validate() const;
};

struct Sample {
    uint64_t id = 0;
    Image image;
    Mask mask;
};

struct Dataset {
    DatasetSpec spec;
    std::vector<Sample> train, val, test, qc;

    const std::vector<Sample>& split(Split s) const;
    std::vector<Sample>& split(Split s);
};

// Pure functions of (spec, split, index); noise and geometry streams are
// derived from the master seed so splits are disjoint by construction.
Sample make_sample(const DatasetSpec& spec, Split split, int index);
Sample make_clean_sample(const DatasetSpec& spec, Split split, int index);  // no noise
Dataset generate(const DatasetSpec& spec);

// PSMP sample file:
//   magic "PSMP", version u32, mode u8, C u16, H u32, W u32, Cin u16,
//   image as little-endian float32 row-major H x W x Cin (interleaved),
//   mask as one u8 per pixel (multi-class) or bit-packed class planes
//   (multi-label, LSB-first within each byte, ceil(H*W/8) bytes per class).
void write_sample(const std::string& path, const Sample& sample);
Sample read_sample(const std::string& path);

// Writes all splits under dir/<split>/<index>.psmp plus dir/manifest.json.
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

}  // namespace prefseg
