#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "prefseg/common.hpp"

namespace prefseg {

// Spatial pixel domain. |domain| is the Omega of all per-pixel averages.
struct PixelDomain {
    int height = 0;
    int width = 0;

    int size() const { return height * width; }
    bool operator==(const PixelDomain&) const = default;
};

enum class MaskMode : uint8_t { MultiClass = 0, MultiLabel = 1 };

// Dense segmentation mask.
//   MultiClass: labels has H*W entries, each a class id in [0, num_classes).
//               Class 0 is background.
//   MultiLabel: labels has num_classes * H*W entries in {0, 1}, stored as
//               class-major planes (plane c starts at c*H*W). Every class is
//               a foreground structure; there is no background plane.
struct Mask {
    PixelDomain domain;
    MaskMode mode = MaskMode::MultiClass;
    int num_classes = 0;
    std::vector<uint8_t> labels;

    static Mask multi_class(PixelDomain d, int num_classes);
    static Mask multi_label(PixelDomain d, int num_classes);

    // Value of the binary view of class c at spatial index i.
    uint8_t class_bit(int c, int i) const {
        return mode == MaskMode::MultiClass ? static_cast<uint8_t>(labels[i] == c)
                                            : labels[static_cast<size_t>(c) * domain.size() + i];
    }

    bool operator==(const Mask&) const = default;
};

// Dense model logits, class-major planes (C x H x W), always doubles.
struct LogitMap {
    PixelDomain domain;
    int num_classes = 0;
    std::vector<double> values;

    static LogitMap zeros(PixelDomain d, int num_classes);

    double at(int c, int i) const { return values[static_cast<size_t>(c) * domain.size() + i]; }
    double& at(int c, int i) { return values[static_cast<size_t>(c) * domain.size() + i]; }
};

// Dense input image, channel-major planes (Cin x H x W). The sample file
// format interleaves channels; the codec converts at the boundary.
struct Image {
    PixelDomain domain;
    int channels = 0;
    std::vector<double> values;

    static Image zeros(PixelDomain d, int channels) {
        return Image{d, channels, std::vector<double>(static_cast<size_t>(d.size()) * channels, 0.0)};
    }

    double at(int c, int i) const { return values[static_cast<size_t>(c) * domain.size() + i]; }
    double& at(int c, int i) { return values[static_cast<size_t>(c) * domain.size() + i]; }
};

// Pixels on which a preference pair (y+, y-) disagrees. For multi-label
// masks the region is per class and class_index records which one.
struct DisagreementRegion {
    std::vector<int> pixels;  // row-major spatial indices, ascending
    std::optional<int> class_index;

    int size() const { return static_cast<int>(pixels.size()); }
};

enum class DeltaNormalization { Global, Region };

// Throws Error(Shape) unless a and b share domain, mode and class count.
void check_compatible(const Mask& a, const Mask& b);
void check_compatible(const LogitMap& z, const Mask& y);

// Intersection-over-union.
//
// Per-class score (class_index given): |A na B| / |A u B| of that class's
// binary view; 1.0 when both foregrounds are empty, 0.0 when exactly one is.
// Whole-mask score (class_index absent): mean of per-class IoU over the
// foreground classes present in either mask (multi-class skips background,
// class id 0); 1.0 when no foreground class is present in either mask.
double iou(const Mask& a, const Mask& b, std::optional<int> class_index = std::nullopt);

// Per-pixel averaged log-likelihood of a mask under the logits:
//   multi-class:  (1/|Omega|) sum_i log softmax(z[:,i])[y_i]
//   multi-label:  (1/|Omega|) sum_i log Bern(y_{i,c}; sigmoid(z[c,i])),
//                 class_index required.
// Softmax uses log-sum-exp stabilization; Bernoulli terms use the softplus
// form. Accumulation is in doubles in row-major pixel order.
double log_likelihood(const LogitMap& z, const Mask& y, std::optional<int> class_index = std::nullopt);

// The set R = {i : y+_i != y-_i}. Multi-label masks compare a single class
// plane (class_index required); multi-class masks compare whole labels.
DisagreementRegion disagreement_region(const Mask& y_plus, const Mask& y_minus,
                                       std::optional<int> class_index = std::nullopt);

// Relative log-likelihood ratio Delta of a preference pair, summed over the
// disagreement region only and divided by |Omega| (Global) or |R| (Region).
// Agreement pixels are never touched, so they contribute exactly zero.
// Region normalization with an empty R throws Error(DegeneratePair).
double delta_pair(const LogitMap& z, const Mask& y_plus, const Mask& y_minus,
                  DeltaNormalization normalization, std::optional<int> class_index = std::nullopt);

// Same, but with R precomputed (used by the loss module so that policy and
// reference sums share one region).
double delta_pair_over(const LogitMap& z, const Mask& y_plus, const Mask& y_minus,
                       const DisagreementRegion& region, DeltaNormalization normalization);

// Per-pixel log-likelihood ratio delta_i = l_i(y+_i) - l_i(y-_i) at a pixel
// of R. The softmax normalizer (multi-class) and the Bernoulli pairing
// (multi-label) cancel algebraically, leaving a plain logit difference; this
// form keeps agreement-pixel cancellation exact in floating point.
double per_pixel_delta(const LogitMap& z, const Mask& y_plus, const Mask& y_minus,
                       std::optional<int> class_index, int pixel);

}  // namespace prefseg
