#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prefseg/model.hpp"

namespace prefseg {

struct Proposal {
    Mask mask;
    std::string tag;  // provenance, e.g. "base", "mc[2]", "sdf[-2]", "comp:cc_fill>sdf+1"
    std::optional<LogitMap> logits;
};

struct Slate {
    uint64_t image_id = 0;
    std::vector<Proposal> proposals;  // [0] is always the anchor

    int k() const { return static_cast<int>(proposals.size()); }
    const Mask& anchor() const { return proposals.front().mask; }
};

struct IntensityTransform {
    enum class Kind { Gamma, Brightness, Contrast } kind = Kind::Gamma;
    double value = 1.0;
};

// Proposal families, generated in this fixed order and tag scheme:
//   0 anchor:        "base"
//   1 topology:      "fill_holes", "cc_fill"
//   2 mc dropout:    "mc[0]".."mc[p-1]", "mc_mean"
//   3 tta:           "tta_mean"
//   4 extent:        multi-class "bias[c<ci>,<v>]" (bias-major, class ascending)
//                    multi-label "area[x<scale>]" (config order)
//   5 sdf:           all-class "sdf[<o>]", per-class "sdf[c<ci>,<o>]"
//                    (offset-major, class ascending)
//   6 compositions:  "comp:<spec>" (config order)
struct ProposalConfig {
    int budget = 32;  // K

    bool topology_enabled = true;
    double hole_cap = 0.1;  // hole size cap as fraction of structure area

    bool mc_dropout_enabled = true;
    int mc_passes = 5;

    bool tta_enabled = true;
    std::vector<IntensityTransform> tta_transforms;

    bool extent_enabled = true;
    std::vector<double> area_scales;   // multi-label thresholding
    std::vector<double> logit_biases;  // multi-class class-bias shifts

    bool sdf_enabled = true;
    std::vector<double> sdf_offsets;  // pixels; negative shrinks
    bool sdf_per_class = false;

    bool compositions_enabled = true;
    // steps joined by '>'; vocabulary: fill_holes, cc_fill, mc_mean, sdf<+->o
    std::vector<std::string> compositions;

    static ProposalConfig defaults(MaskMode mode);
    void validate(MaskMode mode) const;
};

enum class TopologyKind { FillHoles, LargestCcThenFill };

// Anchor decode rule: multi-class argmax with ties to the lowest class id;
// multi-label per-channel probability strictly above 0.5 (logit > 0).
Mask base_prediction(const LogitMap& z, MaskMode mode);

// Class probability planes: softmax (multi-class) or per-channel sigmoid.
std::vector<double> probability_maps(const LogitMap& z, MaskMode mode);
Mask mask_from_probabilities(const std::vector<double>& probs, PixelDomain d, int num_classes,
                             MaskMode mode);

// Per-class topology cleanup. Multi-class edits only ever move pixels
// between a foreground class and background; classes are processed in
// ascending id order.
Mask topology_edit(const Mask& y, TopologyKind kind, double hole_cap);

struct McDropoutResult {
    std::vector<Mask> pass_masks;
    Mask mean_mask;  // decode of the arithmetic mean probability map
};
McDropoutResult mc_dropout_proposals(const SegmenterParams& params, const Image& image, int passes,
                                     uint64_t seed);

Mask tta_mean_proposal(const SegmenterParams& params, const Image& image,
                       const std::vector<IntensityTransform>& transforms);
Image apply_intensity_transform(const Image& image, const IntensityTransform& t);

// Keeps the top round(scale * anchor_area) pixels of one probability plane,
// ordered by (probability desc, row-major index asc). Requested areas beyond
// the grid are clamped.
std::vector<uint8_t> area_quantile_threshold(const std::vector<double>& prob, PixelDomain d,
                                             double scale, int anchor_area);

Mask logit_bias_proposal(const LogitMap& z, int class_index, double bias);

// Boundary shift by signed Euclidean distance: new foreground is
// {i : sd(i) <= offset}. Multi-class expansion claims only background pixels
// (ascending class order); shrunk pixels fall back to background.
Mask sdf_offset_proposal(const Mask& y, double offset, std::optional<int> class_index = std::nullopt);

// Full slate: anchor first, families in the documented order, bit-identical
// duplicates dropped (first kept), then reduced to at most K proposals by
// round-robin over families (anchor always kept). Throws
// Error(DegenerateSlate) when fewer than two distinct proposals remain.
// keep_logits stores the anchor logits in the slate for downstream losses.
Slate generate_slate(const SegmenterParams& params, bool keep_logits, const Image& image,
                     const ProposalConfig& cfg, uint64_t seed, uint64_t image_id = 0);
// Variant reusing an anchor forward pass already computed by the caller.
Slate generate_slate_from(const SegmenterParams& params, const LogitMap& anchor_logits,
                          bool keep_logits, const Image& image, const ProposalConfig& cfg,
                          uint64_t seed, uint64_t image_id = 0);

}  // namespace prefseg
