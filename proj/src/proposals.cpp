#include "prefseg/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "prefseg/morphology.hpp"
#include "prefseg/rng.hpp"

namespace prefseg {

namespace {

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%+g", v);
    return buf;
}

std::vector<uint8_t> class_view(const Mask& m, int c) {
    const int n = m.domain.size();
    std::vector<uint8_t> v(n);
    for (int i = 0; i < n; ++i) v[i] = m.class_bit(c, i);
    return v;
}

// Writes an edited binary view back into the mask. Multi-class: pixels that
// left the class become background, pixels that joined it are assigned only
// if currently background.
void apply_class_view(Mask& m, int c, const std::vector<uint8_t>& before,
                      const std::vector<uint8_t>& after) {
    const int n = m.domain.size();
    if (m.mode == MaskMode::MultiLabel) {
        const size_t off = static_cast<size_t>(c) * n;
        for (int i = 0; i < n; ++i) m.labels[off + i] = after[i];
        return;
    }
    for (int i = 0; i < n; ++i) {
        if (before[i] && !after[i] && m.labels[i] == c) m.labels[i] = 0;
        if (!before[i] && after[i] && m.labels[i] == 0) m.labels[i] = static_cast<uint8_t>(c);
    }
}

int first_fg_class(const Mask& m) { return m.mode == MaskMode::MultiClass ? 1 : 0; }

}  // namespace

ProposalConfig ProposalConfig::defaults(MaskMode mode) {
    ProposalConfig cfg;
    cfg.budget = 32;
    cfg.mc_passes = 5;
    cfg.tta_transforms = {{IntensityTransform::Kind::Gamma, 0.8},
                          {IntensityTransform::Kind::Gamma, 1.25},
                          {IntensityTransform::Kind::Contrast, 0.9},
                          {IntensityTransform::Kind::Contrast, 1.1}};
    if (mode == MaskMode::MultiClass) {
        cfg.logit_biases = {-1.0, -0.5, 0.5, 1.0};
        cfg.sdf_offsets = {-3.0, -2.0, -1.0, 1.0, 2.0, 3.0};
        cfg.sdf_per_class = false;
    } else {
        cfg.area_scales = {0.55, 0.7, 0.85, 1.15, 1.4, 1.7};
        cfg.sdf_offsets = {-2.0, -1.0, 1.0, 2.0};
        cfg.sdf_per_class = true;
    }
    cfg.compositions = {"cc_fill>sdf+1", "cc_fill>sdf-1", "mc_mean>cc_fill", "fill_holes>sdf+1"};
    return cfg;
}

void ProposalConfig::validate(MaskMode mode) const {
    if (budget < 2) throw Error(Error::Kind::Config, "proposals: budget must be >= 2");
    if (hole_cap < 0.0 || hole_cap > 1.0)
        throw Error(Error::Kind::Config, "proposals: hole_cap must be in [0,1]");
    if (mc_dropout_enabled && mc_passes < 1)
        throw Error(Error::Kind::Config, "proposals: mc_passes must be >= 1");
    if (extent_enabled && mode == MaskMode::MultiClass)
        for (double s : area_scales)
            if (s < 0.0) throw Error(Error::Kind::Config, "proposals: area scales must be >= 0");
    if (compositions_enabled)
        for (const std::string& comp : compositions) {
            size_t pos = 0;
            while (pos <= comp.size()) {
                const size_t next = comp.find('>', pos);
                const std::string step = comp.substr(pos, next == std::string::npos ? next : next - pos);
                if (step != "fill_holes" && step != "cc_fill" && step != "mc_mean" &&
                    !(step.size() > 3 && step.compare(0, 3, "sdf") == 0))
                    throw Error(Error::Kind::Config, "proposals: unknown composition step '" + step + "'");
                if (step == "mc_mean" && !mc_dropout_enabled)
                    throw Error(Error::Kind::Config,
                                "proposals: composition uses mc_mean but mc dropout is disabled");
                if (next == std::string::npos) break;
                pos = next + 1;
            }
        }
}

Mask base_prediction(const LogitMap& z, MaskMode mode) {
    const int n = z.domain.size();
    if (mode == MaskMode::MultiClass) {
        Mask m = Mask::multi_class(z.domain, z.num_classes);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bv = z.at(0, i);
            for (int c = 1; c < z.num_classes; ++c)
                if (z.at(c, i) > bv) {  // strict: ties go to the lowest class id
                    bv = z.at(c, i);
                    best = c;
                }
            m.labels[i] = static_cast<uint8_t>(best);
        }
        return m;
    }
    Mask m = Mask::multi_label(z.domain, z.num_classes);
    for (int c = 0; c < z.num_classes; ++c)
        for (int i = 0; i < n; ++i)
            m.labels[static_cast<size_t>(c) * n + i] = z.at(c, i) > 0.0 ? 1 : 0;  // p > 0.5
    return m;
}

std::vector<double> probability_maps(const LogitMap& z, MaskMode mode) {
    const int n = z.domain.size();
    std::vector<double> probs(z.values.size());
    if (mode == MaskMode::MultiClass) {
        for (int i = 0; i < n; ++i) {
            double zmax = z.at(0, i);
            for (int c = 1; c < z.num_classes; ++c) zmax = std::max(zmax, z.at(c, i));
            double lse = 0.0;
            for (int c = 0; c < z.num_classes; ++c) {
                const double e = std::exp(z.at(c, i) - zmax);
                probs[static_cast<size_t>(c) * n + i] = e;
                lse += e;
            }
            for (int c = 0; c < z.num_classes; ++c) probs[static_cast<size_t>(c) * n + i] /= lse;
        }
    } else {
        for (size_t i = 0; i < probs.size(); ++i) probs[i] = 1.0 / (1.0 + std::exp(-z.values[i]));
    }
    return probs;
}

Mask mask_from_probabilities(const std::vector<double>& probs, PixelDomain d, int num_classes,
                             MaskMode mode) {
    const int n = d.size();
    if (mode == MaskMode::MultiClass) {
        Mask m = Mask::multi_class(d, num_classes);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bv = probs[i];
            for (int c = 1; c < num_classes; ++c) {
                const double v = probs[static_cast<size_t>(c) * n + i];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m.labels[i] = static_cast<uint8_t>(best);
        }
        return m;
    }
    Mask m = Mask::multi_label(d, num_classes);
    for (size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = probs[i] > 0.5 ? 1 : 0;
    return m;
}

Mask topology_edit(const Mask& y, TopologyKind kind, double hole_cap) {
    Mask out = y;
    for (int c = first_fg_class(y); c < y.num_classes; ++c) {
        std::vector<uint8_t> view = class_view(out, c);
        const std::vector<uint8_t> before = view;
        if (kind == TopologyKind::LargestCcThenFill) largest_component_binary(view, y.domain);
        fill_holes_binary(view, y.domain, hole_cap);
        apply_class_view(out, c, before, view);
    }
    return out;
}

McDropoutResult mc_dropout_proposals(const SegmenterParams& params, const Image& image, int passes,
                                     uint64_t seed) {
    if (passes < 1) throw Error(Error::Kind::Config, "mc dropout needs at least one pass");
    const MaskMode mode = params.arch.mode;
    McDropoutResult out;
    out.pass_masks.reserve(passes);
    std::vector<double> mean;
    for (int p = 0; p < passes; ++p) {
        const LogitMap z = forward(params, image, DropoutMode::on(Rng::mix(seed, p)));
        const std::vector<double> probs = probability_maps(z, mode);
        if (mean.empty())
            mean = probs;
        else
            for (size_t i = 0; i < mean.size(); ++i) mean[i] += probs[i];
        out.pass_masks.push_back(mask_from_probabilities(probs, image.domain, params.arch.num_classes, mode));
    }
    for (double& v : mean) v /= passes;
    out.mean_mask = mask_from_probabilities(mean, image.domain, params.arch.num_classes, mode);
    return out;
}

Image apply_intensity_transform(const Image& image, const IntensityTransform& t) {
    Image out = image;
    switch (t.kind) {
        case IntensityTransform::Kind::Gamma:
            for (double& v : out.values) v = v <= 0.0 ? 0.0 : std::pow(v, t.value);
            break;
        case IntensityTransform::Kind::Brightness:
            for (double& v : out.values) v += t.value;
            break;
        case IntensityTransform::Kind::Contrast:
            for (double& v : out.values) v = (v - 0.5) * t.value + 0.5;
            break;
    }
    return out;
}

Mask tta_mean_proposal(const SegmenterParams& params, const Image& image,
                       const std::vector<IntensityTransform>& transforms) {
    if (transforms.empty()) throw Error(Error::Kind::Config, "tta needs at least one transform");
    const MaskMode mode = params.arch.mode;
    std::vector<double> mean;
    for (const IntensityTransform& t : transforms) {
        const LogitMap z = forward(params, apply_intensity_transform(image, t));
        const std::vector<double> probs = probability_maps(z, mode);
        if (mean.empty())
            mean = probs;
        else
            for (size_t i = 0; i < mean.size(); ++i) mean[i] += probs[i];
    }
    for (double& v : mean) v /= static_cast<double>(transforms.size());
    return mask_from_probabilities(mean, image.domain, params.arch.num_classes, mode);
}

std::vector<uint8_t> area_quantile_threshold(const std::vector<double>& prob, PixelDomain d,
                                             double scale, int anchor_area) {
    const int n = d.size();
    if (scale < 0.0) throw Error(Error::Kind::Config, "area scale must be >= 0");
    int target = static_cast<int>(std::llround(scale * anchor_area));
    target = std::clamp(target, 0, n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&prob](int a, int b) { return prob[a] > prob[b]; });
    std::vector<uint8_t> out(n, 0);
    for (int k = 0; k < target; ++k) out[order[k]] = 1;
    return out;
}

Mask logit_bias_proposal(const LogitMap& z, int class_index, double bias) {
    if (class_index < 0 || class_index >= z.num_classes) throw_shape("class index out of range");
    LogitMap shifted = z;
    const int n = z.domain.size();
    for (int i = 0; i < n; ++i) shifted.at(class_index, i) += bias;
    return base_prediction(shifted, MaskMode::MultiClass);
}

Mask sdf_offset_proposal(const Mask& y, double offset, std::optional<int> class_index) {
    Mask out = y;
    const int lo = class_index ? *class_index : first_fg_class(y);
    const int hi = class_index ? *class_index + 1 : y.num_classes;
    for (int c = lo; c < hi; ++c) {
        const std::vector<uint8_t> before = class_view(y, c);
        const std::vector<double> sd = signed_distance(before, y.domain);
        std::vector<uint8_t> after(before.size());
        for (size_t i = 0; i < after.size(); ++i) after[i] = sd[i] <= offset ? 1 : 0;
        apply_class_view(out, c, before, after);
    }
    return out;
}

namespace {

struct Candidate {
    Proposal proposal;
    int family;  // 0 anchor .. 6 compositions
};

Mask run_composition(const std::string& spec, const Mask& anchor, const Mask* mc_mean,
                     double hole_cap) {
    Mask cur = anchor;
    size_t pos = 0;
    while (pos <= spec.size()) {
        const size_t next = spec.find('>', pos);
        const std::string step = spec.substr(pos, next == std::string::npos ? next : next - pos);
        if (step == "mc_mean") {
            cur = *mc_mean;
        } else if (step == "cc_fill") {
            cur = topology_edit(cur, TopologyKind::LargestCcThenFill, hole_cap);
        } else if (step == "fill_holes") {
            cur = topology_edit(cur, TopologyKind::FillHoles, hole_cap);
        } else {  // sdf<offset>
            cur = sdf_offset_proposal(cur, std::stod(step.substr(3)));
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return cur;
}

}  // namespace

Slate generate_slate_from(const SegmenterParams& params, const LogitMap& anchor_logits,
                          bool keep_logits, const Image& image, const ProposalConfig& cfg,
                          uint64_t seed, uint64_t image_id) {
    const MaskMode mode = params.arch.mode;
    cfg.validate(mode);
    const Mask anchor = base_prediction(anchor_logits, mode);

    std::vector<Candidate> candidates;
    candidates.push_back({Proposal{anchor, "base", std::nullopt}, 0});

    if (cfg.topology_enabled) {
        candidates.push_back(
            {Proposal{topology_edit(anchor, TopologyKind::FillHoles, cfg.hole_cap), "fill_holes", {}}, 1});
        candidates.push_back(
            {Proposal{topology_edit(anchor, TopologyKind::LargestCcThenFill, cfg.hole_cap), "cc_fill", {}}, 1});
    }

    std::optional<Mask> mc_mean;
    if (cfg.mc_dropout_enabled) {
        McDropoutResult mc = mc_dropout_proposals(params, image, cfg.mc_passes, Rng::mix(seed, 0x6d63ULL));
        for (int p = 0; p < static_cast<int>(mc.pass_masks.size()); ++p)
            candidates.push_back(
                {Proposal{std::move(mc.pass_masks[p]), "mc[" + std::to_string(p) + "]", {}}, 2});
        mc_mean = std::move(mc.mean_mask);
        candidates.push_back({Proposal{*mc_mean, "mc_mean", {}}, 2});
    }

    if (cfg.tta_enabled && !cfg.tta_transforms.empty())
        candidates.push_back({Proposal{tta_mean_proposal(params, image, cfg.tta_transforms), "tta_mean", {}}, 3});

    if (cfg.extent_enabled) {
        if (mode == MaskMode::MultiClass) {
            for (double bias : cfg.logit_biases)
                for (int c = 1; c < params.arch.num_classes; ++c)
                    candidates.push_back({Proposal{logit_bias_proposal(anchor_logits, c, bias),
                                                   "bias[c" + std::to_string(c) + "," + format_value(bias) + "]",
                                                   {}},
                                          4});
        } else if (!cfg.area_scales.empty()) {
            const std::vector<double> probs = probability_maps(anchor_logits, mode);
            const int n = image.domain.size();
            for (double scale : cfg.area_scales) {
                Mask m = Mask::multi_label(image.domain, params.arch.num_classes);
                for (int c = 0; c < params.arch.num_classes; ++c) {
                    int anchor_area = 0;
                    for (int i = 0; i < n; ++i) anchor_area += anchor.labels[static_cast<size_t>(c) * n + i];
                    const std::vector<double> plane(probs.begin() + static_cast<size_t>(c) * n,
                                                    probs.begin() + static_cast<size_t>(c + 1) * n);
                    const std::vector<uint8_t> sel =
                        area_quantile_threshold(plane, image.domain, scale, anchor_area);
                    std::copy(sel.begin(), sel.end(), m.labels.begin() + static_cast<size_t>(c) * n);
                }
                candidates.push_back({Proposal{std::move(m), "area[x" + format_value(scale).substr(1) + "]", {}}, 4});
            }
        }
    }

    if (cfg.sdf_enabled) {
        for (double offset : cfg.sdf_offsets) {
            if (cfg.sdf_per_class) {
                for (int c = first_fg_class(anchor); c < anchor.num_classes; ++c)
                    candidates.push_back({Proposal{sdf_offset_proposal(anchor, offset, c),
                                                   "sdf[c" + std::to_string(c) + "," + format_value(offset) + "]",
                                                   {}},
                                          5});
            } else {
                candidates.push_back(
                    {Proposal{sdf_offset_proposal(anchor, offset), "sdf[" + format_value(offset) + "]", {}}, 5});
            }
        }
    }

    if (cfg.compositions_enabled)
        for (const std::string& comp : cfg.compositions)
            candidates.push_back(
                {Proposal{run_composition(comp, anchor, mc_mean ? &*mc_mean : nullptr, cfg.hole_cap),
                          "comp:" + comp,
                          {}},
                 6});

    // drop bit-identical duplicates, keeping the first occurrence
    std::vector<Candidate> distinct;
    distinct.reserve(candidates.size());
    for (Candidate& c : candidates) {
        bool dup = false;
        for (const Candidate& kept : distinct)
            if (kept.proposal.mask == c.proposal.mask) {
                dup = true;
                break;
            }
        if (!dup) distinct.push_back(std::move(c));
    }
    if (distinct.size() < 2)
        throw Error(Error::Kind::DegenerateSlate, "slate has fewer than two distinct proposals");

    // reduce to K by round-robin over families 1..6, anchor first
    Slate slate;
    slate.image_id = image_id;
    if (static_cast<int>(distinct.size()) <= cfg.budget) {
        for (Candidate& c : distinct) slate.proposals.push_back(std::move(c.proposal));
    } else {
        std::vector<std::vector<int>> by_family(7);
        for (int idx = 0; idx < static_cast<int>(distinct.size()); ++idx)
            by_family[distinct[idx].family].push_back(idx);
        std::vector<int> chosen;
        chosen.push_back(by_family[0].front());
        std::vector<size_t> cursor(7, 0);
        cursor[0] = by_family[0].size();
        while (static_cast<int>(chosen.size()) < cfg.budget) {
            bool advanced = false;
            for (int fam = 1; fam <= 6 && static_cast<int>(chosen.size()) < cfg.budget; ++fam) {
                if (cursor[fam] < by_family[fam].size()) {
                    chosen.push_back(by_family[fam][cursor[fam]++]);
                    advanced = true;
                }
            }
            if (!advanced) break;
        }
        std::sort(chosen.begin(), chosen.end());  // keep generation order
        for (int idx : chosen) slate.proposals.push_back(std::move(distinct[idx].proposal));
    }
    if (keep_logits) slate.proposals.front().logits = anchor_logits;
    return slate;
}

Slate generate_slate(const SegmenterParams& params, bool keep_logits, const Image& image,
                     const ProposalConfig& cfg, uint64_t seed, uint64_t image_id) {
    const LogitMap z = forward(params, image);
    return generate_slate_from(params, z, keep_logits, image, cfg, seed, image_id);
}

}  // namespace prefseg
