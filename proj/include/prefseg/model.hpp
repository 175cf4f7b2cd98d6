#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefseg/grid.hpp"

namespace prefseg {

// Dense double tensor; dims are row-major.
struct Tensor {
    std::vector<int> dims;
    std::vector<double> data;

    static Tensor zeros(std::vector<int> dims);
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

// One tensor per parameter, in the fixed order documented below. The same
// container shape carries gradients and optimizer moments.
using ParamSet = std::vector<Tensor>;

void zero_all(ParamSet& p);
ParamSet zeros_like(const ParamSet& p);
// acc += scale * g, element-wise, in parameter order.
void add_scaled(ParamSet& acc, const ParamSet& g, double scale);
void scale_all(ParamSet& p, double scale);
bool congruent(const ParamSet& a, const ParamSet& b);
bool all_finite(const ParamSet& p);
uint64_t content_hash(const ParamSet& p);

// Encoder-decoder architecture:
//   enc1: conv3x3(in -> f1), leaky relu          [H   x W  ]
//   pool 2x2 average                             [H/2 x W/2]
//   enc2: conv3x3(f1 -> f2), leaky relu          [H/2 x W/2]
//   pool 2x2 average                             [H/4 x W/4]
//   bott: conv3x3(f2 -> f3), leaky relu          [H/4 x W/4]
//   up x2 nearest, concat enc2, conv3x3 -> f2, leaky relu
//   up x2 nearest, concat enc1, conv3x3 -> f1, leaky relu
//   dropout (single site), conv1x1(f1 -> C) head -> logits
// Input height and width must be divisible by 4.
struct ArchDescriptor {
    MaskMode mode = MaskMode::MultiClass;
    int in_channels = 1;
    int num_classes = 0;  // logit channels C
    int enc1 = 8;
    int enc2 = 16;
    int bottleneck = 32;
    double dropout_rate = 0.5;

    bool operator==(const ArchDescriptor&) const = default;
    std::string to_json_text() const;
    static ArchDescriptor from_json_text(const std::string& text);
};

// Parameter tensor order:
//   0 enc1_w [f1,cin,3,3]   1 enc1_b [f1]
//   2 enc2_w [f2,f1,3,3]    3 enc2_b [f2]
//   4 bott_w [f3,f2,3,3]    5 bott_b [f3]
//   6 dec1_w [f2,f3+f2,3,3] 7 dec1_b [f2]
//   8 dec2_w [f1,f2+f1,3,3] 9 dec2_b [f1]
//  10 head_w [C,f1,1,1]    11 head_b [C]
struct SegmenterParams {
    ArchDescriptor arch;
    ParamSet tensors;

    // He-normal weights, zero biases.
    static SegmenterParams init(const ArchDescriptor& arch, uint64_t seed);
};

struct DropoutMode {
    bool enabled = false;
    uint64_t seed = 0;

    static DropoutMode off() { return {}; }
    static DropoutMode on(uint64_t seed) { return {true, seed}; }
};

// Cached activations of one forward pass, consumed by backward_from_trace.
struct ForwardTrace {
    std::vector<double> enc1_out, pool1, enc2_out, pool2, bott_out;
    std::vector<double> cat1, dec1_out, cat2, dec2_out, dropped;
    std::vector<uint8_t> drop_keep;  // empty when dropout is off
    double drop_scale = 1.0;
};

LogitMap forward(const SegmenterParams& params, const Image& image,
                 DropoutMode dropout = DropoutMode::off());
LogitMap forward_with_trace(const SegmenterParams& params, const Image& image,
                            DropoutMode dropout, ForwardTrace& trace);

// Exact analytic gradient of the forward map contracted with the upstream
// logit gradient. The standalone overload replays the forward pass (with the
// same dropout mode) to rebuild the trace.
ParamSet backward(const SegmenterParams& params, const Image& image, const LogitMap& upstream,
                  DropoutMode dropout = DropoutMode::off());
ParamSet backward_from_trace(const SegmenterParams& params, const Image& image,
                             const LogitMap& upstream, const ForwardTrace& trace);

enum class OptimizerKind : uint8_t { Adam, AdamW };
enum class ScheduleKind : uint8_t { Constant, CosineWarmup };

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::Constant;
    int total_steps = 0;            // CosineWarmup only
    double warmup_fraction = 0.05;  // linear warmup over the first fraction
};

// Multiplier for a 0-based step index. Warmup ramps (step+1)/warmup_steps;
// the cosine phase reaches exactly 0 at step == total_steps.
double schedule_multiplier(const ScheduleSpec& spec, int64_t step);

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Adam;
    double base_lr = 1e-3;
    double weight_decay = 0.0;  // decoupled for AdamW, L2-coupled for Adam
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    ScheduleSpec schedule;
    int64_t step_count = 0;
    ParamSet m, v;

    static OptimizerState create(OptimizerKind kind, const SegmenterParams& params, double lr,
                                 double weight_decay, ScheduleSpec schedule = {});
};

// One Adam/AdamW step with bias correction. Non-finite gradients abort the
// step with Error(Numeric); params and state are left untouched.
void optimizer_step(OptimizerState& state, SegmenterParams& params, const ParamSet& grads);

struct LossAndGrad {
    double loss = 0.0;
    LogitMap grad;  // d loss / d logits
};

// Mean cross-entropy over pixels (multi-class) or mean Bernoulli
// cross-entropy over pixels and channels (multi-label), on given logits.
LossAndGrad supervised_loss_grad_logits(const LogitMap& z, const Mask& target);
// Spec-level wrapper that runs the forward pass itself (dropout off).
LossAndGrad supervised_loss_and_grad(const SegmenterParams& params, const Image& image,
                                     const Mask& target);

// Checkpoint file: "PSEG" magic, u32 version, length-prefixed descriptor
// text, then every tensor as (rank u32, dims u32..., f64 little-endian).
void write_checkpoint(const std::string& path, const SegmenterParams& params);
SegmenterParams read_checkpoint(const std::string& path);

}  // namespace prefseg
