#include "prefseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "prefseg/rng.hpp"

namespace prefseg {

namespace {
constexpr double kLeakySlope = 0.01;
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

Tensor Tensor::zeros(std::vector<int> dims) {
    Tensor t;
    t.dims = std::move(dims);
    int64_t n = 1;
    for (int d : t.dims) n *= d;
    t.data.assign(static_cast<size_t>(n), 0.0);
    return t;
}

void zero_all(ParamSet& p) {
    for (Tensor& t : p) std::fill(t.data.begin(), t.data.end(), 0.0);
}

ParamSet zeros_like(const ParamSet& p) {
    ParamSet out;
    out.reserve(p.size());
    for (const Tensor& t : p) out.push_back(Tensor::zeros(t.dims));
    return out;
}

void add_scaled(ParamSet& acc, const ParamSet& g, double scale) {
    for (size_t k = 0; k < acc.size(); ++k) {
        double* a = acc[k].data.data();
        const double* b = g[k].data.data();
        const size_t n = acc[k].data.size();
        for (size_t i = 0; i < n; ++i) a[i] += scale * b[i];
    }
}

void scale_all(ParamSet& p, double scale) {
    for (Tensor& t : p)
        for (double& v : t.data) v *= scale;
}

bool congruent(const ParamSet& a, const ParamSet& b) {
    if (a.size() != b.size()) return false;
    for (size_t k = 0; k < a.size(); ++k)
        if (a[k].dims != b[k].dims) return false;
    return true;
}

bool all_finite(const ParamSet& p) {
    for (const Tensor& t : p)
        for (double v : t.data)
            if (!std::isfinite(v)) return false;
    return true;
}

uint64_t content_hash(const ParamSet& p) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over raw bytes
    auto feed = [&h](const void* ptr, size_t n) {
        const auto* b = static_cast<const unsigned char*>(ptr);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const Tensor& t : p) {
        feed(t.dims.data(), t.dims.size() * sizeof(int));
        feed(t.data.data(), t.data.size() * sizeof(double));
    }
    return h;
}

std::string ArchDescriptor::to_json_text() const {
    nlohmann::json j;
    j["mode"] = mode == MaskMode::MultiClass ? "multi_class" : "multi_label";
    j["in_channels"] = in_channels;
    j["num_classes"] = num_classes;
    j["enc1"] = enc1;
    j["enc2"] = enc2;
    j["bottleneck"] = bottleneck;
    j["dropout_rate"] = dropout_rate;
    return j.dump();
}

ArchDescriptor ArchDescriptor::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Error::Kind::Format, std::string("bad architecture descriptor: ") + e.what());
    }
    ArchDescriptor a;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "multi_class")
        a.mode = MaskMode::MultiClass;
    else if (mode == "multi_label")
        a.mode = MaskMode::MultiLabel;
    else
        throw Error(Error::Kind::Format, "bad architecture descriptor mode: " + mode);
    a.in_channels = j.at("in_channels").get<int>();
    a.num_classes = j.at("num_classes").get<int>();
    a.enc1 = j.at("enc1").get<int>();
    a.enc2 = j.at("enc2").get<int>();
    a.bottleneck = j.at("bottleneck").get<int>();
    a.dropout_rate = j.at("dropout_rate").get<double>();
    return a;
}

namespace {

std::vector<std::vector<int>> tensor_shapes(const ArchDescriptor& a) {
    return {
        {a.enc1, a.in_channels, 3, 3},    {a.enc1},
        {a.enc2, a.enc1, 3, 3},           {a.enc2},
        {a.bottleneck, a.enc2, 3, 3},     {a.bottleneck},
        {a.enc2, a.bottleneck + a.enc2, 3, 3}, {a.enc2},
        {a.enc1, a.enc2 + a.enc1, 3, 3},  {a.enc1},
        {a.num_classes, a.enc1, 1, 1},    {a.num_classes},
    };
}

void conv3x3_forward(const double* in, int cin, int h, int w, const double* wgt,
                     const double* bias, int cout, double* out) {
    const int hw = h * w;
    for (int co = 0; co < cout; ++co) std::fill(out + co * hw, out + (co + 1) * hw, bias[co]);
    for (int co = 0; co < cout; ++co) {
        double* op0 = out + static_cast<size_t>(co) * hw;
        for (int ci = 0; ci < cin; ++ci) {
            const double* ip0 = in + static_cast<size_t>(ci) * hw;
            const double* wp = wgt + (static_cast<size_t>(co) * cin + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = w - std::max(0, dx);
                    const double wv = wp[ky * 3 + kx];
                    for (int y = y0; y < y1; ++y) {
                        double* op = op0 + y * w;
                        const double* ip = ip0 + (y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) op[x] += wv * ip[x];
                    }
                }
            }
        }
    }
}

// Accumulates input/weight/bias gradients of the 3x3 convolution.
void conv3x3_backward(const double* in, int cin, int h, int w, const double* wgt, int cout,
                      const double* dout, double* din, double* dwgt, double* dbias) {
    const int hw = h * w;
    for (int co = 0; co < cout; ++co) {
        const double* gp0 = dout + static_cast<size_t>(co) * hw;
        double acc_b = 0.0;
        for (int i = 0; i < hw; ++i) acc_b += gp0[i];
        dbias[co] += acc_b;
        for (int ci = 0; ci < cin; ++ci) {
            const double* ip0 = in + static_cast<size_t>(ci) * hw;
            double* dp0 = din ? din + static_cast<size_t>(ci) * hw : nullptr;
            const double* wp = wgt + (static_cast<size_t>(co) * cin + ci) * 9;
            double* dwp = dwgt + (static_cast<size_t>(co) * cin + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = h - std::max(0, dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = w - std::max(0, dx);
                    const double wv = wp[ky * 3 + kx];
                    double acc_w = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* gp = gp0 + y * w;
                        const double* ip = ip0 + (y + dy) * w + dx;
                        if (dp0) {
                            double* dp = dp0 + (y + dy) * w + dx;
                            for (int x = x0; x < x1; ++x) {
                                acc_w += gp[x] * ip[x];
                                dp[x] += wv * gp[x];
                            }
                        } else {
                            for (int x = x0; x < x1; ++x) acc_w += gp[x] * ip[x];
                        }
                    }
                    dwp[ky * 3 + kx] += acc_w;
                }
            }
        }
    }
}

void leaky_relu_inplace(double* v, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (v[i] < 0.0) v[i] *= kLeakySlope;
}

// dpre = dpost * slope(post); post and pre share sign.
void leaky_relu_backward_inplace(double* grad, const double* post, size_t n) {
    for (size_t i = 0; i < n; ++i)
        if (post[i] <= 0.0) grad[i] *= kLeakySlope;
}

void avgpool2_forward(const double* in, int c, int h, int w, double* out) {
    const int h2 = h / 2, w2 = w / 2;
    for (int ci = 0; ci < c; ++ci) {
        const double* ip = in + static_cast<size_t>(ci) * h * w;
        double* op = out + static_cast<size_t>(ci) * h2 * w2;
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                const double* r0 = ip + (2 * y) * w + 2 * x;
                const double* r1 = r0 + w;
                op[y * w2 + x] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
            }
    }
}

void avgpool2_backward(const double* dout, int c, int h, int w, double* din) {
    const int h2 = h / 2, w2 = w / 2;
    for (int ci = 0; ci < c; ++ci) {
        const double* gp = dout + static_cast<size_t>(ci) * h2 * w2;
        double* dp = din + static_cast<size_t>(ci) * h * w;
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                const double g = 0.25 * gp[y * w2 + x];
                double* r0 = dp + (2 * y) * w + 2 * x;
                double* r1 = r0 + w;
                r0[0] += g;
                r0[1] += g;
                r1[0] += g;
                r1[1] += g;
            }
    }
}

void upsample2_forward(const double* in, int c, int h2, int w2, double* out) {
    const int h = 2 * h2, w = 2 * w2;
    for (int ci = 0; ci < c; ++ci) {
        const double* ip = in + static_cast<size_t>(ci) * h2 * w2;
        double* op = out + static_cast<size_t>(ci) * h * w;
        for (int y = 0; y < h; ++y) {
            const double* src = ip + (y / 2) * w2;
            double* dst = op + y * w;
            for (int x = 0; x < w; ++x) dst[x] = src[x / 2];
        }
    }
}

void upsample2_backward(const double* dout, int c, int h2, int w2, double* din) {
    const int h = 2 * h2, w = 2 * w2;
    for (int ci = 0; ci < c; ++ci) {
        const double* gp = dout + static_cast<size_t>(ci) * h * w;
        double* dp = din + static_cast<size_t>(ci) * h2 * w2;
        for (int y = 0; y < h; ++y) {
            const double* src = gp + y * w;
            double* dst = dp + (y / 2) * w2;
            for (int x = 0; x < w; ++x) dst[x / 2] += src[x];
        }
    }
}

}  // namespace

SegmenterParams SegmenterParams::init(const ArchDescriptor& arch, uint64_t seed) {
    if (arch.num_classes < 1 || arch.in_channels < 1)
        throw_shape("architecture needs at least one input channel and one class");
    SegmenterParams p;
    p.arch = arch;
    const auto shapes = tensor_shapes(arch);
    p.tensors.reserve(shapes.size());
    for (size_t k = 0; k < shapes.size(); ++k) {
        Tensor t = Tensor::zeros(shapes[k]);
        if (t.dims.size() == 4) {  // weights: He-normal, fan-in = cin * kh * kw
            Rng rng(Rng::mix(seed, k));
            const double stddev = std::sqrt(2.0 / (t.dims[1] * t.dims[2] * t.dims[3]));
            for (double& v : t.data) v = stddev * rng.next_gaussian();
        }
        p.tensors.push_back(std::move(t));
    }
    return p;
}

LogitMap forward_with_trace(const SegmenterParams& params, const Image& image,
                            DropoutMode dropout, ForwardTrace& trace) {
    const ArchDescriptor& a = params.arch;
    const int h = image.domain.height, w = image.domain.width;
    if (image.channels != a.in_channels) throw_shape("image channel count does not match architecture");
    if (h % 4 != 0 || w % 4 != 0) throw_shape("image height and width must be divisible by 4");
    const int h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
    const int f1 = a.enc1, f2 = a.enc2, f3 = a.bottleneck;
    const ParamSet& t = params.tensors;

    trace.enc1_out.assign(static_cast<size_t>(f1) * h * w, 0.0);
    conv3x3_forward(image.values.data(), a.in_channels, h, w, t[0].data.data(), t[1].data.data(),
                    f1, trace.enc1_out.data());
    leaky_relu_inplace(trace.enc1_out.data(), trace.enc1_out.size());

    trace.pool1.assign(static_cast<size_t>(f1) * h2 * w2, 0.0);
    avgpool2_forward(trace.enc1_out.data(), f1, h, w, trace.pool1.data());

    trace.enc2_out.assign(static_cast<size_t>(f2) * h2 * w2, 0.0);
    conv3x3_forward(trace.pool1.data(), f1, h2, w2, t[2].data.data(), t[3].data.data(), f2,
                    trace.enc2_out.data());
    leaky_relu_inplace(trace.enc2_out.data(), trace.enc2_out.size());

    trace.pool2.assign(static_cast<size_t>(f2) * h4 * w4, 0.0);
    avgpool2_forward(trace.enc2_out.data(), f2, h2, w2, trace.pool2.data());

    trace.bott_out.assign(static_cast<size_t>(f3) * h4 * w4, 0.0);
    conv3x3_forward(trace.pool2.data(), f2, h4, w4, t[4].data.data(), t[5].data.data(), f3,
                    trace.bott_out.data());
    leaky_relu_inplace(trace.bott_out.data(), trace.bott_out.size());

    trace.cat1.assign(static_cast<size_t>(f3 + f2) * h2 * w2, 0.0);
    upsample2_forward(trace.bott_out.data(), f3, h4, w4, trace.cat1.data());
    std::copy(trace.enc2_out.begin(), trace.enc2_out.end(),
              trace.cat1.begin() + static_cast<size_t>(f3) * h2 * w2);

    trace.dec1_out.assign(static_cast<size_t>(f2) * h2 * w2, 0.0);
    conv3x3_forward(trace.cat1.data(), f3 + f2, h2, w2, t[6].data.data(), t[7].data.data(), f2,
                    trace.dec1_out.data());
    leaky_relu_inplace(trace.dec1_out.data(), trace.dec1_out.size());

    trace.cat2.assign(static_cast<size_t>(f2 + f1) * h * w, 0.0);
    upsample2_forward(trace.dec1_out.data(), f2, h2, w2, trace.cat2.data());
    std::copy(trace.enc1_out.begin(), trace.enc1_out.end(),
              trace.cat2.begin() + static_cast<size_t>(f2) * h * w);

    trace.dec2_out.assign(static_cast<size_t>(f1) * h * w, 0.0);
    conv3x3_forward(trace.cat2.data(), f2 + f1, h, w, t[8].data.data(), t[9].data.data(), f1,
                    trace.dec2_out.data());
    leaky_relu_inplace(trace.dec2_out.data(), trace.dec2_out.size());

    trace.dropped = trace.dec2_out;
    trace.drop_keep.clear();
    trace.drop_scale = 1.0;
    if (dropout.enabled && a.dropout_rate > 0.0) {
        Rng rng(Rng::mix(dropout.seed, 0x64726f70ULL));
        trace.drop_keep.resize(trace.dropped.size());
        trace.drop_scale = 1.0 / (1.0 - a.dropout_rate);
        for (size_t i = 0; i < trace.dropped.size(); ++i) {
            trace.drop_keep[i] = rng.next_double() >= a.dropout_rate ? 1 : 0;
            trace.dropped[i] = trace.drop_keep[i] ? trace.dropped[i] * trace.drop_scale : 0.0;
        }
    }

    LogitMap z = LogitMap::zeros(image.domain, a.num_classes);
    const int hw = h * w;
    const double* head_w = t[10].data.data();
    const double* head_b = t[11].data.data();
    for (int co = 0; co < a.num_classes; ++co) {
        double* zp = z.values.data() + static_cast<size_t>(co) * hw;
        std::fill(zp, zp + hw, head_b[co]);
        for (int ci = 0; ci < f1; ++ci) {
            const double wv = head_w[co * f1 + ci];
            const double* ip = trace.dropped.data() + static_cast<size_t>(ci) * hw;
            for (int i = 0; i < hw; ++i) zp[i] += wv * ip[i];
        }
    }
    return z;
}

LogitMap forward(const SegmenterParams& params, const Image& image, DropoutMode dropout) {
    ForwardTrace trace;
    return forward_with_trace(params, image, dropout, trace);
}

ParamSet backward_from_trace(const SegmenterParams& params, const Image& image,
                             const LogitMap& upstream, const ForwardTrace& trace) {
    const ArchDescriptor& a = params.arch;
    const int h = image.domain.height, w = image.domain.width;
    if (upstream.domain != image.domain || upstream.num_classes != a.num_classes)
        throw_shape("upstream gradient shape does not match logits");
    const int h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
    const int f1 = a.enc1, f2 = a.enc2, f3 = a.bottleneck;
    const int hw = h * w;
    const ParamSet& t = params.tensors;
    ParamSet g = zeros_like(t);

    // head (1x1 conv)
    std::vector<double> d_dropped(static_cast<size_t>(f1) * hw, 0.0);
    for (int co = 0; co < a.num_classes; ++co) {
        const double* up = upstream.values.data() + static_cast<size_t>(co) * hw;
        double acc_b = 0.0;
        for (int i = 0; i < hw; ++i) acc_b += up[i];
        g[11].data[co] += acc_b;
        for (int ci = 0; ci < f1; ++ci) {
            const double* ip = trace.dropped.data() + static_cast<size_t>(ci) * hw;
            double* dp = d_dropped.data() + static_cast<size_t>(ci) * hw;
            const double wv = t[10].data[co * f1 + ci];
            double acc_w = 0.0;
            for (int i = 0; i < hw; ++i) {
                acc_w += up[i] * ip[i];
                dp[i] += wv * up[i];
            }
            g[10].data[co * f1 + ci] += acc_w;
        }
    }

    // dropout site
    if (!trace.drop_keep.empty()) {
        for (size_t i = 0; i < d_dropped.size(); ++i)
            d_dropped[i] = trace.drop_keep[i] ? d_dropped[i] * trace.drop_scale : 0.0;
    }

    // dec2
    leaky_relu_backward_inplace(d_dropped.data(), trace.dec2_out.data(), d_dropped.size());
    std::vector<double> d_cat2(static_cast<size_t>(f2 + f1) * hw, 0.0);
    conv3x3_backward(trace.cat2.data(), f2 + f1, h, w, t[8].data.data(), f1, d_dropped.data(),
                     d_cat2.data(), g[8].data.data(), g[9].data.data());

    // split cat2 -> upsampled dec1 | enc1 skip
    std::vector<double> d_dec1(static_cast<size_t>(f2) * h2 * w2, 0.0);
    upsample2_backward(d_cat2.data(), f2, h2, w2, d_dec1.data());
    std::vector<double> d_enc1(d_cat2.begin() + static_cast<size_t>(f2) * hw, d_cat2.end());

    // dec1
    leaky_relu_backward_inplace(d_dec1.data(), trace.dec1_out.data(), d_dec1.size());
    std::vector<double> d_cat1(static_cast<size_t>(f3 + f2) * h2 * w2, 0.0);
    conv3x3_backward(trace.cat1.data(), f3 + f2, h2, w2, t[6].data.data(), f2, d_dec1.data(),
                     d_cat1.data(), g[6].data.data(), g[7].data.data());

    // split cat1 -> upsampled bottleneck | enc2 skip
    std::vector<double> d_bott(static_cast<size_t>(f3) * h4 * w4, 0.0);
    upsample2_backward(d_cat1.data(), f3, h4, w4, d_bott.data());
    std::vector<double> d_enc2(d_cat1.begin() + static_cast<size_t>(f3) * h2 * w2, d_cat1.end());

    // bottleneck
    leaky_relu_backward_inplace(d_bott.data(), trace.bott_out.data(), d_bott.size());
    std::vector<double> d_pool2(static_cast<size_t>(f2) * h4 * w4, 0.0);
    conv3x3_backward(trace.pool2.data(), f2, h4, w4, t[4].data.data(), f3, d_bott.data(),
                     d_pool2.data(), g[4].data.data(), g[5].data.data());

    // pool2 + skip into enc2
    avgpool2_backward(d_pool2.data(), f2, h2, w2, d_enc2.data());
    leaky_relu_backward_inplace(d_enc2.data(), trace.enc2_out.data(), d_enc2.size());
    std::vector<double> d_pool1(static_cast<size_t>(f1) * h2 * w2, 0.0);
    conv3x3_backward(trace.pool1.data(), f1, h2, w2, t[2].data.data(), f2, d_enc2.data(),
                     d_pool1.data(), g[2].data.data(), g[3].data.data());

    // pool1 + skip into enc1; input gradient is not needed
    avgpool2_backward(d_pool1.data(), f1, h, w, d_enc1.data());
    leaky_relu_backward_inplace(d_enc1.data(), trace.enc1_out.data(), d_enc1.size());
    conv3x3_backward(image.values.data(), a.in_channels, h, w, t[0].data.data(), f1, d_enc1.data(),
                     nullptr, g[0].data.data(), g[1].data.data());

    return g;
}

ParamSet backward(const SegmenterParams& params, const Image& image, const LogitMap& upstream,
                  DropoutMode dropout) {
    ForwardTrace trace;
    forward_with_trace(params, image, dropout, trace);
    return backward_from_trace(params, image, upstream, trace);
}

double schedule_multiplier(const ScheduleSpec& spec, int64_t step) {
    if (spec.kind == ScheduleKind::Constant) return 1.0;
    const int64_t total = spec.total_steps;
    if (total <= 0) return 1.0;
    const int64_t warmup = static_cast<int64_t>(spec.warmup_fraction * total + 0.5);
    if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(std::max<int64_t>(1, total - warmup)));
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

OptimizerState OptimizerState::create(OptimizerKind kind, const SegmenterParams& params, double lr,
                                      double weight_decay, ScheduleSpec schedule) {
    OptimizerState s;
    s.kind = kind;
    s.base_lr = lr;
    s.weight_decay = weight_decay;
    s.schedule = schedule;
    s.m = zeros_like(params.tensors);
    s.v = zeros_like(params.tensors);
    return s;
}

void optimizer_step(OptimizerState& state, SegmenterParams& params, const ParamSet& grads) {
    if (!congruent(state.m, params.tensors) || !congruent(grads, params.tensors))
        throw_shape("optimizer state/gradients not congruent with parameters");
    if (!all_finite(grads)) throw Error(Error::Kind::Numeric, "non-finite gradients; step aborted");

    const double lr = state.base_lr * schedule_multiplier(state.schedule, state.step_count);
    const int64_t tstep = ++state.step_count;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(tstep));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(tstep));

    for (size_t k = 0; k < params.tensors.size(); ++k) {
        double* p = params.tensors[k].data.data();
        double* m = state.m[k].data.data();
        double* v = state.v[k].data.data();
        const double* gr = grads[k].data.data();
        const size_t n = params.tensors[k].data.size();
        for (size_t i = 0; i < n; ++i) {
            double gi = gr[i];
            if (state.kind == OptimizerKind::Adam && state.weight_decay != 0.0)
                gi += state.weight_decay * p[i];  // L2-coupled
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.epsilon);
            if (state.kind == OptimizerKind::AdamW) update += state.weight_decay * p[i];
            p[i] -= lr * update;
        }
    }
}

LossAndGrad supervised_loss_grad_logits(const LogitMap& z, const Mask& target) {
    check_compatible(z, target);
    const int n = z.domain.size();
    const int c_count = z.num_classes;
    LossAndGrad out;
    out.grad = LogitMap::zeros(z.domain, c_count);
    double loss = 0.0;
    if (target.mode == MaskMode::MultiClass) {
        std::vector<double> probs(c_count);
        for (int i = 0; i < n; ++i) {
            double zmax = z.at(0, i);
            for (int c = 1; c < c_count; ++c) zmax = std::max(zmax, z.at(c, i));
            double lse = 0.0;
            for (int c = 0; c < c_count; ++c) {
                probs[c] = std::exp(z.at(c, i) - zmax);
                lse += probs[c];
            }
            const int yi = target.labels[i];
            loss -= z.at(yi, i) - zmax - std::log(lse);
            for (int c = 0; c < c_count; ++c)
                out.grad.at(c, i) = (probs[c] / lse - (c == yi ? 1.0 : 0.0)) / n;
        }
        out.loss = loss / n;
    } else {
        const double denom = static_cast<double>(n) * c_count;
        for (int c = 0; c < c_count; ++c) {
            for (int i = 0; i < n; ++i) {
                const double zi = z.at(c, i);
                const double p = 1.0 / (1.0 + std::exp(-zi));
                const double y = target.class_bit(c, i);
                // -log Bern(y; p) in softplus form
                loss += (zi >= 0.0 ? std::log1p(std::exp(-zi)) : -zi + std::log1p(std::exp(zi))) +
                        (1.0 - y) * zi;
                out.grad.at(c, i) = (p - y) / denom;
            }
        }
        out.loss = loss / denom;
    }
    return out;
}

LossAndGrad supervised_loss_and_grad(const SegmenterParams& params, const Image& image,
                                     const Mask& target) {
    const LogitMap z = forward(params, image);
    return supervised_loss_grad_logits(z, target);
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

struct ByteReader {
    std::ifstream in;
    size_t offset = 0;
    explicit ByteReader(const std::string& path) : in(path, std::ios::binary) {}

    void read(void* dst, size_t n, const char* what) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw Error(Error::Kind::Format, std::string("truncated file reading ") + what +
                                                 " at byte offset " + std::to_string(offset));
        offset += n;
    }

    uint32_t u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }

    double f64(const char* what) {
        unsigned char b[8];
        read(b, 8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
};

}  // namespace

void write_checkpoint(const std::string& path, const SegmenterParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(Error::Kind::Io, "cannot open checkpoint for writing: " + path);
    os.write("PSEG", 4);
    put_u32(os, kCheckpointVersion);
    const std::string desc = params.arch.to_json_text();
    put_u32(os, static_cast<uint32_t>(desc.size()));
    os.write(desc.data(), static_cast<std::streamsize>(desc.size()));
    for (const Tensor& t : params.tensors) {
        put_u32(os, static_cast<uint32_t>(t.dims.size()));
        for (int d : t.dims) put_u32(os, static_cast<uint32_t>(d));
        for (double v : t.data) put_f64(os, v);
    }
    if (!os) throw Error(Error::Kind::Io, "write failed: " + path);
}

SegmenterParams read_checkpoint(const std::string& path) {
    ByteReader r(path);
    if (!r.in) throw Error(Error::Kind::Io, "cannot open checkpoint: " + path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "PSEG", 4) != 0)
        throw Error(Error::Kind::Format, "bad checkpoint magic at byte offset 0");
    const uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw Error(Error::Kind::Format,
                    "unsupported checkpoint version " + std::to_string(version) + " at byte offset 4");
    const uint32_t desc_len = r.u32("descriptor length");
    std::string desc(desc_len, '\0');
    r.read(desc.data(), desc_len, "descriptor");

    SegmenterParams p;
    p.arch = ArchDescriptor::from_json_text(desc);
    const auto shapes = tensor_shapes(p.arch);
    p.tensors.reserve(shapes.size());
    for (const auto& expect : shapes) {
        const size_t tensor_at = r.offset;
        const uint32_t rank = r.u32("tensor rank");
        if (rank != expect.size())
            throw Error(Error::Kind::Format, "tensor rank mismatch at byte offset " + std::to_string(tensor_at));
        std::vector<int> dims(rank);
        int64_t count = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            dims[d] = static_cast<int>(r.u32("tensor dim"));
            count *= dims[d];
        }
        if (dims != expect)
            throw Error(Error::Kind::Format,
                        "tensor shape does not match architecture descriptor at byte offset " +
                            std::to_string(tensor_at));
        Tensor t;
        t.dims = dims;
        t.data.resize(static_cast<size_t>(count));
        for (int64_t i = 0; i < count; ++i) t.data[static_cast<size_t>(i)] = r.f64("tensor data");
        p.tensors.push_back(std::move(t));
    }
    return p;
}

}  // namespace prefseg
