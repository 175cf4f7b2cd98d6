#include "prefseg/grid.hpp"

#include <algorithm>
#include <cmath>

namespace prefseg {

Mask Mask::multi_class(PixelDomain d, int num_classes) {
    Mask m;
    m.domain = d;
    m.mode = MaskMode::MultiClass;
    m.num_classes = num_classes;
    m.labels.assign(static_cast<size_t>(d.size()), 0);
    return m;
}

Mask Mask::multi_label(PixelDomain d, int num_classes) {
    Mask m;
    m.domain = d;
    m.mode = MaskMode::MultiLabel;
    m.num_classes = num_classes;
    m.labels.assign(static_cast<size_t>(d.size()) * num_classes, 0);
    return m;
}

LogitMap LogitMap::zeros(PixelDomain d, int num_classes) {
    LogitMap z;
    z.domain = d;
    z.num_classes = num_classes;
    z.values.assign(static_cast<size_t>(d.size()) * num_classes, 0.0);
    return z;
}

void check_compatible(const Mask& a, const Mask& b) {
    if (a.domain != b.domain) throw_shape("mask domains differ");
    if (a.mode != b.mode) throw_shape("mask modes differ");
    if (a.num_classes != b.num_classes) throw_shape("mask class counts differ");
}

void check_compatible(const LogitMap& z, const Mask& y) {
    if (z.domain != y.domain) throw_shape("logit/mask domains differ");
    if (z.num_classes != y.num_classes) throw_shape("logit/mask class counts differ");
}

namespace {

double binary_iou(const Mask& a, const Mask& b, int c) {
    const int n = a.domain.size();
    long long inter = 0, uni = 0;
    for (int i = 0; i < n; ++i) {
        const uint8_t va = a.class_bit(c, i);
        const uint8_t vb = b.class_bit(c, i);
        inter += va & vb;
        uni += va | vb;
    }
    if (uni == 0) return 1.0;  // both foregrounds empty
    return static_cast<double>(inter) / static_cast<double>(uni);
}

bool class_present(const Mask& m, int c) {
    const int n = m.domain.size();
    for (int i = 0; i < n; ++i)
        if (m.class_bit(c, i)) return true;
    return false;
}

void check_finite(const LogitMap& z) {
    for (double v : z.values)
        if (!std::isfinite(v)) throw Error(Error::Kind::Numeric, "non-finite logits");
}

// log(sigmoid(x)) = -softplus(-x), stable for any magnitude.
double log_sigmoid(double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

}  // namespace

double iou(const Mask& a, const Mask& b, std::optional<int> class_index) {
    check_compatible(a, b);
    if (class_index) {
        if (*class_index < 0 || *class_index >= a.num_classes) throw_shape("class index out of range");
        return binary_iou(a, b, *class_index);
    }
    const int first = a.mode == MaskMode::MultiClass ? 1 : 0;  // background excluded
    double sum = 0.0;
    int counted = 0;
    for (int c = first; c < a.num_classes; ++c) {
        if (!class_present(a, c) && !class_present(b, c)) continue;
        sum += binary_iou(a, b, c);
        ++counted;
    }
    if (counted == 0) return 1.0;  // no foreground anywhere in either mask
    return sum / counted;
}

double log_likelihood(const LogitMap& z, const Mask& y, std::optional<int> class_index) {
    check_compatible(z, y);
    check_finite(z);
    const int n = z.domain.size();
    const int c_count = z.num_classes;
    double acc = 0.0;
    if (y.mode == MaskMode::MultiClass) {
        for (int i = 0; i < n; ++i) {
            double zmax = z.at(0, i);
            for (int c = 1; c < c_count; ++c) zmax = std::max(zmax, z.at(c, i));
            double lse = 0.0;
            for (int c = 0; c < c_count; ++c) lse += std::exp(z.at(c, i) - zmax);
            acc += z.at(y.labels[i], i) - zmax - std::log(lse);
        }
    } else {
        if (!class_index) throw_shape("multi-label log-likelihood requires a class index");
        const int c = *class_index;
        if (c < 0 || c >= c_count) throw_shape("class index out of range");
        for (int i = 0; i < n; ++i) {
            const double zi = z.at(c, i);
            acc += y.class_bit(c, i) ? log_sigmoid(zi) : log_sigmoid(-zi);
        }
    }
    return acc / n;
}

DisagreementRegion disagreement_region(const Mask& y_plus, const Mask& y_minus,
                                       std::optional<int> class_index) {
    check_compatible(y_plus, y_minus);
    DisagreementRegion r;
    const int n = y_plus.domain.size();
    if (y_plus.mode == MaskMode::MultiClass) {
        for (int i = 0; i < n; ++i)
            if (y_plus.labels[i] != y_minus.labels[i]) r.pixels.push_back(i);
    } else {
        if (!class_index) throw_shape("multi-label disagreement region requires a class index");
        const int c = *class_index;
        if (c < 0 || c >= y_plus.num_classes) throw_shape("class index out of range");
        r.class_index = c;
        for (int i = 0; i < n; ++i)
            if (y_plus.class_bit(c, i) != y_minus.class_bit(c, i)) r.pixels.push_back(i);
    }
    return r;
}

double per_pixel_delta(const LogitMap& z, const Mask& y_plus, const Mask& y_minus,
                       std::optional<int> class_index, int pixel) {
    if (y_plus.mode == MaskMode::MultiClass) {
        // log softmax(z)[a] - log softmax(z)[b] = z_a - z_b
        return z.at(y_plus.labels[pixel], pixel) - z.at(y_minus.labels[pixel], pixel);
    }
    // log Bern(1; sigmoid(t)) - log Bern(0; sigmoid(t)) = t
    const int c = *class_index;
    return y_plus.class_bit(c, pixel) ? z.at(c, pixel) : -z.at(c, pixel);
}

double delta_pair_over(const LogitMap& z, const Mask& y_plus, const Mask& y_minus,
                       const DisagreementRegion& region, DeltaNormalization normalization) {
    check_compatible(z, y_plus);
    check_finite(z);
    if (normalization == DeltaNormalization::Region && region.size() == 0)
        throw Error(Error::Kind::DegeneratePair, "empty disagreement region under region normalization");
    double acc = 0.0;
    for (int i : region.pixels) acc += per_pixel_delta(z, y_plus, y_minus, region.class_index, i);
    const int denom = normalization == DeltaNormalization::Global ? z.domain.size() : region.size();
    return acc / denom;
}

double delta_pair(const LogitMap& z, const Mask& y_plus, const Mask& y_minus,
                  DeltaNormalization normalization, std::optional<int> class_index) {
    const DisagreementRegion r = disagreement_region(y_plus, y_minus, class_index);
    return delta_pair_over(z, y_plus, y_minus, r, normalization);
}

}  // namespace prefseg
