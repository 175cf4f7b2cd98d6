#include "prefseg/morphology.hpp"

#include <algorithm>
#include <cmath>

namespace prefseg {

ComponentLabels label_components(const std::vector<uint8_t>& fg, PixelDomain d, bool eight_connected) {
    const int h = d.height, w = d.width, n = d.size();
    ComponentLabels out;
    out.label.assign(n, -1);
    std::vector<int> stack;
    for (int start = 0; start < n; ++start) {
        if (!fg[start] || out.label[start] != -1) continue;
        const int id = static_cast<int>(out.sizes.size());
        out.sizes.push_back(0);
        out.label[start] = id;
        stack.push_back(start);
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            ++out.sizes[id];
            const int y = i / w, x = i % w;
            auto visit = [&](int yy, int xx) {
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) return;
                const int j = yy * w + xx;
                if (fg[j] && out.label[j] == -1) {
                    out.label[j] = id;
                    stack.push_back(j);
                }
            };
            visit(y - 1, x);
            visit(y + 1, x);
            visit(y, x - 1);
            visit(y, x + 1);
            if (eight_connected) {
                visit(y - 1, x - 1);
                visit(y - 1, x + 1);
                visit(y + 1, x - 1);
                visit(y + 1, x + 1);
            }
        }
    }
    return out;
}

void fill_holes_binary(std::vector<uint8_t>& fg, PixelDomain d, double hole_cap) {
    const int h = d.height, w = d.width, n = d.size();
    long long fg_size = 0;
    for (uint8_t v : fg) fg_size += v;
    if (fg_size == 0) return;

    std::vector<uint8_t> bg(n);
    for (int i = 0; i < n; ++i) bg[i] = fg[i] ? 0 : 1;
    const ComponentLabels comps = label_components(bg, d, /*eight_connected=*/true);

    std::vector<uint8_t> touches_border(comps.sizes.size(), 0);
    for (int x = 0; x < w; ++x) {
        if (comps.label[x] >= 0) touches_border[comps.label[x]] = 1;
        if (comps.label[(h - 1) * w + x] >= 0) touches_border[comps.label[(h - 1) * w + x]] = 1;
    }
    for (int y = 0; y < h; ++y) {
        if (comps.label[y * w] >= 0) touches_border[comps.label[y * w]] = 1;
        if (comps.label[y * w + w - 1] >= 0) touches_border[comps.label[y * w + w - 1]] = 1;
    }

    const double cap = hole_cap * static_cast<double>(fg_size);
    for (int i = 0; i < n; ++i) {
        const int id = comps.label[i];
        if (id >= 0 && !touches_border[id] && comps.sizes[id] <= cap) fg[i] = 1;
    }
}

void largest_component_binary(std::vector<uint8_t>& fg, PixelDomain d) {
    const ComponentLabels comps = label_components(fg, d, /*eight_connected=*/false);
    if (comps.sizes.size() <= 1) return;
    int best = 0;
    for (size_t id = 1; id < comps.sizes.size(); ++id)
        if (comps.sizes[id] > comps.sizes[best]) best = static_cast<int>(id);
    for (int i = 0; i < d.size(); ++i)
        if (fg[i] && comps.label[i] != best) fg[i] = 0;
}

namespace {

// 1D squared distance transform of a sampled function (Felzenszwalb &
// Huttenlocher). f and out may not alias.
void dt_1d(const double* f, int n, double* out, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -kInfiniteDistance;
    z[1] = kInfiniteDistance;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + q * static_cast<double>(q)) - (f[p] + p * static_cast<double>(p))) /
                (2.0 * (q - p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInfiniteDistance;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - static_cast<double>(v[k]);
        out[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

std::vector<double> squared_distance_transform(const std::vector<uint8_t>& on, PixelDomain d) {
    const int h = d.height, w = d.width;
    std::vector<double> dist(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) dist[i] = on[i] ? 0.0 : kInfiniteDistance;

    const int m = std::max(h, w);
    std::vector<double> f(m), dcol(m), z(m + 1);
    std::vector<int> v(m);
    // columns
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) f[y] = dist[y * w + x];
        dt_1d(f.data(), h, dcol.data(), v.data(), z.data());
        for (int y = 0; y < h; ++y) dist[y * w + x] = dcol[y];
    }
    // rows
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f[x] = dist[y * w + x];
        dt_1d(f.data(), w, dcol.data(), v.data(), z.data());
        for (int x = 0; x < w; ++x) dist[y * w + x] = dcol[x];
    }
    for (double& e : dist) e = std::min(e, kInfiniteDistance);
    return dist;
}

std::vector<double> signed_distance(const std::vector<uint8_t>& fg, PixelDomain d) {
    const int n = d.size();
    std::vector<uint8_t> bg(n);
    for (int i = 0; i < n; ++i) bg[i] = fg[i] ? 0 : 1;
    const std::vector<double> d2_fg = squared_distance_transform(fg, d);
    const std::vector<double> d2_bg = squared_distance_transform(bg, d);
    std::vector<double> sd(n);
    for (int i = 0; i < n; ++i)
        sd[i] = fg[i] ? -std::sqrt(d2_bg[i]) : std::sqrt(d2_fg[i]);
    return sd;
}

}  // namespace prefseg
