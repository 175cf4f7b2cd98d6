#pragma once

#include <cstdint>
#include <vector>

#include "prefseg/grid.hpp"

namespace prefseg {

// Binary morphology on row-major H x W grids. Foreground components are
// 4-connected, background components 8-connected (hole detection uses the
// dual connectivity).

struct ComponentLabels {
    std::vector<int> label;  // -1 for off pixels, else component id in scan order
    std::vector<int> sizes;  // component id -> pixel count
};

ComponentLabels label_components(const std::vector<uint8_t>& fg, PixelDomain d, bool eight_connected);

// Fills background components that do not touch the border and whose size is
// at most hole_cap * (foreground pixel count). The input vector is modified.
void fill_holes_binary(std::vector<uint8_t>& fg, PixelDomain d, double hole_cap);

// Keeps only the largest 4-connected component (ties: first in scan order).
void largest_component_binary(std::vector<uint8_t>& fg, PixelDomain d);

// Exact squared Euclidean distance to the nearest on pixel, per pixel
// (Felzenszwalb-Huttenlocher two-pass parabola transform). Pixels of an
// all-off grid get kInfiniteDistance.
inline constexpr double kInfiniteDistance = 1e20;
std::vector<double> squared_distance_transform(const std::vector<uint8_t>& on, PixelDomain d);

// Signed Euclidean distance: negative inside the foreground, positive
// outside, zero nowhere (pixel centers are never on the continuous boundary).
std::vector<double> signed_distance(const std::vector<uint8_t>& fg, PixelDomain d);

}  // namespace prefseg
