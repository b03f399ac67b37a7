#pragma once

#include <cstddef>
#include <vector>

namespace uad {

/// Dense 2D double grid, row-major with x fastest: v[x + w*y].
struct Grid2D {
    int w = 0;
    int h = 0;
    std::vector<double> v;

    Grid2D() = default;
    Grid2D(int width, int height, double fill = 0.0)
        : w(width), h(height), v(static_cast<std::size_t>(width) * height, fill) {}

    double& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Grid2D& o) const { return w == o.w && h == o.h; }
};

}  // namespace uad
