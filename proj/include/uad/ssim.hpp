#pragma once

#include "uad/grid.hpp"

namespace uad {

struct SsimConfig {
    int window = 11;
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    void validate() const;  // window odd and >= 3; constants positive
};

// Mean local structural similarity over a Gaussian-windowed sliding
// computation (valid windows only), in [-1, 1]. When grad_b is given it
// receives d(ssim)/d(b), computed analytically.
double ssim(const Grid2D& a, const Grid2D& b, const SsimConfig& cfg, Grid2D* grad_b = nullptr);

}  // namespace uad
