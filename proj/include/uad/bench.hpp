#pragma once

#include <cstdint>

#include "uad/resvae.hpp"

namespace uad {

struct BenchResult {
    double ms_per_slice = 0.0;  // median over the timed iterations
    double fps = 0.0;           // 1000 / ms_per_slice
    double s_per_volume = 0.0;  // 30-slice volume, in seconds
    int n_slices = 0;
    int warmup = 0;
};

/// Times eval-mode reconstruction of a fixed random slice; the first `warmup`
/// iterations are discarded and the median of the rest is reported.
BenchResult latency_bench(ResVae& model, int n_slices, int warmup, std::uint64_t seed);

}  // namespace uad
