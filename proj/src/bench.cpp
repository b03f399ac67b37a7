#include "uad/bench.hpp"

#include <algorithm>
#include <chrono>
#include <vector>

#include "uad/errors.hpp"
#include "uad/rng.hpp"

namespace uad {

BenchResult latency_bench(ResVae& model, int n_slices, int warmup, std::uint64_t seed) {
    if (n_slices < 1) throw ValidationError("bench needs at least one timed slice");
    if (warmup < 0) throw ValidationError("warmup must be nonnegative");

    const int s = model.config().input_size;
    RandomStream rs(fanout_seed(seed, "bench-input"));
    nn::Tensor x(1, 1, s, s);
    for (double& v : x.v) v = rs.uniform();

    using clock = std::chrono::steady_clock;
    std::vector<double> ms;
    ms.reserve(n_slices);
    for (int i = 0; i < warmup + n_slices; ++i) {
        const auto t0 = clock::now();
        (void)model.forward(x, nullptr, /*train=*/false);
        const auto t1 = clock::now();
        if (i >= warmup) {
            ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    }
    auto mid = ms.begin() + ms.size() / 2;
    std::nth_element(ms.begin(), mid, ms.end());
    double median = *mid;
    if (ms.size() % 2 == 0) {
        const double hi = median;
        auto lo_it = std::max_element(ms.begin(), mid);
        median = (*lo_it + hi) / 2.0;
    }

    BenchResult r;
    r.ms_per_slice = median;
    r.fps = 1000.0 / median;
    r.s_per_volume = 30.0 * median / 1000.0;
    r.n_slices = n_slices;
    r.warmup = warmup;
    return r;
}

}  // namespace uad
