#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "uad/grid.hpp"
#include "uad/rng.hpp"
#include "uad/volume.hpp"

namespace uadtest {

/// Unique scratch directory under the system temp root, removed on scope exit.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("uadtest-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str(const std::string& rel = "") const {
        return rel.empty() ? path.string() : (path / rel).string();
    }
};

inline uad::Grid2D random_grid(int w, int h, std::uint64_t seed, double lo = 0.0,
                               double hi = 1.0) {
    uad::Grid2D g(w, h);
    uad::RandomStream rs(seed);
    for (double& v : g.v) v = rs.uniform(lo, hi);
    return g;
}

inline uad::Slice2D random_slice(int size, std::uint64_t seed, const std::string& id = "t",
                                 int index = 0) {
    return uad::Slice2D(random_grid(size, size, seed), id, index);
}

inline uad::Volume constant_volume(int nx, int ny, int nz, float value,
                                   uad::Spacing spacing = {1.0, 1.0, 1.0}) {
    uad::Volume v;
    v.shape = {nx, ny, nz};
    v.spacing = spacing;
    v.identifier = "const";
    v.voxels.assign(static_cast<std::size_t>(nx) * ny * nz, value);
    return v;
}

}  // namespace uadtest
