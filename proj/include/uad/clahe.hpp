#pragma once

#include "uad/grid.hpp"

namespace uad {

// Contrast-limited adaptive histogram equalization on a [0,1] grid.
// clip_limit is the fraction of a tile's pixels any histogram bin may hold
// (excess is redistributed); tile mappings are blended bilinearly. A constant
// input is returned unchanged — there is no contrast to equalize.
Grid2D clahe(const Grid2D& g, double clip_limit, int tiles = 8, int bins = 256);

}  // namespace uad
