#pragma once

#include <vector>

#include "hgwm/rasterizer.hpp"

namespace hgwm::raster::detail {

struct TileBins {
  int tile = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<std::size_t>> lists;  // indices into the sorted splat vector
};

TileBins bin_splats(const std::vector<Splat2D>& splats, int width, int height, int tile);

}  // namespace hgwm::raster::detail
