#include <omp.h>

#include <vector>

#include "internal.hpp"
#include "tiles.hpp"

namespace hgwm::raster {

namespace detail {

TileBins bin_splats(const std::vector<Splat2D>& splats, int width, int height, int tile) {
  TileBins bins;
  bins.tile = tile;
  bins.tiles_x = (width + tile - 1) / tile;
  bins.tiles_y = (height + tile - 1) / tile;
  bins.lists.resize(static_cast<std::size_t>(bins.tiles_x) * bins.tiles_y);
  // splats arrive depth-sorted, so every per-tile list stays depth-sorted
  for (std::size_t k = 0; k < splats.size(); ++k) {
    const Splat2D& s = splats[k];
    for (int ty = s.y_min / tile; ty <= s.y_max / tile; ++ty)
      for (int tx = s.x_min / tile; tx <= s.x_max / tile; ++tx)
        bins.lists[static_cast<std::size_t>(ty) * bins.tiles_x + tx].push_back(k);
  }
  return bins;
}

}  // namespace detail

RenderOutput render(const GaussianArrays& g, const Camera& cam, const RasterConfig& cfg) {
  validate_arrays(g);
  const int w = cam.width();
  const int h = cam.height();
  RenderOutput out(w, h);
  const std::vector<Splat2D> splats = detail::project_all(g, cam, cfg);
  const detail::TileBins bins = detail::bin_splats(splats, w, h, cfg.tile_size);
  const int n_tiles = static_cast<int>(bins.lists.size());

#pragma omp parallel for schedule(static)
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = bins.lists[static_cast<std::size_t>(t)];
    const int x0 = (t % bins.tiles_x) * bins.tile;
    const int y0 = (t / bins.tiles_x) * bins.tile;
    for (int y = y0; y < std::min(y0 + bins.tile, h); ++y) {
      for (int x = x0; x < std::min(x0 + bins.tile, w); ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        double T = 1.0;
        double c[3] = {0, 0, 0};
        double l[3] = {0, 0, 0};
        double depth = 0.0;
        double wsum = 0.0;
        for (std::size_t k : list) {
          const Splat2D& s = splats[k];
          if (x < s.x_min || x > s.x_max || y < s.y_min || y > s.y_max) continue;
          const double alpha = detail::eval_kernel(s, x - s.mean2d.x(), y - s.mean2d.y(), cfg).alpha;
          if (alpha <= 0.0) continue;
          const double wgt = alpha * T;
          const std::size_t gi = s.source_index;
          for (int ch = 0; ch < 3; ++ch) {
            c[ch] += wgt * g.color[3 * gi + ch];
            l[ch] += wgt * g.logits[3 * gi + ch];
          }
          depth += wgt * s.depth;
          wsum += wgt;
          T *= 1.0 - alpha;
          if (T < cfg.early_stop) break;
        }
        for (int ch = 0; ch < 3; ++ch) {
          out.rgb[3 * p + ch] = c[ch];
          out.logit_map[3 * p + ch] = l[ch];
        }
        out.depth_map[p] = depth;
        out.transmittance[p] = T;
        out.weight_sum[p] = wsum;
      }
    }
  }
  return out;
}

RenderOutput render(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg) {
  const GaussianBuffers b = GaussianBuffers::from_set(set);
  return render(b.view(), cam, cfg);
}

}  // namespace hgwm::raster
