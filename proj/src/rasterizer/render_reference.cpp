#include <algorithm>
#include <vector>

#include "internal.hpp"

namespace hgwm::raster {

RenderOutput render_brute_force(const GaussianArrays& g, const Camera& cam, const RasterConfig& cfg) {
  validate_arrays(g);
  const int w = cam.width();
  const int h = cam.height();
  RenderOutput out(w, h);

  // Splats whose truncated footprint misses the image contribute nothing, so
  // the projection cull is safe; ordering is resolved per pixel below.
  std::vector<Splat2D> splats;
  for (std::size_t i = 0; i < g.count; ++i) {
    if (auto s = detail::project(g, i, cam, cfg, nullptr)) splats.push_back(*s);
  }

  struct Hit {
    double depth;
    std::size_t index;
    double alpha;
  };
  std::vector<Hit> hits;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      hits.clear();
      for (const Splat2D& s : splats) {
        const double a = detail::eval_kernel(s, x - s.mean2d.x(), y - s.mean2d.y(), cfg).alpha;
        if (a > 0.0) hits.push_back({s.depth, s.source_index, a});
      }
      std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
      });
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      double T = 1.0;
      for (const Hit& hit : hits) {
        const double wgt = hit.alpha * T;
        for (int ch = 0; ch < 3; ++ch) {
          out.rgb[3 * p + ch] += wgt * g.color[3 * hit.index + ch];
          out.logit_map[3 * p + ch] += wgt * g.logits[3 * hit.index + ch];
        }
        out.depth_map[p] += wgt * hit.depth;
        out.weight_sum[p] += wgt;
        T *= 1.0 - hit.alpha;
      }
      out.transmittance[p] = T;
    }
  }
  return out;
}

RenderOutput render_brute_force(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg) {
  const GaussianBuffers b = GaussianBuffers::from_set(set);
  return render_brute_force(b.view(), cam, cfg);
}

}  // namespace hgwm::raster
