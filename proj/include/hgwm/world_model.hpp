#pragma once

#include <vector>

#include "hgwm/models.hpp"
#include "hgwm/rasterizer.hpp"

namespace hgwm {

struct PredictOptions {
  // Camera indices to render; empty means every camera.
  std::vector<std::size_t> current_views;
  std::vector<std::size_t> future_views;
  bool render_current = true;
  bool render_future = true;
  const DeformHooks* hooks = nullptr;
  raster::RasterConfig raster;
  RepresentOptions represent;
};

/// One transition of the world model: features, Gaussians before and after
/// the leader and follower, and their renders.
struct PredictionBundle {
  VolumetricFeature v;
  GaussianTensors theta_t;
  GaussianTensors theta_s;  // after the leader
  GaussianTensors theta_t1;
  std::vector<std::size_t> current_views;
  std::vector<raster::RenderedTensors> current_render;
  std::vector<std::size_t> future_views;
  std::vector<raster::RenderedTensors> future_render;
};

raster::RenderedTensors render_gaussians(const GaussianTensors& theta, const Camera& cam,
                                         const raster::RasterConfig& cfg = {});

PredictionBundle predict_step(const Observation& obs, const BimanualAction& action,
                              const std::vector<Camera>& cams, const ModelParams& params,
                              const PredictOptions& opts = {});

// Re-applies leader and follower to the evolving Gaussians, reusing the
// features of the first observation.
std::vector<PredictionBundle> rollout(const Observation& obs, const std::vector<BimanualAction>& actions,
                                      const std::vector<Camera>& cams, const ModelParams& params,
                                      const PredictOptions& opts = {});

}  // namespace hgwm
