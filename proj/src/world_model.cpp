#include "hgwm/world_model.hpp"

#include <numeric>

#include "hgwm/errors.hpp"

namespace hgwm {

namespace {

std::vector<std::size_t> resolve(const std::vector<std::size_t>& wanted, std::size_t n) {
  if (!wanted.empty()) {
    for (std::size_t v : wanted)
      if (v >= n) throw UsageError("camera index " + std::to_string(v) + " out of range");
    return wanted;
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

void render_into(PredictionBundle& b, const std::vector<Camera>& cams, const PredictOptions& opts) {
  if (opts.render_current) {
    b.current_views = resolve(opts.current_views, cams.size());
    for (std::size_t v : b.current_views) b.current_render.push_back(render_gaussians(b.theta_t, cams[v], opts.raster));
  }
  if (opts.render_future) {
    b.future_views = resolve(opts.future_views, cams.size());
    for (std::size_t v : b.future_views) b.future_render.push_back(render_gaussians(b.theta_t1, cams[v], opts.raster));
  }
}

void transition(PredictionBundle& b, const BimanualAction& action, const ModelParams& params,
                const PredictOptions& opts) {
  // the stabilizing arm drives the leader, whichever physical arm it is
  b.theta_s = leader_deform(b.theta_t, action.stabilizing, b.v, params, opts.hooks);
  b.theta_t1 = follower_deform(b.theta_s, action.stabilizing, action.acting, b.v, params, opts.hooks);
  b.theta_t1.timestamp = b.theta_t.timestamp + 1;
  if (b.theta_t1.size() != b.theta_t.size()) throw Error("internal: particle count changed");
}

}  // namespace

raster::RenderedTensors render_gaussians(const GaussianTensors& theta, const Camera& cam,
                                         const raster::RasterConfig& cfg) {
  return raster::render_tensors(theta.mu(), theta.color, theta.rot(), theta.scale, theta.opacity, theta.logits,
                                cam, cfg);
}

PredictionBundle predict_step(const Observation& obs, const BimanualAction& action, const std::vector<Camera>& cams,
                              const ModelParams& params, const PredictOptions& opts) {
  PredictionBundle b;
  b.v = represent(obs, params, opts.represent);
  b.theta_t = regress_gaussians(b.v, params);
  b.theta_t.timestamp = obs.proprio.time_index;
  transition(b, action, params, opts);
  render_into(b, cams, opts);
  return b;
}

std::vector<PredictionBundle> rollout(const Observation& obs, const std::vector<BimanualAction>& actions,
                                      const std::vector<Camera>& cams, const ModelParams& params,
                                      const PredictOptions& opts) {
  if (actions.empty()) throw UsageError("rollout needs at least one action");
  std::vector<PredictionBundle> out;
  out.push_back(predict_step(obs, actions.front(), cams, params, opts));
  for (std::size_t k = 1; k < actions.size(); ++k) {
    PredictionBundle b;
    b.v = out.back().v;
    b.theta_t = out.back().theta_t1;
    transition(b, actions[k], params, opts);
    render_into(b, cams, opts);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace hgwm
