#include <doctest.h>

#include "hgwm/world_model.hpp"
#include "model_support.hpp"
#include "support.hpp"

using namespace hgwm;
using hgwm::testing::demo_cameras;
using hgwm::testing::small_config;
using hgwm::testing::small_demo;
using hgwm::testing::values;

namespace {

double render_diff(const raster::RenderedTensors& a, const raster::RenderedTensors& b) {
  return std::max(hgwm::testing::max_abs_diff(values(a.rgb), values(b.rgb)),
                  hgwm::testing::max_abs_diff(values(a.logits), values(b.logits)));
}

GaussianTensors shifted(const GaussianTensors& t, const Vec3& d) {
  GaussianSet s = t.to_set();
  for (Gaussian& g : s.gaussians) g.mu += d;
  return GaussianTensors::from_set(s);
}

}  // namespace

TEST_SUITE("world_model") {
  TEST_CASE("zero deformation heads predict an unchanged future") {
    ModelParams p = ModelParams::init(small_config(), 1);
    p.freeze_zero("leader.l3");
    p.freeze_zero("follower.l3");
    const DemoTrajectory& d = small_demo();
    ad::NoGradScope ng;
    const PredictionBundle b = predict_step(d.steps[0].obs, d.steps[0].action, demo_cameras(d), p);
    REQUIRE(b.current_render.size() == 3);
    REQUIRE(b.future_render.size() == 3);
    CHECK(b.theta_t.size() == b.theta_t1.size());
    for (std::size_t v = 0; v < 3; ++v) CHECK(render_diff(b.current_render[v], b.future_render[v]) < 1e-12);
  }

  TEST_CASE("forced global shift matches rendering the pre-shifted scene") {
    const ModelParams p = ModelParams::init(small_config(), 2);
    const DemoTrajectory& d = small_demo();
    DeformHooks hooks;
    hooks.forced_leader_shift = Vec3(0.05, 0, 0);
    hooks.forced_follower_shift = Vec3::Zero();
    PredictOptions opts;
    opts.hooks = &hooks;
    ad::NoGradScope ng;
    const auto cams = demo_cameras(d);
    const PredictionBundle b = predict_step(d.steps[0].obs, d.steps[0].action, cams, p, opts);
    const GaussianTensors oracle = shifted(b.theta_t, Vec3(0.05, 0, 0));
    for (std::size_t v = 0; v < cams.size(); ++v)
      CHECK(render_diff(b.future_render[v], render_gaussians(oracle, cams[v])) < 1e-9);
  }

  TEST_CASE("role assignment decides which arm feeds the leader") {
    const ModelParams p = ModelParams::init(small_config(), 3);
    const DemoTrajectory& d = small_demo();
    ArmAction left, right;
    left.trans_bin = {10, 20, 30};
    right.trans_bin = {70, 80, 90};
    const Bounds ws = p.config().workspace;
    for (Role role : {Role::kLeftStabilizes, Role::kRightStabilizes}) {
      std::vector<double> seen_leader;
      std::vector<double> seen_follower;
      DeformHooks hooks;
      hooks.probe = [&](const std::string& stage, const auto& feats) {
        auto& dst = stage == "leader" ? seen_leader : seen_follower;
        for (const auto& f : feats) dst.insert(dst.end(), f.begin(), f.end());
      };
      PredictOptions opts;
      opts.hooks = &hooks;
      opts.render_current = false;
      opts.render_future = false;
      ad::NoGradScope ng;
      (void)predict_step(d.steps[0].obs, BimanualAction::from_arms(left, right, role), {}, p, opts);
      const auto fl = action_features(left, ws), fr = action_features(right, ws);
      const auto& stab = role == Role::kLeftStabilizes ? fl : fr;
      const auto& act = role == Role::kLeftStabilizes ? fr : fl;
      CHECK(seen_leader == std::vector<double>(stab.begin(), stab.end()));
      std::vector<double> both(stab.begin(), stab.end());
      both.insert(both.end(), act.begin(), act.end());
      CHECK(seen_follower == both);
    }
  }

  TEST_CASE("perturbing the acting arm changes only the follower output") {
    const ModelParams p = ModelParams::init(small_config(), 4);
    const DemoTrajectory& d = small_demo();
    BimanualAction a = d.steps[0].action;
    BimanualAction b = a;
    b.acting.trans_bin[0] = (b.acting.trans_bin[0] + 17) % kTransBins;
    PredictOptions opts;
    opts.render_current = false;
    opts.render_future = false;
    ad::NoGradScope ng;
    const PredictionBundle pa = predict_step(d.steps[0].obs, a, {}, p, opts);
    const PredictionBundle pb = predict_step(d.steps[0].obs, b, {}, p, opts);
    CHECK(values(pa.theta_s.mu()) == values(pb.theta_s.mu()));
    CHECK(values(pa.theta_t1.mu()) != values(pb.theta_t1.mu()));
  }

  TEST_CASE("single-step rollout equals predict_step") {
    const ModelParams p = ModelParams::init(small_config(), 5);
    const DemoTrajectory& d = small_demo();
    const auto cams = demo_cameras(d);
    ad::NoGradScope ng;
    const PredictionBundle one = predict_step(d.steps[0].obs, d.steps[0].action, cams, p);
    const auto roll = rollout(d.steps[0].obs, {d.steps[0].action}, cams, p);
    REQUIRE(roll.size() == 1);
    CHECK(values(roll[0].theta_t1.mu()) == values(one.theta_t1.mu()));
    for (std::size_t v = 0; v < cams.size(); ++v) CHECK(render_diff(roll[0].future_render[v], one.future_render[v]) == 0.0);
  }

  TEST_CASE("two zero-delta steps keep every render identical") {
    ModelParams p = ModelParams::init(small_config(), 6);
    p.freeze_zero("leader.l3");
    p.freeze_zero("follower.l3");
    const DemoTrajectory& d = small_demo();
    const auto cams = demo_cameras(d);
    ad::NoGradScope ng;
    const auto roll = rollout(d.steps[0].obs, {d.steps[0].action, d.steps[1].action}, cams, p);
    REQUIRE(roll.size() == 2);
    for (std::size_t v = 0; v < cams.size(); ++v) {
      CHECK(render_diff(roll[0].future_render[v], roll[0].current_render[v]) < 1e-12);
      CHECK(render_diff(roll[1].future_render[v], roll[0].current_render[v]) < 1e-12);
    }
  }

  TEST_CASE("two forced shifts compose into one") {
    const ModelParams p = ModelParams::init(small_config(), 7);
    const DemoTrajectory& d = small_demo();
    DeformHooks half, full;
    half.forced_leader_shift = Vec3(0.05, 0, 0);
    half.forced_follower_shift = Vec3::Zero();
    full.forced_leader_shift = Vec3(0.1, 0, 0);
    full.forced_follower_shift = Vec3::Zero();
    PredictOptions oh, of;
    oh.hooks = &half;
    of.hooks = &full;
    oh.render_current = of.render_current = false;
    oh.render_future = of.render_future = false;
    ad::NoGradScope ng;
    const auto two = rollout(d.steps[0].obs, {d.steps[0].action, d.steps[0].action}, {}, p, oh);
    const PredictionBundle one = predict_step(d.steps[0].obs, d.steps[0].action, {}, p, of);
    CHECK(values(two[1].theta_t1.mu()) == values(one.theta_t1.mu()));
  }

  TEST_CASE("long rollouts conserve particles and inherent properties") {
    const ModelParams p = ModelParams::init(small_config(), 8);
    const DemoTrajectory& d = small_demo();
    std::vector<BimanualAction> actions;
    for (const auto& s : d.steps) actions.push_back(s.action);
    PredictOptions opts;
    opts.render_current = false;
    opts.render_future = false;
    ad::NoGradScope ng;
    const auto roll = rollout(d.steps[0].obs, actions, {}, p, opts);
    const GaussianTensors& t0 = roll.front().theta_t;
    for (const PredictionBundle& b : roll) {
      CHECK(b.theta_t1.size() == t0.size());
      CHECK(values(b.theta_t1.color) == values(t0.color));
      CHECK(values(b.theta_t1.scale) == values(t0.scale));
      CHECK(values(b.theta_t1.opacity) == values(t0.opacity));
      CHECK(values(b.theta_t1.logits) == values(t0.logits));
    }
  }
}
