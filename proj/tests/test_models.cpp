#include <doctest.h>

#include <filesystem>
#include <set>

#include "hgwm/errors.hpp"
#include "hgwm/models.hpp"
#include "model_support.hpp"
#include "support.hpp"

using namespace hgwm;
using hgwm::testing::small_config;
using hgwm::testing::small_demo;
using hgwm::testing::values;

namespace {

VolumetricFeature synthetic_feature(const ModelConfig& c, const std::vector<std::size_t>& occupied) {
  VolumetricFeature v;
  v.grid = c.grid;
  v.workspace = c.workspace;
  v.occupancy.assign(c.cells(), 0.2);
  for (std::size_t i : occupied) v.occupancy[i] = 1.0;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> f(c.cells() * c.features);
  for (double& x : f) x = u(rng);
  v.features = ad::Tensor::from({c.cells(), static_cast<std::size_t>(c.features)}, f);
  return v;
}

GaussianTensors one_particle(const Vec3& mu) {
  GaussianSet s;
  s.gaussians.emplace_back(mu, Vec3(0.2, 0.4, 0.6), Vec4(1, 0, 0, 0), Vec3::Constant(0.05), 0.7, Vec3(1, -1, 0));
  return GaussianTensors::from_set(s);
}

ArmAction some_action(int seed) {
  ArmAction a;
  a.trans_bin = {10 + seed, 50, 70 - seed};
  a.rot_bins = {seed % 72, 3, 40};
  a.open = seed % 2 == 0;
  return a;
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("empty observation with suppression gives a zero occupancy grid") {
    ad::NoGradScope ng;
    Observation obs = small_demo().steps[0].obs;
    for (View& view : obs.views) std::fill(view.depth.data.begin(), view.depth.data.end(), 0.0);
    const ModelParams p = ModelParams::init(small_config(), 1);
    CHECK_THROWS_AS(represent(obs, p), DegenerateObservationError);
    RepresentOptions opts;
    opts.allow_empty = true;
    const VolumetricFeature v = represent(obs, p, opts);
    for (double o : v.occupancy) CHECK(o == 0.0);
    for (double f : v.features.data()) CHECK(f == 0.0);
  }

  TEST_CASE("features are supported within two cells of the observed cube") {
    ad::NoGradScope ng;
    const ModelConfig c = small_config();
    const double cell = c.cell_size();
    GaussianSet cube = env::primitive_gaussians(env::Primitive::kBox, Vec3::Constant(cell), Vec3(0.9, 0.2, 0.2),
                                                kTargetObject, 3);
    for (Gaussian& g : cube.gaussians) g.mu += Vec3(0.05, 0.05, 0.05);
    const Camera cam = Camera::look_at(Vec3(1.5, 1.0, 1.2), Vec3(0.05, 0.05, 0.05), Vec3(0, 0, 1), 60.0, 48, 48);
    const env::RenderedView rv = env::render_view(cube, cam);
    Observation obs;
    obs.views.push_back(View{cam, rv.rgb, rv.depth});

    const ModelParams p = ModelParams::init(c, 2);
    const VolumetricFeature v = represent(obs, p);
    const int g = c.grid;
    std::vector<std::array<int, 3>> occ;
    for (std::size_t i = 0; i < c.cells(); ++i)
      if (v.occupancy[i] > 0) occ.push_back({int(i) / (g * g), (int(i) / g) % g, int(i) % g});
    REQUIRE_FALSE(occ.empty());
    CHECK(occ.size() <= 27);

    std::size_t nonzero = 0, outside = 0;
    for (std::size_t i = 0; i < c.cells(); ++i) {
      const int x = int(i) / (g * g), y = (int(i) / g) % g, z = int(i) % g;
      int dist = 1 << 20;
      for (const auto& o : occ)
        dist = std::min(dist, std::max({std::abs(x - o[0]), std::abs(y - o[1]), std::abs(z - o[2])}));
      bool any = false;
      for (int k = 0; k < c.features; ++k) any = any || v.features[i * c.features + k] != 0.0;
      nonzero += any;
      if (any && dist > 2) ++outside;
    }
    CHECK(nonzero > 0);
    CHECK(outside == 0);
  }

  TEST_CASE("view order does not change the representation") {
    ad::NoGradScope ng;
    const Observation& obs = small_demo().steps[0].obs;
    Observation rev = obs;
    std::reverse(rev.views.begin(), rev.views.end());
    const ModelParams p = ModelParams::init(small_config(), 4);
    const VolumetricFeature a = represent(obs, p);
    const VolumetricFeature b = represent(rev, p);
    CHECK(a.occupancy == b.occupancy);
    CHECK(hgwm::testing::max_abs_diff(values(a.features), values(b.features)) < 1e-12);
  }

  TEST_CASE("zero final regressor layer places neutral Gaussians at cell centers") {
    ad::NoGradScope ng;
    ModelParams p = ModelParams::init(small_config(), 5);
    p.freeze_zero("regress.l2");
    const VolumetricFeature v = represent(small_demo().steps[0].obs, p);
    const GaussianSet set = regress_gaussians(v, p).to_set();
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < v.occupancy.size(); ++i)
      if (v.occupancy[i] > 0.5) cells.push_back(i);
    REQUIRE(set.size() == cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const Gaussian& g = set.gaussians[i];
      CHECK((g.mu - v.cell_center(cells[i])).norm() < 1e-15);
      CHECK(g.opacity == 0.5);
      CHECK(g.color == Vec3::Constant(0.5));
      CHECK(g.rot == Vec4(1, 0, 0, 0));
    }
  }

  TEST_CASE("a single cell above threshold yields one Gaussian") {
    ad::NoGradScope ng;
    const ModelConfig c = small_config();
    const ModelParams p = ModelParams::init(c, 6);
    const VolumetricFeature v = synthetic_feature(c, {123});
    const GaussianTensors t = regress_gaussians(v, p);
    REQUIRE(t.size() == 1);
    const Vec3 off = t.to_set().gaussians[0].mu - v.cell_center(123);
    CHECK(off.cwiseAbs().maxCoeff() <= 0.5 * c.cell_size());
    CHECK_THROWS_AS(regress_gaussians(synthetic_feature(c, {}), p), EmptySceneError);
  }

  TEST_CASE("regressor output always satisfies the Gaussian invariants") {
    const ModelConfig c = small_config(6);
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < c.cells(); i += 7) cells.push_back(i);
    const VolumetricFeature v = synthetic_feature(c, cells);
    ad::NoGradScope ng;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      ModelParams p = ModelParams::init(c, seed);
      // Large weights push every activation toward saturation.
      for (const auto& [name, t] : p.tensors())
        if (name.rfind("regress", 0) == 0) {
          ad::Tensor handle = t;
          for (double& x : handle.mutable_data()) x *= 1.0 + double(seed % 10);
        }
      const GaussianSet set = regress_gaussians(v, p).to_set();
      REQUIRE(set.size() == cells.size());
      for (const Gaussian& g : set.gaussians) REQUIRE_NOTHROW(g.validate());
    }
  }

  TEST_CASE("zero deformation heads propagate exactly") {
    ModelParams p = ModelParams::init(small_config(), 7);
    p.freeze_zero("leader.l3");
    p.freeze_zero("follower.l3");
    ad::NoGradScope ng;
    const VolumetricFeature v = represent(small_demo().steps[0].obs, p);
    const GaussianTensors t = regress_gaussians(v, p);
    const GaussianTensors s = leader_deform(t, some_action(1), v, p);
    const GaussianTensors f = follower_deform(s, some_action(1), some_action(2), v, p);
    CHECK(values(s.mu()) == values(t.mu()));
    CHECK(values(s.rot()) == values(t.rot()));
    CHECK(values(f.mu()) == values(t.mu()));
    CHECK(values(f.rot()) == values(t.rot()));
  }

  TEST_CASE("forced leader shift moves every particle by exactly the shift") {
    const ModelParams p = ModelParams::init(small_config(), 8);
    ad::NoGradScope ng;
    const VolumetricFeature v = represent(small_demo().steps[0].obs, p);
    const GaussianTensors t = regress_gaussians(v, p);
    DeformHooks hooks;
    hooks.forced_leader_shift = Vec3(0.1, 0, 0);
    const GaussianTensors s = leader_deform(t, some_action(0), v, p, &hooks);
    const std::vector<double> before = values(t.mu()), after = values(s.mu());
    for (std::size_t i = 0; i < before.size(); i += 3) {
      CHECK(after[i] == before[i] + 0.1);
      CHECK(after[i + 1] == before[i + 1]);
      CHECK(after[i + 2] == before[i + 2]);
    }
  }

  TEST_CASE("leader then follower deltas sum on position") {
    const ModelParams p = ModelParams::init(small_config(), 9);
    ad::NoGradScope ng;
    const VolumetricFeature v = synthetic_feature(p.config(), {5});
    DeformHooks hooks;
    hooks.forced_leader_shift = Vec3(0.1, 0, 0);
    hooks.forced_follower_shift = Vec3(0, 0.2, 0);
    const GaussianTensors s = leader_deform(one_particle(Vec3(1, 2, 3)), some_action(0), v, p, &hooks);
    const GaussianTensors f = follower_deform(s, some_action(0), some_action(1), v, p, &hooks);
    const std::vector<double> mu = values(f.mu());
    CHECK(mu == std::vector<double>{1.1, 2.2, 3.0});
  }

  TEST_CASE("rotation deltas add once then renormalize") {
    const ModelParams p = ModelParams::init(small_config(), 10);
    ad::NoGradScope ng;
    const VolumetricFeature v = synthetic_feature(p.config(), {5});
    DeformHooks hooks;
    hooks.forced_leader_rot = Vec4(0.1, 0.2, -0.3, 0.05);
    hooks.forced_follower_rot = Vec4(-0.2, 0.1, 0.4, 0.3);
    const GaussianTensors s = leader_deform(one_particle(Vec3(0, 0, 0)), some_action(0), v, p, &hooks);
    const GaussianTensors f = follower_deform(s, some_action(0), some_action(1), v, p, &hooks);
    const Vec4 expect = (Vec4(1, 0, 0, 0) + Vec4(0.1, 0.2, -0.3, 0.05) + Vec4(-0.2, 0.1, 0.4, 0.3)).normalized();
    const std::vector<double> r = values(f.rot());
    for (int k = 0; k < 4; ++k) CHECK(std::abs(r[k] - expect[k]) < 1e-9);
  }

  TEST_CASE("deformation never touches inherent properties") {
    const Observation& obs = small_demo().steps[0].obs;
    ad::NoGradScope ng;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const ModelParams p = ModelParams::init(small_config(), 100 + seed);
      const VolumetricFeature v = represent(obs, p);
      const GaussianTensors t = regress_gaussians(v, p);
      const GaussianTensors s = leader_deform(t, some_action(int(seed)), v, p);
      const GaussianTensors f = follower_deform(s, some_action(int(seed)), some_action(int(seed) + 3), v, p);
      REQUIRE(f.size() == t.size());
      CHECK(values(f.color) == values(t.color));
      CHECK(values(f.scale) == values(t.scale));
      CHECK(values(f.opacity) == values(t.opacity));
      CHECK(values(f.logits) == values(t.logits));
    }
  }

  TEST_CASE("follower responds to the stabilizing action") {
    const ModelParams p = ModelParams::init(small_config(), 11);
    ad::NoGradScope ng;
    const VolumetricFeature v = represent(small_demo().steps[0].obs, p);
    const GaussianTensors s = regress_gaussians(v, p);
    const GaussianTensors a = follower_deform(s, some_action(0), some_action(5), v, p);
    const GaussianTensors b = follower_deform(s, some_action(9), some_action(5), v, p);
    CHECK(hgwm::testing::max_abs_diff(values(a.mu()), values(b.mu())) > 0.0);
  }

  TEST_CASE("policy logits have the declared shape and valid argmax") {
    const Observation& obs = small_demo().steps[0].obs;
    ad::NoGradScope ng;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const ModelParams p = ModelParams::init(small_config(), 200 + seed);
      const PolicyLogits out = decode_actions(represent(obs, p), "push the box forward", p);
      REQUIRE(out.logits.shape() == ad::Shape{2, kArmLogits});
      for (int arm = 0; arm < 2; ++arm) {
        const ArmAction a = out.argmax(arm);
        for (int k = 0; k < 3; ++k) {
          CHECK(a.trans_bin[k] >= 0);
          CHECK(a.trans_bin[k] < kTransBins);
          CHECK(a.rot_bins[k] >= 0);
          CHECK(a.rot_bins[k] < kRotBins);
        }
      }
    }
    CHECK(kArmLogits == 3 * 100 + 3 * 72 + 2 + 2);
  }

  TEST_CASE("policy is deterministic and separates instructions") {
    const ModelParams p = ModelParams::init(small_config(), 12);
    ad::NoGradScope ng;
    const VolumetricFeature v = represent(small_demo().steps[0].obs, p);
    CHECK(values(decode_actions(v, "lift the tray", p).logits) == values(decode_actions(v, "lift the tray", p).logits));
    CHECK_NOTHROW(decode_actions(v, "", p));
    int same = 0;
    for (int i = 0; i < 100; ++i) {
      const std::string a = "task number " + std::to_string(i), b = "task number " + std::to_string(i + 100);
      same += values(decode_actions(v, a, p).logits) == values(decode_actions(v, b, p).logits);
    }
    CHECK(same == 0);
  }

  TEST_CASE("language embedding is unit norm and case insensitive") {
    const auto a = language_embedding("Push the BOX", 16);
    const auto b = language_embedding("push the box", 16);
    CHECK(a == b);
    double n = 0;
    for (double x : a) n += x * x;
    CHECK(std::abs(n - 1.0) < 1e-12);
    CHECK(language_embedding("box the push", 16) != a);
  }

  TEST_CASE("checkpoint round trip and manifest mismatch") {
    const ModelConfig c = small_config();
    const ModelParams p = ModelParams::init(c, 13);
    const auto path = std::filesystem::temp_directory_path() / "hgwm_test_params.ckpt";
    p.save(path);
    const ModelParams q = ModelParams::load(path, &c);
    REQUIRE(q.tensors().size() == p.tensors().size());
    for (std::size_t i = 0; i < p.tensors().size(); ++i) {
      CHECK(q.tensors()[i].first == p.tensors()[i].first);
      CHECK(values(q.tensors()[i].second) == values(p.tensors()[i].second));
    }
    ModelConfig other = c;
    other.grid = 12;
    CHECK_THROWS_AS(ModelParams::load(path, &other), ManifestMismatchError);
    other = c;
    other.features = 9;
    CHECK_THROWS_AS(ModelParams::load(path, &other), ManifestMismatchError);
  }

  TEST_CASE("gradient flows from L_Pred-like loss into every module") {
    const ModelParams p = ModelParams::init(small_config(), 14);
    const DemoTrajectory& d = small_demo();
    ad::Tape tape;
    {
      ad::TapeScope scope(tape);
      const VolumetricFeature v = represent(d.steps[0].obs, p);
      const GaussianTensors t = regress_gaussians(v, p);
      const GaussianTensors s = leader_deform(t, d.steps[0].action.stabilizing, v, p);
      const GaussianTensors f = follower_deform(s, d.steps[0].action.stabilizing, d.steps[0].action.acting, v, p);
      ad::backward(ad::add(ad::sum_sq(f.mu()), ad::sum_sq(f.color)));
    }
    for (const char* name : {"repr.conv1.w", "regress.l1.w", "leader.l3.w", "follower.l3.w"}) {
      INFO(name);
      const auto g = p[name].grad();
      REQUIRE(!g.empty());
      CHECK(std::any_of(g.begin(), g.end(), [](double x) { return x != 0.0; }));
    }
  }
}
