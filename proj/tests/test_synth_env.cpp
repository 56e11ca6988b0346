#include <doctest.h>

#include <filesystem>
#include <map>

#include "hgwm/errors.hpp"
#include "hgwm/io.hpp"
#include "hgwm/synth_env.hpp"
#include "support.hpp"

using namespace hgwm;
namespace fs = std::filesystem;

namespace {

int argmax(const Vec3& l) {
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (l[i] > l[k]) k = i;
  return k;
}

// Object placed exactly on a bin-center pose so a closed gripper there grasps it.
struct GraspRig {
  env::SceneSpec spec;
  ArmAction rest_left, grasp;
};

GraspRig grasp_rig() {
  GraspRig r;
  r.spec.role = Role::kLeftStabilizes;
  r.grasp.trans_bin = {40, 45, 55};
  r.grasp.open = false;
  env::ObjectSpec box;
  box.pose.translation = undiscretize(r.grasp, r.spec.workspace).position;
  box.size = Vec3(0.08, 0.06, 0.04);
  r.spec.objects.push_back(box);
  r.rest_left = discretize_action(ContinuousPose{r.spec.left_base}, r.spec.workspace);
  return r;
}

std::vector<Vec3> positions(const env::Body& b) {
  std::vector<Vec3> out;
  for (const Gaussian& g : env::body_gaussians(b).gaussians) out.push_back(g.mu);
  return out;
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return files;
}

}  // namespace

TEST_SUITE("synth_env") {
  TEST_CASE("a box becomes a 64-Gaussian lattice labeled with its class") {
    for (InstanceClass c : {kStabilizingArm, kActingArm, kTargetObject}) {
      const GaussianSet s = env::primitive_gaussians(env::Primitive::kBox, Vec3::Ones(), Vec3(0.3, 0.3, 0.3), c, 1);
      REQUIRE(s.size() == 64);
      for (const Gaussian& g : s.gaussians) CHECK(argmax(g.logits) == int(c));
    }
    const GaussianSet sphere = env::primitive_gaussians(env::Primitive::kSphere, Vec3::Constant(0.2),
                                                        Vec3(0.1, 0.2, 0.3), kTargetObject, 1);
    CHECK(sphere.size() == 64);
  }

  TEST_CASE("scene construction is deterministic") {
    const env::TaskScript a = env::sample_script(env::TaskId::kLiftTray, 9);
    const env::TaskScript b = env::sample_script(env::TaskId::kLiftTray, 9);
    CHECK(env::build_scene(a.scene).gaussians == env::build_scene(b.scene).gaussians);
  }

  TEST_CASE("overlapping arm bases are a spec error") {
    env::SceneSpec spec;
    spec.right_base = spec.left_base;
    CHECK_THROWS_AS(env::build_scene(spec), SpecError);
  }

  TEST_CASE("rendered labels of an isolated box match its class") {
    const GaussianSet box =
        env::primitive_gaussians(env::Primitive::kBox, Vec3::Constant(0.3), Vec3(0.2, 0.7, 0.2), kActingArm, 2);
    std::mt19937_64 rng(2);
    for (int c = 0; c < 3; ++c) {
      const Camera cam = hgwm::testing::random_camera(rng, 48, 48);
      const env::RenderedView rv = env::render_view(box, cam);
      std::size_t silhouette = 0, right = 0;
      for (std::size_t i = 0; i < rv.labels.data.size(); ++i) {
        if (rv.depth.data[i] <= 0.0) continue;
        ++silhouette;
        right += rv.labels.data[i] == kActingArm;
      }
      REQUIRE(silhouette > 50);
      CHECK(double(right) / double(silhouette) >= 0.99);
    }
  }

  TEST_CASE("a zero-displacement action leaves the state bit-identical") {
    const GraspRig r = grasp_rig();
    const env::EnvState s0 = env::make_state(r.spec);
    const env::EnvState s1 = env::step_env(s0, BimanualAction::from_arms(s0.left.bins, s0.right.bins, r.spec.role));
    CHECK(s1.gaussians().gaussians == s0.gaussians().gaussians);
    CHECK(s1.left.holding == s0.left.holding);
    CHECK(s1.right.holding == s0.right.holding);
  }

  TEST_CASE("a held object follows its gripper translation exactly") {
    const GraspRig r = grasp_rig();
    const env::EnvState s0 = env::make_state(r.spec);
    const env::EnvState s1 = env::step_env(s0, BimanualAction::from_arms(r.rest_left, r.grasp, r.spec.role));
    REQUIRE(s1.right.holding == 0);
    ArmAction moved = r.grasp;
    moved.trans_bin[0] += 5;
    const env::EnvState s2 = env::step_env(s1, BimanualAction::from_arms(r.rest_left, moved, r.spec.role));
    const Vec3 delta = s2.right.ee.translation - s1.right.ee.translation;
    CHECK((delta - Vec3(0.1, 0, 0)).norm() < 1e-12);
    const auto before = positions(s1.objects[0]), after = positions(s2.objects[0]);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK((after[i] - before[i] - delta).norm() < 1e-12);
  }

  TEST_CASE("a 90 degree yaw rotates the held object about the gripper") {
    const GraspRig r = grasp_rig();
    const env::EnvState s0 = env::make_state(r.spec);
    const env::EnvState s1 = env::step_env(s0, BimanualAction::from_arms(r.rest_left, r.grasp, r.spec.role));
    REQUIRE(s1.right.holding == 0);
    ArmAction turned = r.grasp;
    turned.rot_bins[2] += 18;
    const env::EnvState s2 = env::step_env(s1, BimanualAction::from_arms(r.rest_left, turned, r.spec.role));
    Mat3 rz;
    rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Vec3 pivot = s1.right.ee.translation;
    const auto before = positions(s1.objects[0]), after = positions(s2.objects[0]);
    for (std::size_t i = 0; i < before.size(); ++i) {
      const Vec3 expect = pivot + rz * (before[i] - pivot);
      CHECK((after[i] - expect).norm() < 1e-9);
    }
  }

  TEST_CASE("the other arm's motion does not move a held object") {
    const GraspRig r = grasp_rig();
    const env::EnvState s0 = env::make_state(r.spec);
    const env::EnvState s1 = env::step_env(s0, BimanualAction::from_arms(r.rest_left, r.grasp, r.spec.role));
    ArmAction left = r.rest_left;
    left.trans_bin[2] += 3;
    const env::EnvState s2 = env::step_env(s1, BimanualAction::from_arms(left, r.grasp, r.spec.role));
    CHECK(positions(s2.objects[0]) == positions(s1.objects[0]));
    CHECK(s2.left_arm.pose.translation != s1.left_arm.pose.translation);
  }

  TEST_CASE("stepping conserves per-instance counts and inherent properties") {
    const env::TaskScript script = env::sample_script(env::TaskId::kHandover, 4);
    std::vector<GaussianSet> scenes;
    REQUIRE(env::run_script(script, &scenes).has_value());
    for (const GaussianSet& s : scenes) {
      REQUIRE(s.size() == scenes[0].size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        const Gaussian &a = s.gaussians[i], &b = scenes[0].gaussians[i];
        CHECK(a.color == b.color);
        CHECK(a.scale == b.scale);
        CHECK(a.opacity == b.opacity);
        CHECK(a.logits == b.logits);
      }
    }
  }

  TEST_CASE("future frames are renders of the next ground-truth scene") {
    const env::RigConfig rig{2, 24, 24};
    std::vector<GaussianSet> scenes;
    const DemoTrajectory d = env::generate_episode(env::TaskId::kPushBox, 3, rig, Bounds{}, &scenes);
    REQUIRE(scenes.size() == d.steps.size());
    const auto cams = env::camera_rig(rig);
    for (std::size_t k = 0; k + 1 < d.steps.size(); ++k)
      for (std::size_t v = 0; v < cams.size(); ++v) {
        const env::RenderedView rv = env::render_view(scenes[k + 1], cams[v]);
        CHECK(rv.rgb == d.steps[k].next_rgb[v]);
        CHECK(rv.labels == d.steps[k].next_labels[v]);
      }
  }

  TEST_CASE("every task yields valid successful demos with clean masks") {
    for (env::TaskId t : {env::TaskId::kPushBox, env::TaskId::kLiftTray, env::TaskId::kHandover}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const DemoTrajectory d = env::generate_episode(t, seed, env::RigConfig{2, 16, 16});
        CHECK_NOTHROW(d.validate());
        CHECK(d.task == env::task_name(t));
        CHECK(d.language == env::task_instruction(t));
        for (const DemoStep& s : d.steps)
          for (const LabelImage& lab : s.labels)
            for (std::uint8_t l : lab.data) CHECK((l <= 2 || l == LabelImage::kIgnore));
      }
    }
  }

  TEST_CASE("push-box episode length regression") {
    // Frozen from the first generation run with default waypoints.
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed)
      total += double(env::generate_episode(env::TaskId::kPushBox, seed, env::RigConfig{1, 8, 8}).steps.size());
    CHECK(total / 5.0 == 7.0);
  }

  TEST_CASE("rejection sampling gives up after 20 failures") {
    int calls = 0;
    const auto impossible = [&](std::uint64_t seed) {
      ++calls;
      env::TaskScript s = env::sample_script(env::TaskId::kPushBox, seed);
      for (env::Waypoint& w : s.waypoints) w.right.position = Vec3(5, 0, 0);
      return s;
    };
    CHECK_THROWS_AS(env::generate_episode(impossible, 1), SpecError);
    CHECK(calls == 21);
  }

  TEST_CASE("dataset generation is byte-identical for a fixed seed") {
    const fs::path a = fs::temp_directory_path() / "hgwm_test_gen_a";
    const fs::path b = fs::temp_directory_path() / "hgwm_test_gen_b";
    fs::remove_all(a);
    fs::remove_all(b);
    const env::RigConfig rig{2, 16, 16};
    env::generate_demos(env::TaskId::kHandover, 2, 77, a, rig);
    env::generate_demos(env::TaskId::kHandover, 2, 77, b, rig);
    const auto ta = read_tree(a), tb = read_tree(b);
    CHECK(ta.size() > 10);
    CHECK(ta == tb);
  }
}
