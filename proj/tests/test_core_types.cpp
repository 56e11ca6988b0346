#include <doctest.h>

#include <filesystem>
#include <random>

#include "hgwm/core_types.hpp"
#include "hgwm/errors.hpp"
#include "hgwm/io.hpp"
#include "hgwm/synth_env.hpp"
#include "support.hpp"

using namespace hgwm;
namespace fs = std::filesystem;

namespace {

Camera axis_camera(double focal, double c) {
  return Camera({focal, focal, c, c}, RigidTransform{}, 128, 128);
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hgwm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("core_types") {
  TEST_CASE("lower workspace corner discretizes to bin zero") {
    ContinuousPose p;
    p.position = Vec3(-1, -1, -1);
    p.open = 1.0;
    const ArmAction a = discretize_action(p, Bounds{});
    CHECK(a.trans_bin == std::array<int, 3>{0, 0, 0});
    CHECK(a.rot_bins == std::array<int, 3>{0, 0, 0});
    CHECK(a.open);
    CHECK_FALSE(a.collide);
  }

  TEST_CASE("359 degrees falls in the last of 72 rotation bins") {
    ContinuousPose p;
    p.euler_deg = Vec3(359, 0, 0);
    CHECK(discretize_action(p, Bounds{}).rot_bins[0] == 71);
  }

  TEST_CASE("workspace midpoint maps to bin 50") {
    ContinuousPose p;
    CHECK(discretize_action(p, Bounds{}).trans_bin == std::array<int, 3>{50, 50, 50});
  }

  TEST_CASE("upper bound clamps into the last bin and outside throws") {
    ContinuousPose p;
    p.position = Vec3(1, 1, 1);
    CHECK(discretize_action(p, Bounds{}).trans_bin == std::array<int, 3>{99, 99, 99});
    p.position = Vec3(1.01, 0, 0);
    CHECK_THROWS_AS(discretize_action(p, Bounds{}), OutOfWorkspaceError);
  }

  TEST_CASE("discretize after undiscretize is the identity on bins") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> tb(0, kTransBins - 1), rb(0, kRotBins - 1), bit(0, 1);
    Bounds ws;
    ws.lo = Vec3(-0.5, -1.0, 0.0);
    ws.hi = Vec3(0.5, 1.0, 2.0);
    for (int trial = 0; trial < 500; ++trial) {
      ArmAction a;
      for (int k = 0; k < 3; ++k) {
        a.trans_bin[k] = tb(rng);
        a.rot_bins[k] = rb(rng);
      }
      a.open = bit(rng);
      a.collide = bit(rng);
      CHECK(discretize_action(undiscretize(a, ws), ws) == a);
    }
  }

  TEST_CASE("pinhole projection: optical axis and similar triangles") {
    const Camera cam = axis_camera(100.0, 64.0);
    const auto on_axis = cam.project(Vec3(0, 0, 2));
    REQUIRE(on_axis);
    CHECK(on_axis->pixel.x() == doctest::Approx(64.0));
    CHECK(on_axis->pixel.y() == doctest::Approx(64.0));
    CHECK(on_axis->depth == doctest::Approx(2.0));
    const auto off = cam.project(Vec3(0.1, 0, 1));
    REQUIRE(off);
    CHECK(off->pixel.x() - 64.0 == doctest::Approx(10.0));
  }

  TEST_CASE("points behind the camera are culled, not an error") {
    const Camera cam = axis_camera(100.0, 64.0);
    CHECK_FALSE(cam.project(Vec3(0, 0, -1)).has_value());
    CHECK_FALSE(cam.project(Vec3(0, 0, 0)).has_value());
  }

  TEST_CASE("unproject then project round-trips a random cloud") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    double worst = 0.0;
    for (int c = 0; c < 5; ++c) {
      const Camera cam = hgwm::testing::random_camera(rng, 64, 48);
      for (int i = 0; i < 200; ++i) {
        const Vec3 p(u(rng), u(rng), u(rng));
        const auto pr = cam.project(p);
        REQUIRE(pr);
        const Vec3 back = cam.unproject(pr->pixel, pr->depth);
        worst = std::max(worst, (back - p).norm());
        const auto again = cam.project(back);
        worst = std::max(worst, (again->pixel - pr->pixel).norm());
      }
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("gaussian construction normalizes random quaternions") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
      const Gaussian g(Vec3::Zero(), Vec3::Constant(0.5), Vec4(n(rng), n(rng), n(rng), n(rng)),
                       Vec3::Constant(0.1), 0.5, Vec3::Zero());
      CHECK(std::abs(g.rot.norm() - 1.0) < 1e-12);
      CHECK_NOTHROW(g.validate());
    }
  }

  TEST_CASE("gaussian validation rejects broken invariants") {
    Gaussian g;
    g.scale = Vec3(0.1, 0.0, 0.1);
    CHECK_THROWS_AS(g.validate(), ValidationError);
    g = Gaussian();
    g.opacity = 0.0;
    CHECK_THROWS_AS(g.validate(), ValidationError);
    g = Gaussian();
    g.color = Vec3(1.2, 0, 0);
    CHECK_THROWS_AS(g.validate(), ValidationError);
  }

  TEST_CASE("camera rejects non-orthonormal extrinsics and bad focal") {
    RigidTransform t;
    t.rotation(0, 0) = 2.0;
    CHECK_THROWS_AS(Camera({100, 100, 0, 0}, t, 8, 8), ValidationError);
    CHECK_THROWS_AS(Camera({0, 100, 0, 0}, RigidTransform{}, 8, 8), ValidationError);
  }

  TEST_CASE("role assignment routes physical arms") {
    ArmAction l, r;
    l.trans_bin = {1, 2, 3};
    r.trans_bin = {4, 5, 6};
    const auto a = BimanualAction::from_arms(l, r, Role::kLeftStabilizes);
    CHECK(a.stabilizing == l);
    CHECK(a.left() == l);
    CHECK(a.right() == r);
    const auto b = BimanualAction::from_arms(l, r, Role::kRightStabilizes);
    CHECK(b.stabilizing == r);
    CHECK(b.left() == l);
    CHECK(b.right() == r);
  }
}

TEST_SUITE("io") {
  TEST_CASE("scene file round-trips bit-exactly") {
    std::mt19937_64 rng(2);
    GaussianSet set = hgwm::testing::random_scene(rng, 37);
    const fs::path dir = temp_dir("scene");
    io::write_scene(dir / "s.bgs", set);
    const GaussianSet back = io::read_scene(dir / "s.bgs");
    CHECK(back.gaussians == set.gaussians);
    const std::string bytes = io::read_file(dir / "s.bgs");
    CHECK(bytes.substr(0, 4) == "BGS1");
    CHECK(bytes.size() == 8 + 37 * 17 * 8);
  }

  TEST_CASE("truncated scene file is a format error") {
    const fs::path dir = temp_dir("scene_bad");
    io::write_file(dir / "s.bgs", std::string("BGS1\x05\0\0\0", 8));
    CHECK_THROWS_AS(io::read_scene(dir / "s.bgs"), FormatError);
  }

  TEST_CASE("key value text is sorted and round-trips doubles exactly") {
    io::KeyValue kv;
    kv.set("zeta", 0.1);
    kv.set("alpha", 1.0 / 3.0);
    kv.set("mid", 7);
    const io::KeyValue back = io::KeyValue::parse(kv.to_string());
    CHECK(back.get_double("alpha") == 1.0 / 3.0);
    CHECK(back.get_double("zeta") == 0.1);
    CHECK(back.get_int("mid") == 7);
    CHECK(kv.to_string().find("alpha") < kv.to_string().find("zeta"));
    CHECK_THROWS_AS(back.get("missing"), FormatError);
  }

  TEST_CASE("images round-trip within their quantization") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RgbImage rgb(7, 5);
    for (double& v : rgb.data) v = u(rng);
    DepthImage depth(7, 5);
    for (double& v : depth.data) v = 3.0 * u(rng);
    LabelImage lab(7, 5);
    for (std::size_t i = 0; i < lab.data.size(); ++i) lab.data[i] = i % 4 == 3 ? LabelImage::kIgnore : i % 4;
    const fs::path dir = temp_dir("images");
    io::write_ppm(dir / "a.ppm", rgb);
    io::write_depth(dir / "a.bin", depth);
    io::write_pgm(dir / "a.pgm", lab);
    const RgbImage rgb2 = io::read_ppm(dir / "a.ppm");
    const DepthImage d2 = io::read_depth(dir / "a.bin", 7, 5);
    CHECK(io::read_pgm(dir / "a.pgm") == lab);
    CHECK(hgwm::testing::max_abs_diff(rgb.data, rgb2.data) <= 0.5 / 65535.0 + 1e-12);
    CHECK(hgwm::testing::max_abs_diff(depth.data, d2.data) < 1e-6);
  }

  TEST_CASE("demo round-trips through the dataset layout") {
    const DemoTrajectory demo = env::generate_episode(env::TaskId::kPushBox, 4, env::RigConfig{1, 16, 16});
    const fs::path dir = temp_dir("demo");
    io::write_demo(dir / "demos" / "000000", demo);
    CHECK(fs::exists(dir / "demos/000000/meta"));
    CHECK(fs::exists(dir / "demos/000000/step_0/view_0.rgb.ppm"));
    CHECK(fs::exists(dir / "demos/000000/step_0/view_0.depth.bin"));
    CHECK(fs::exists(dir / "demos/000000/step_0/view_0.mask.pgm"));
    CHECK(fs::exists(dir / "demos/000000/step_0/action.kv"));
    const auto all = io::read_dataset(dir);
    REQUIRE(all.size() == 1);
    const DemoTrajectory& back = all[0];
    CHECK(back.language == demo.language);
    CHECK(back.task == demo.task);
    REQUIRE(back.steps.size() == demo.steps.size());
    for (std::size_t k = 0; k < demo.steps.size(); ++k) {
      CHECK(back.steps[k].action == demo.steps[k].action);
      CHECK(back.steps[k].labels == demo.steps[k].labels);
      CHECK(back.steps[k].obs.proprio == demo.steps[k].obs.proprio);
      CHECK(back.steps[k].has_next() == demo.steps[k].has_next());
      const Camera& a = back.steps[k].obs.views[0].camera;
      const Camera& b = demo.steps[k].obs.views[0].camera;
      CHECK((a.rotation() - b.rotation()).norm() < 1e-12);
      CHECK(a.intrinsics().fx == b.intrinsics().fx);
    }
  }
}
