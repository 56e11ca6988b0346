#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "../tools/cli.hpp"

namespace fs = std::filesystem;
using hgwm::cli::run;
using hgwm::cli::suggest;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help exits zero and lists every subcommand") {
    const Outcome o = call({"--help"});
    CHECK(o.code == 0);
    for (const char* sub : {"gen", "train", "eval", "render", "predict"}) CHECK(o.out.find(sub) != std::string::npos);
    for (const char* sub : {"gen", "train", "eval", "render", "predict"}) CHECK(call({sub, "--help"}).code == 0);
  }

  TEST_CASE("train help documents the metrics columns and determinism") {
    const Outcome o = call({"train", "--help"});
    CHECK(o.out.find("step,l_bc,l_recon,l_task,l_pred,total,wall_time") != std::string::npos);
    CHECK(o.out.find("single-worker") != std::string::npos);
  }

  TEST_CASE("usage errors exit one") {
    CHECK(call({}).code == 1);
    CHECK(call({"frobnicate"}).code == 1);
    CHECK(call({"gen", "--task", "push-box"}).code == 1);
    CHECK(call({"gen", "--task", "sweep", "--out", "x"}).code == 1);
    CHECK(call({"train", "--set", "nonsense=1", "--dataset", "x"}).code == 1);
  }

  TEST_CASE("unknown flag suggests the closest one") {
    const Outcome o = call({"train", "--stepz", "3"});
    CHECK(o.code == 1);
    CHECK(o.err.find("--steps") != std::string::npos);
    const Outcome sub = call({"trian"});
    CHECK(sub.code == 1);
    CHECK(sub.err.find("train") != std::string::npos);
  }

  TEST_CASE("suggest picks the nearest candidate or nothing") {
    CHECK(suggest("--stepz", {"--steps", "--seed", "--out"}) == "--steps");
    CHECK(suggest("evl", {"gen", "train", "eval"}) == "eval");
    CHECK(suggest("zzzzzzzz", {"gen", "train"}).empty());
  }

  TEST_CASE("runtime failures exit two") {
    const fs::path missing = fs::temp_directory_path() / "hgwm_cli_missing.ckpt";
    fs::remove(missing);
    CHECK(call({"eval", "--checkpoint", missing.string(), "--dataset", "/nonexistent"}).code == 2);
  }

  TEST_CASE("gen, train, predict, render and eval pipeline") {
    const fs::path dir = fs::temp_directory_path() / "hgwm_cli_gen";
    fs::remove_all(dir);
    REQUIRE(call({"gen", "--task", "handover-item", "--n", "1", "--seed", "3", "--out", dir.string(), "--image",
                  "16", "--cameras", "2"})
                .code == 0);
    CHECK(fs::exists(dir / "demos/000000/meta"));
    // predict writes the scene file that render consumes
    const fs::path run_dir = dir / "run";
    REQUIRE(call({"train", "--dataset", dir.string(), "--out", run_dir.string(), "--steps", "1", "--batch", "1",
                  "--set", "image=16", "--set", "cameras=2", "--set", "grid=8", "--set", "features=8"})
                .code == 0);
    const fs::path ckpt = run_dir / "checkpoints/step_000001.ckpt";
    REQUIRE(fs::exists(ckpt));
    const fs::path pred = dir / "pred";
    REQUIRE(call({"predict", "--checkpoint", ckpt.string(), "--demo", (dir / "demos/000000").string(), "--step", "0",
                  "--out", pred.string()})
                .code == 0);
    CHECK(fs::exists(pred / "predicted.bgs"));
    CHECK(fs::exists(pred / "view_0.future.rgb.ppm"));
    const fs::path img = dir / "render.ppm";
    CHECK(call({"render", "--scene", (pred / "current.bgs").string(), "--camera", "1", "--image", "24", "--out",
                img.string()})
              .code == 0);
    CHECK(fs::exists(img));
    CHECK(call({"eval", "--checkpoint", ckpt.string(), "--dataset", dir.string()}).code == 0);
  }
}
