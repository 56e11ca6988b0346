#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include "hgwm/errors.hpp"
#include "hgwm/evaluate.hpp"
#include "hgwm/io.hpp"
#include "hgwm/rasterizer.hpp"
#include "hgwm/synth_env.hpp"
#include "hgwm/trainer.hpp"
#include "hgwm/world_model.hpp"

namespace hgwm::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTrainFooter =
    "Config file: flat `key = value` lines (# comments). Flags override the file; --set KEY=VALUE\n"
    "overrides both. Keys: batch cameras checkpoint_every dataset eval_every features freeze grid\n"
    "image lambda_pred lambda_recon lambda_task log_wall_time lr mlp_hidden optimizer out_dir\n"
    "reduction seed steps.\n"
    "\n"
    "Outputs under out_dir: metrics.csv, config.kv, checkpoints/step_NNNNNN.ckpt, eval_NNNNNN.kv.\n"
    "metrics.csv has one line per step plus the initial line, no header, columns:\n"
    "  step,l_bc,l_recon,l_task,l_pred,total,wall_time\n"
    "Line k holds the batch losses at the parameters before update k+1 (the last line after the\n"
    "final update). wall_time is 0 unless log_wall_time = 1.\n"
    "\n"
    "Runs are single-worker: identical config and seed give byte-identical logs and checkpoints.";

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::vector<std::string> long_flags(const CLI::App& app) {
  std::vector<std::string> out;
  for (const CLI::Option* o : app.get_options())
    for (const std::string& n : o->get_lnames()) out.push_back("--" + n);
  return out;
}

// CLI11 reports stray flags without naming a replacement; catch them first.
std::optional<std::string> unknown_flag(CLI::App& app, const std::vector<std::string>& args) {
  CLI::App* scope = &app;
  for (const std::string& a : args) {
    if (a == "--") break;
    if (a.rfind("--", 0) != 0) {
      if (scope == &app) {
        for (CLI::App* sub : app.get_subcommands({}))
          if (sub->get_name() == a) scope = sub;
      }
      continue;
    }
    const std::string name = a.substr(0, a.find('='));
    auto known = long_flags(*scope);
    if (scope != &app) {
      auto top = long_flags(app);
      known.insert(known.end(), top.begin(), top.end());
    }
    if (std::find(known.begin(), known.end(), name) != known.end()) continue;
    std::string msg = "unknown option '" + name + "'";
    const std::string s = suggest(name, known);
    if (!s.empty()) msg += "; did you mean '" + s + "'?";
    return msg;
  }
  return std::nullopt;
}

io::KeyValue parse_overrides(const std::vector<std::string>& sets) {
  io::KeyValue kv;
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

void print_report(std::ostream& out, const EvalReport& r) { out << r.to_kv().to_string(); }

}  // namespace

std::string suggest(const std::string& word, const std::vector<std::string>& candidates) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const std::string& c : candidates) {
    const std::size_t d = edit_distance(word, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best.empty() || best_d > std::max<std::size_t>(2, word.size() / 3)) return "";
  return best;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical Gaussian world model: data generation, training, evaluation and rendering."};
  app.name("hgwm");
  app.require_subcommand(1, 1);

  // gen
  CLI::App* gen = app.add_subcommand("gen", "Generate scripted demonstrations of a synthetic task");
  std::string task = "push-box";
  int n_demos = 1;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  int gen_image = 64;
  int gen_cameras = 3;
  gen->add_option("--task", task, "push-box | lift-tray-two-handed | handover-item")->capture_default_str();
  gen->add_option("--n", n_demos, "number of demos")->capture_default_str();
  gen->add_option("--seed", gen_seed, "dataset seed")->capture_default_str();
  gen->add_option("--out", gen_out, "dataset root (demos are written to <out>/demos/NNNNNN)")->required();
  gen->add_option("--image", gen_image, "square image size")->capture_default_str();
  gen->add_option("--cameras", gen_cameras, "camera count")->capture_default_str();

  // train
  CLI::App* tr = app.add_subcommand("train", "Train the world model and policy");
  std::string config_path, resume;
  std::vector<std::string> sets;
  std::optional<std::string> t_dataset, t_out;
  std::optional<int> t_steps, t_batch;
  std::optional<std::uint64_t> t_seed;
  std::optional<double> t_lr;
  tr->add_option("--config", config_path, "key = value config file");
  tr->add_option("--dataset", t_dataset, "dataset root");
  tr->add_option("--out", t_out, "output directory");
  tr->add_option("--steps", t_steps, "optimizer steps");
  tr->add_option("--batch", t_batch, "batch size");
  tr->add_option("--seed", t_seed, "run seed");
  tr->add_option("--lr", t_lr, "learning rate");
  tr->add_option("--set", sets, "KEY=VALUE config override (repeatable)");
  tr->add_option("--resume", resume, "checkpoint to continue from");
  tr->footer(kTrainFooter);

  // eval
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string e_ckpt, e_dataset, e_out;
  std::size_t e_max = 0;
  ev->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
  ev->add_option("--dataset", e_dataset, "dataset root")->required();
  ev->add_option("--out", e_out, "write the report (key = value) here");
  ev->add_option("--max-samples", e_max, "evaluate at most this many transitions (0 = all)")->capture_default_str();

  // render
  CLI::App* rd = app.add_subcommand("render", "Render a Gaussian scene file");
  std::string r_scene, r_camera_file, r_out, r_labels;
  int r_camera = 0, r_image = 64;
  rd->add_option("--scene", r_scene, "scene file (BGS1)")->required();
  rd->add_option("--camera", r_camera, "index into the default camera rig")->capture_default_str();
  rd->add_option("--image", r_image, "rig image size")->capture_default_str();
  rd->add_option("--camera-file", r_camera_file, "camera key = value file (prefix 'camera'), overrides --camera");
  rd->add_option("--out", r_out, "output RGB image (16-bit PPM)")->required();
  rd->add_option("--labels", r_labels, "also write the label map (PGM)");

  // predict
  CLI::App* pr = app.add_subcommand("predict", "Predict the next frame and actions for one demo step");
  std::string p_ckpt, p_demo, p_out;
  std::size_t p_step = 0;
  pr->add_option("--checkpoint", p_ckpt, "checkpoint file")->required();
  pr->add_option("--demo", p_demo, "demo directory")->required();
  pr->add_option("--step", p_step, "step index")->capture_default_str();
  pr->add_option("--out", p_out, "output directory")->required();

  std::vector<const char*> argv{"hgwm"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    if (auto msg = unknown_flag(app, args)) {
      err << "error: " << *msg << "\nRun with --help for usage.\n";
      return kExitUsage;
    }
    if (!args.empty() && args[0].rfind("-", 0) != 0) {
      std::vector<std::string> subs;
      for (CLI::App* sub : app.get_subcommands({})) subs.push_back(sub->get_name());
      if (std::find(subs.begin(), subs.end(), args[0]) == subs.end()) {
        err << "error: unknown subcommand '" << args[0] << "'";
        const std::string s = suggest(args[0], subs);
        if (!s.empty()) err << "; did you mean '" << s << "'?";
        err << "\nRun with --help for usage.\n";
        return kExitUsage;
      }
    }
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      env::RigConfig rig;
      rig.width = rig.height = gen_image;
      rig.cameras = gen_cameras;
      const env::TaskId id = env::parse_task(task);
      env::generate_demos(id, n_demos, gen_seed, gen_out, rig);
      out << "wrote " << n_demos << " " << task << " demos to " << (fs::path(gen_out) / "demos").string() << "\n";
    } else if (tr->parsed()) {
      io::KeyValue kv;
      if (!config_path.empty()) kv = io::KeyValue::read(config_path);
      if (t_dataset) kv.set("dataset", *t_dataset);
      if (t_out) kv.set("out_dir", *t_out);
      if (t_steps) kv.set("steps", *t_steps);
      if (t_batch) kv.set("batch", *t_batch);
      if (t_seed) kv.set("seed", std::to_string(*t_seed));
      if (t_lr) kv.set("lr", *t_lr);
      const io::KeyValue overrides = parse_overrides(sets);
      for (const auto& [k, v] : overrides.entries()) kv.set(k, v);
      const TrainConfig cfg = TrainConfig::from_kv(kv);
      if (cfg.dataset.empty()) throw UsageError("train needs a dataset (--dataset or dataset = ... in --config)");
      cfg.validate();
      TrainOptions opts;
      opts.resume = resume;
      const TrainResult r = train(cfg, opts);
      out << kMetricsColumns << "\n" << r.metrics.back().to_line() << "\n";
      out << "checkpoint " << r.last_checkpoint.string() << "\n";
    } else if (ev->parsed()) {
      EvalOptions eo;
      eo.max_samples = e_max;
      const Checkpoint ck = load_checkpoint(e_ckpt);
      eo.weights = ck.config.weights;
      eo.reduction = ck.config.reduction;
      const EvalReport rep = evaluate_checkpoint(e_ckpt, e_dataset, &ck.params.config(), eo);
      if (!e_out.empty()) rep.to_kv().write(e_out);
      print_report(out, rep);
    } else if (rd->parsed()) {
      const GaussianSet set = io::read_scene(r_scene);
      Camera cam;
      if (!r_camera_file.empty()) {
        cam = io::get_camera(io::KeyValue::read(r_camera_file), "camera");
      } else {
        env::RigConfig rig;
        rig.width = rig.height = r_image;
        const auto cams = env::camera_rig(rig);
        if (r_camera < 0 || r_camera >= static_cast<int>(cams.size())) throw UsageError("--camera out of range");
        cam = cams[static_cast<std::size_t>(r_camera)];
      }
      const raster::RenderOutput img = raster::render(set, cam);
      io::write_ppm(r_out, img.rgb_image());
      if (!r_labels.empty()) io::write_pgm(r_labels, img.label_map());
      out << "rendered " << set.size() << " Gaussians to " << r_out << "\n";
    } else if (pr->parsed()) {
      ad::NoGradScope no_grad;
      const Checkpoint ck = load_checkpoint(p_ckpt);
      const DemoTrajectory demo = io::read_demo(p_demo);
      if (p_step >= demo.steps.size()) throw UsageError("--step out of range");
      const DemoStep& s = demo.steps[p_step];
      std::vector<Camera> cams;
      for (const View& v : s.obs.views) cams.push_back(v.camera);
      PredictOptions po;
      po.render_current = false;
      po.render_future = false;
      const PredictionBundle b = predict_step(s.obs, s.action, cams, ck.params, po);
      const GaussianSet now = b.theta_t.to_set();
      const GaussianSet next = b.theta_t1.to_set();
      fs::create_directories(p_out);
      io::write_scene(fs::path(p_out) / "current.bgs", now);
      io::write_scene(fs::path(p_out) / "predicted.bgs", next);
      for (std::size_t v = 0; v < cams.size(); ++v) {
        for (const auto& [tag, set] : {std::pair<const char*, const GaussianSet*>{"current", &now}, {"future", &next}}) {
          const raster::RenderOutput img = raster::render(*set, cams[v]);
          const std::string stem = "view_" + std::to_string(v) + "." + tag;
          io::write_ppm(fs::path(p_out) / (stem + ".rgb.ppm"), img.rgb_image());
          io::write_pgm(fs::path(p_out) / (stem + ".mask.pgm"), img.label_map());
        }
      }
      const PolicyLogits pol = decode_actions(b.v, demo.language, ck.params);
      io::KeyValue acts;
      io::put_arm_action(acts, "left", pol.argmax(0));
      io::put_arm_action(acts, "right", pol.argmax(1));
      acts.write(fs::path(p_out) / "actions.kv");
      out << "predicted " << next.size() << " Gaussians into " << p_out << "\n";
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace hgwm::cli
