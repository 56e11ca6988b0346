#include "hgwm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "hgwm/checkpoint.hpp"
#include "hgwm/errors.hpp"
#include "hgwm/evaluate.hpp"
#include "hgwm/world_model.hpp"

namespace hgwm {

namespace fs = std::filesystem;

namespace {

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }
const char* reduction_name(Reduction r) { return r == Reduction::kSum ? "sum" : "pixel_mean"; }

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || v.front() == '-') throw UsageError(key + ": expected an unsigned integer, got '" + v + "'");
  return x;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

bool all_finite(const ModelParams& p, bool grads) {
  for (const auto& [name, t] : p.tensors()) {
    const auto span = grads ? t.grad() : t.data();
    for (double v : span)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

// ---- config -------------------------------------------------------------------

void TrainConfig::validate() const {
  weights.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("lr must be positive");
  if (steps < 0) throw UsageError("steps must be non-negative");
  if (batch <= 0) throw UsageError("batch must be positive");
  if (grid <= 0) throw UsageError("grid must be positive");
  if (image <= 0) throw UsageError("image must be positive");
  if (cameras <= 0) throw UsageError("cameras must be positive");
  if (eval_every <= 0) throw UsageError("eval_every must be positive");
  if (checkpoint_every <= 0) throw UsageError("checkpoint_every must be positive");
  if (features <= 0 || mlp_hidden <= 0) throw UsageError("features and mlp_hidden must be positive");
}

ModelConfig TrainConfig::model_config(const Bounds& workspace) const {
  ModelConfig c;
  c.grid = grid;
  c.features = features;
  c.mlp_hidden = mlp_hidden;
  c.workspace = workspace;
  c.validate();
  return c;
}

std::vector<std::string> TrainConfig::frozen_prefixes() const {
  std::vector<std::string> out;
  std::stringstream ss(freeze);
  for (std::string part; std::getline(ss, part, ',');) {
    const auto b = part.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(part.substr(b, part.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

std::vector<std::string> TrainConfig::keys() {
  return {"batch",       "cameras",  "checkpoint_every", "dataset",      "eval_every",   "features",
          "freeze",      "grid",     "image",            "lambda_pred",  "lambda_recon", "lambda_task",
          "log_wall_time", "lr",     "mlp_hidden",       "optimizer",    "out_dir",      "reduction",
          "seed",        "steps"};
}

io::KeyValue TrainConfig::to_kv() const {
  io::KeyValue kv;
  kv.set("dataset", dataset.string());
  kv.set("out_dir", out_dir.string());
  kv.set("lambda_recon", weights.recon);
  kv.set("lambda_task", weights.task);
  kv.set("lambda_pred", weights.pred);
  kv.set("lr", lr);
  kv.set("optimizer", std::string(optimizer_name(optimizer)));
  kv.set("steps", steps);
  kv.set("batch", batch);
  kv.set("seed", std::to_string(seed));
  kv.set("grid", grid);
  kv.set("image", image);
  kv.set("cameras", cameras);
  kv.set("eval_every", eval_every);
  kv.set("checkpoint_every", checkpoint_every);
  kv.set("reduction", std::string(reduction_name(reduction)));
  kv.set("log_wall_time", log_wall_time);
  kv.set("freeze", freeze);
  kv.set("features", features);
  kv.set("mlp_hidden", mlp_hidden);
  return kv;
}

TrainConfig TrainConfig::from_kv(const io::KeyValue& kv) {
  const auto known = keys();
  for (const auto& [k, v] : kv.entries()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw UsageError("unknown config key '" + k + "'");
  }
  TrainConfig c;
  if (kv.has("dataset")) c.dataset = kv.get("dataset");
  if (kv.has("out_dir")) c.out_dir = kv.get("out_dir");
  if (kv.has("lambda_recon")) c.weights.recon = kv.get_double("lambda_recon");
  if (kv.has("lambda_task")) c.weights.task = kv.get_double("lambda_task");
  if (kv.has("lambda_pred")) c.weights.pred = kv.get_double("lambda_pred");
  if (kv.has("lr")) c.lr = kv.get_double("lr");
  if (kv.has("optimizer")) {
    const std::string o = kv.get("optimizer");
    if (o == "adam") {
      c.optimizer = OptimizerKind::kAdam;
    } else if (o == "sgd") {
      c.optimizer = OptimizerKind::kSgd;
    } else {
      throw UsageError("optimizer must be adam or sgd, got '" + o + "'");
    }
  }
  if (kv.has("steps")) c.steps = kv.get_int("steps");
  if (kv.has("batch")) c.batch = kv.get_int("batch");
  if (kv.has("seed")) c.seed = parse_u64("seed", kv.get("seed"));
  if (kv.has("grid")) c.grid = kv.get_int("grid");
  if (kv.has("image")) c.image = kv.get_int("image");
  if (kv.has("cameras")) c.cameras = kv.get_int("cameras");
  if (kv.has("eval_every")) c.eval_every = kv.get_int("eval_every");
  if (kv.has("checkpoint_every")) c.checkpoint_every = kv.get_int("checkpoint_every");
  if (kv.has("reduction")) {
    const std::string r = kv.get("reduction");
    if (r == "sum") {
      c.reduction = Reduction::kSum;
    } else if (r == "pixel_mean") {
      c.reduction = Reduction::kPixelMean;
    } else {
      throw UsageError("reduction must be sum or pixel_mean, got '" + r + "'");
    }
  }
  if (kv.has("log_wall_time")) c.log_wall_time = kv.get_bool("log_wall_time");
  if (kv.has("freeze")) c.freeze = kv.get("freeze");
  if (kv.has("features")) c.features = kv.get_int("features");
  if (kv.has("mlp_hidden")) c.mlp_hidden = kv.get_int("mlp_hidden");
  return c;
}

// ---- optimizer ----------------------------------------------------------------

Optimizer::Optimizer(OptimizerKind kind, double lr, const ModelParams& params) : kind_(kind), lr_(lr) {
  for (const auto& [name, t] : params.tensors()) {
    names_.push_back(name);
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Optimizer::step(const ModelParams& params) {
  const auto& ts = params.tensors();
  if (ts.size() != names_.size()) throw Error("optimizer was built for a different parameter set");
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < ts.size(); ++i) {
    ad::Tensor p = ts[i].second;  // shares storage with the parameter
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * g[k];
      continue;
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + kEps);
    }
  }
}

void Optimizer::save_into(std::vector<std::pair<std::string, ad::Tensor>>& tensors) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const ad::Shape s{m_[i].size()};
    tensors.emplace_back("optim.m/" + names_[i], ad::Tensor::from(s, m_[i]));
    tensors.emplace_back("optim.v/" + names_[i], ad::Tensor::from(s, v_[i]));
  }
}

void Optimizer::load_from(const std::vector<std::pair<std::string, ad::Tensor>>& tensors, long long t) {
  std::map<std::string, const ad::Tensor*> by_name;
  for (const auto& [n, tensor] : tensors) by_name[n] = &tensor;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"optim.m/", &m_[i]}, std::pair{"optim.v/", &v_[i]}}) {
      const auto it = by_name.find(prefix + names_[i]);
      if (it == by_name.end()) throw FormatError("checkpoint lacks optimizer state for '" + names_[i] + "'");
      if (it->second->numel() != dst->size()) throw FormatError("optimizer state size mismatch for '" + names_[i] + "'");
      dst->assign(it->second->data().begin(), it->second->data().end());
    }
  }
  t_ = t;
}

// ---- samples and losses -------------------------------------------------------------

std::vector<SampleRef> transition_samples(const std::vector<DemoTrajectory>& demos) {
  std::vector<SampleRef> out;
  for (std::size_t d = 0; d < demos.size(); ++d)
    for (std::size_t k = 0; k < demos[d].steps.size(); ++k)
      if (demos[d].steps[k].has_next()) out.push_back({d, k});
  return out;
}

std::string StepMetrics::to_line() const {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", wall_time);
  std::ostringstream os;
  os << step << ',' << io::format_double(bc) << ',' << io::format_double(recon) << ',' << io::format_double(task)
     << ',' << io::format_double(pred) << ',' << io::format_double(total) << ',' << wall;
  return os.str();
}

SampleLosses sample_losses(const DemoTrajectory& demo, std::size_t step, std::size_t supervision_view,
                           const ModelParams& params, const LossWeights& w, Reduction r) {
  const DemoStep& s = demo.steps.at(step);
  if (!s.has_next()) throw UsageError("step " + std::to_string(step) + " has no future frames");
  std::vector<Camera> cams;
  for (const View& v : s.obs.views) cams.push_back(v.camera);
  if (supervision_view >= cams.size()) throw UsageError("supervision view out of range");

  PredictOptions o;
  o.current_views = {supervision_view};
  o.render_current = w.recon > 0.0 || w.task > 0.0;
  o.render_future = w.pred > 0.0;
  const PredictionBundle b = predict_step(s.obs, s.action, cams, params, o);

  SampleLosses out;
  out.parts.bc = loss_bc(decode_actions(b.v, demo.language, params), s.action);
  if (w.recon > 0.0) out.parts.recon = loss_recon(b.current_render[0].rgb, s.obs.views[supervision_view].rgb, r);
  if (w.task > 0.0) out.parts.task = loss_task(b.current_render[0].logits, s.labels[supervision_view]);
  if (w.pred > 0.0) {
    std::vector<ad::Tensor> preds;
    std::vector<const RgbImage*> targets;
    for (std::size_t v = 0; v < b.future_render.size(); ++v) {
      preds.push_back(b.future_render[v].rgb);
      targets.push_back(&s.next_rgb[b.future_views[v]]);
    }
    out.parts.pred = loss_pred(preds, targets, r);
  }
  out.total = loss_total(out.parts, w);
  return out;
}

// ---- checkpoints -----------------------------------------------------------------

fs::path checkpoint_path(const fs::path& out_dir, long long step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%06lld.ckpt", step);
  return out_dir / "checkpoints" / name;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  ad::Archive a;
  a.meta = ck.params.manifest();
  const io::KeyValue cfg = ck.config.to_kv();
  for (const auto& [k, v] : cfg.entries()) a.meta["config." + k] = v;
  a.meta["state.step"] = std::to_string(ck.step);
  a.meta["state.optimizer_steps"] = std::to_string(ck.optimizer.steps());
  a.tensors = ck.params.tensors();
  ck.optimizer.save_into(a.tensors);
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  // write then rename, so an interrupted save never replaces a good file
  const fs::path tmp = path.string() + ".tmp";
  ad::save_archive(tmp, a);
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, const ModelConfig* expected) {
  const ad::Archive a = ad::load_archive(path);
  Checkpoint ck;
  ck.params = ModelParams::from_archive(a.meta, a.tensors, expected);
  io::KeyValue kv;
  for (const auto& [k, v] : a.meta)
    if (k.rfind("config.", 0) == 0) kv.set(k.substr(7), v);
  ck.config = TrainConfig::from_kv(kv);
  const auto get = [&](const std::string& key) -> long long {
    const auto it = a.meta.find(key);
    if (it == a.meta.end()) throw FormatError("checkpoint lacks '" + key + "'");
    return static_cast<long long>(parse_u64(key, it->second));
  };
  ck.step = get("state.step");
  ck.optimizer = Optimizer(ck.config.optimizer, ck.config.lr, ck.params);
  ck.optimizer.load_from(a.tensors, get("state.optimizer_steps"));
  return ck;
}

// ---- training loop ---------------------------------------------------------------

namespace {

void check_dataset(const TrainConfig& c, const std::vector<DemoTrajectory>& demos) {
  if (demos.empty()) throw FormatError("dataset has no demos");
  for (const DemoTrajectory& d : demos) {
    d.validate();
    if ((d.workspace.lo - demos.front().workspace.lo).norm() != 0.0 ||
        (d.workspace.hi - demos.front().workspace.hi).norm() != 0.0) {
      throw FormatError("demos disagree on the workspace");
    }
    for (const DemoStep& s : d.steps) {
      if (static_cast<int>(s.obs.views.size()) != c.cameras) {
        throw FormatError("demo has " + std::to_string(s.obs.views.size()) + " cameras, config expects " +
                          std::to_string(c.cameras));
      }
      for (const View& v : s.obs.views) {
        if (v.rgb.width != c.image || v.rgb.height != c.image) {
          throw FormatError("demo images are " + std::to_string(v.rgb.width) + "x" + std::to_string(v.rgb.height) +
                            ", config expects " + std::to_string(c.image));
        }
      }
    }
  }
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainOptions& opts) {
  config.validate();
  const std::vector<DemoTrajectory> demos = opts.demos.empty() ? io::read_dataset(config.dataset) : opts.demos;
  check_dataset(config, demos);
  const std::vector<SampleRef> samples = transition_samples(demos);
  if (samples.empty()) throw FormatError("dataset has no transitions with future frames");
  const ModelConfig mc = config.model_config(demos.front().workspace);
  const std::size_t n_views = static_cast<std::size_t>(config.cameras);

  TrainResult result;
  Optimizer optim;
  long long start = 0;
  if (!opts.resume.empty()) {
    Checkpoint ck = load_checkpoint(opts.resume, &mc);
    result.params = std::move(ck.params);
    optim = std::move(ck.optimizer);
    start = ck.step;
    if (start > config.steps) throw UsageError("checkpoint is past the requested step count");
  } else {
    result.params = ModelParams::init(mc, mix_seed(config.seed, 0x5eedULL));
  }
  for (const std::string& prefix : config.frozen_prefixes()) result.params.freeze_zero(prefix);
  if (opts.resume.empty()) optim = Optimizer(config.optimizer, config.lr, result.params);

  const fs::path metrics_path = config.out_dir / "metrics.csv";
  std::ofstream log;
  if (opts.write_files) {
    fs::create_directories(config.out_dir);
    std::vector<std::string> keep;
    if (start > 0) {
      keep = read_lines(metrics_path);
      if (static_cast<long long>(keep.size()) < start) throw FormatError("metrics log is shorter than the checkpoint step");
      keep.resize(static_cast<std::size_t>(start));
    }
    log.open(metrics_path, std::ios::trunc);
    for (const std::string& l : keep) log << l << '\n';
    log.flush();
    config.to_kv().write(config.out_dir / "config.kv");
  }
  auto save = [&](long long step) {
    if (!opts.write_files) return;
    const fs::path p = checkpoint_path(config.out_dir, step);
    save_checkpoint(p, Checkpoint{result.params, config, step, optim});
    result.last_checkpoint = p;
  };
  if (start == 0) save(0);

  const auto t0 = std::chrono::steady_clock::now();
  for (long long i = start; i <= config.steps; ++i) {
    const bool update = i < config.steps;
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_view(0, n_views - 1);

    StepMetrics m;
    m.step = i;
    int used = 0;
    try {
      for (int b = 0; b < config.batch; ++b) {
        const SampleRef s = samples[pick(rng)];
        const std::size_t view = pick_view(rng);
        ad::Tape tape;
        ad::TapeScope scope(tape);
        SampleLosses l;
        try {
          l = sample_losses(demos[s.demo], s.step, view, result.params, config.weights, config.reduction);
        } catch (const EmptySceneError&) {
          ++m.skipped;
          continue;
        } catch (const DegenerateObservationError&) {
          ++m.skipped;
          continue;
        }
        ++used;
        m.bc += l.parts.bc.item();
        if (l.parts.recon.defined()) m.recon += l.parts.recon.item();
        if (l.parts.task.defined()) m.task += l.parts.task.item();
        if (l.parts.pred.defined()) m.pred += l.parts.pred.item();
        m.total += l.total.item();
        if (update) ad::backward(ad::scale(l.total, 1.0 / config.batch));
      }
    } catch (const NonFiniteError&) {
      log.flush();
      throw NonFiniteError("non-finite loss at step " + std::to_string(i) + "; last good checkpoint kept");
    }
    if (used > 0) {
      for (double* v : {&m.bc, &m.recon, &m.task, &m.pred, &m.total}) *v /= used;
    }
    if (config.log_wall_time) m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);
    if (log.is_open()) {
      log << m.to_line() << '\n';
      log.flush();
    }
    if (!update) break;

    if (!all_finite(result.params, true)) {
      throw NonFiniteError("non-finite gradient at step " + std::to_string(i) + "; last good checkpoint kept");
    }
    optim.step(result.params);
    result.params.zero_grad();
    if (!result.params.all_finite()) {
      throw NonFiniteError("non-finite parameters after step " + std::to_string(i) + "; last good checkpoint kept");
    }
    const long long done = i + 1;
    if (done % config.checkpoint_every == 0 || done == config.steps) save(done);
    if (opts.write_files && (done % config.eval_every == 0 || done == config.steps)) {
      EvalOptions eo;
      eo.weights = config.weights;
      eo.reduction = config.reduction;
      char name[32];
      std::snprintf(name, sizeof name, "eval_%06lld.kv", done);
      evaluate(result.params, demos, eo).to_kv().write(config.out_dir / name);
    }
  }
  return result;
}

}  // namespace hgwm
