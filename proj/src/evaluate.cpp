#include "hgwm/evaluate.hpp"

#include <cmath>
#include <limits>

#include "hgwm/errors.hpp"
#include "hgwm/rasterizer.hpp"
#include "hgwm/trainer.hpp"
#include "hgwm/world_model.hpp"

namespace hgwm {

namespace {

RgbImage to_image(const ad::Tensor& t) {
  RgbImage img(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
  img.data.assign(t.data().begin(), t.data().end());
  return img;
}

ad::Tensor to_tensor(const RgbImage& img) {
  return ad::Tensor::from({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3}, img.data);
}

ad::Tensor logit_tensor(const std::vector<double>& logits, int w, int h) {
  if (logits.size() != static_cast<std::size_t>(w) * h * 3) throw ShapeError("logit map size mismatch");
  return ad::Tensor::from({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3}, logits);
}

int argmax3(const double* p) {
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

void peak(std::vector<double>& row, const ArmAction& a) {
  auto set = [&](int head, int bin) { row[static_cast<std::size_t>(head_span(head).offset + bin)] = 20.0; };
  for (int k = 0; k < 3; ++k) {
    set(k, a.trans_bin[k]);
    set(3 + k, a.rot_bins[k]);
  }
  set(6, a.open ? 1 : 0);
  set(7, a.collide ? 1 : 0);
}

std::array<int, kHeadsPerArm> head_targets(const ArmAction& a) {
  return {a.trans_bin[0], a.trans_bin[1], a.trans_bin[2], a.rot_bins[0], a.rot_bins[1], a.rot_bins[2],
          a.open ? 1 : 0, a.collide ? 1 : 0};
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

// ---- report I/O -------------------------------------------------------------------

io::KeyValue EvalReport::to_kv() const {
  io::KeyValue kv;
  kv.set("samples", std::to_string(samples));
  kv.set("l_bc", l_bc);
  kv.set("l_recon", l_recon);
  kv.set("l_task", l_task);
  kv.set("l_pred", l_pred);
  kv.set("total", total);
  kv.set("mse", mse);
  kv.set("psnr", psnr);
  kv.set("psnr_infinite", psnr_infinite);
  kv.set("mask_accuracy", mask_accuracy);
  kv.set("mask_pixels", std::to_string(mask_pixels));
  kv.set("future_mask_accuracy", future_mask_accuracy);
  kv.set("future_mask_pixels", std::to_string(future_mask_pixels));
  std::vector<double> heads(head_accuracy.begin(), head_accuracy.end());
  kv.set("head_accuracy", io::join_doubles(heads));
  kv.set("head_decisions", std::to_string(head_decisions));
  kv.set("trans_accuracy", trans_accuracy);
  kv.set("rot_accuracy", rot_accuracy);
  kv.set("binary_accuracy", binary_accuracy);
  kv.set("trans_bin_error", trans_bin_error);
  return kv;
}

EvalReport EvalReport::from_kv(const io::KeyValue& kv) {
  auto count = [&](const std::string& k) { return static_cast<std::size_t>(std::stoull(kv.get(k))); };
  EvalReport r;
  r.samples = count("samples");
  r.l_bc = kv.get_double("l_bc");
  r.l_recon = kv.get_double("l_recon");
  r.l_task = kv.get_double("l_task");
  r.l_pred = kv.get_double("l_pred");
  r.total = kv.get_double("total");
  r.mse = kv.get_double("mse");
  r.psnr = kv.get_double("psnr");
  r.psnr_infinite = kv.get_bool("psnr_infinite");
  r.mask_accuracy = kv.get_double("mask_accuracy");
  r.mask_pixels = count("mask_pixels");
  r.future_mask_accuracy = kv.get_double("future_mask_accuracy");
  r.future_mask_pixels = count("future_mask_pixels");
  const auto heads = kv.get_doubles("head_accuracy");
  if (heads.size() != r.head_accuracy.size()) throw FormatError("head_accuracy needs 16 values");
  std::copy(heads.begin(), heads.end(), r.head_accuracy.begin());
  r.head_decisions = count("head_decisions");
  r.trans_accuracy = kv.get_double("trans_accuracy");
  r.rot_accuracy = kv.get_double("rot_accuracy");
  r.binary_accuracy = kv.get_double("binary_accuracy");
  r.trans_bin_error = kv.get_double("trans_bin_error");
  return r;
}

// ---- predictors ---------------------------------------------------------------------

Predictor model_predictor(const ModelParams& params) {
  return [&params](std::size_t, const DemoTrajectory& demo, std::size_t step) {
    ad::NoGradScope no_grad;
    const DemoStep& s = demo.steps.at(step);
    std::vector<Camera> cams;
    for (const View& v : s.obs.views) cams.push_back(v.camera);
    const PredictionBundle b = predict_step(s.obs, s.action, cams, params);
    SamplePrediction p;
    for (const auto& r : b.current_render) {
      p.current_rgb.push_back(to_image(r.rgb));
      p.current_logits.emplace_back(r.logits.data().begin(), r.logits.data().end());
    }
    for (const auto& r : b.future_render) {
      p.future_rgb.push_back(to_image(r.rgb));
      p.future_logits.emplace_back(r.logits.data().begin(), r.logits.data().end());
    }
    const PolicyLogits pol = decode_actions(b.v, demo.language, params);
    p.policy_logits.assign(pol.logits.data().begin(), pol.logits.data().end());
    return p;
  };
}

Predictor oracle_predictor(const std::vector<std::vector<GaussianSet>>* scenes) {
  if (scenes == nullptr) throw UsageError("oracle predictor needs ground-truth scenes");
  return [scenes](std::size_t d, const DemoTrajectory& demo, std::size_t step) {
    const DemoStep& s = demo.steps.at(step);
    const auto& seq = scenes->at(d);
    if (step + 1 >= seq.size()) throw UsageError("no ground-truth scene after step " + std::to_string(step));
    SamplePrediction p;
    for (const View& v : s.obs.views) {
      const raster::RenderOutput now = raster::render(seq[step], v.camera);
      const raster::RenderOutput next = raster::render(seq[step + 1], v.camera);
      p.current_rgb.push_back(now.rgb_image());
      p.current_logits.push_back(now.logit_map);
      p.future_rgb.push_back(next.rgb_image());
      p.future_logits.push_back(next.logit_map);
    }
    p.policy_logits.assign(2 * static_cast<std::size_t>(kArmLogits), 0.0);
    std::vector<double> row(kArmLogits, 0.0);
    peak(row, s.action.left());
    std::copy(row.begin(), row.end(), p.policy_logits.begin());
    row.assign(kArmLogits, 0.0);
    peak(row, s.action.right());
    std::copy(row.begin(), row.end(), p.policy_logits.begin() + kArmLogits);
    return p;
  };
}

// ---- evaluation ---------------------------------------------------------------------

namespace {

void count_mask(const std::vector<double>& logits, const LabelImage& lab, std::size_t& pixels, std::size_t& hits) {
  if (logits.size() != lab.data.size() * 3) throw ShapeError("logit map size mismatch");
  for (std::size_t i = 0; i < lab.data.size(); ++i) {
    if (lab.data[i] == LabelImage::kIgnore) continue;
    ++pixels;
    if (argmax3(&logits[3 * i]) == lab.data[i]) ++hits;
  }
}

}  // namespace

EvalReport evaluate(const Predictor& predictor, const std::vector<DemoTrajectory>& demos, const EvalOptions& opts) {
  EvalReport rep;
  double sq = 0.0;
  std::size_t sq_n = 0;
  std::size_t mask_hit = 0, future_mask_hit = 0;
  std::array<std::size_t, 2 * kHeadsPerArm> head_hit{};
  std::size_t policy_samples = 0;
  double bin_dist = 0.0;

  for (std::size_t d = 0; d < demos.size(); ++d) {
    const DemoTrajectory& demo = demos[d];
    for (std::size_t k = 0; k < demo.steps.size(); ++k) {
      const DemoStep& s = demo.steps[k];
      if (!s.has_next()) continue;
      if (opts.max_samples != 0 && rep.samples >= opts.max_samples) break;
      const SamplePrediction p = predictor(d, demo, k);
      const std::size_t nv = s.obs.views.size();
      if (p.current_rgb.size() != nv || p.future_rgb.size() != nv || p.current_logits.size() != nv ||
          p.future_logits.size() != nv) {
        throw ShapeError("prediction must cover every camera");
      }

      LossComponents lc;
      std::vector<ad::Tensor> cur, fut;
      std::vector<const RgbImage*> cur_t, fut_t;
      ad::Tensor task = ad::Tensor::scalar(0.0);
      for (std::size_t v = 0; v < nv; ++v) {
        cur.push_back(to_tensor(p.current_rgb[v]));
        cur_t.push_back(&s.obs.views[v].rgb);
        fut.push_back(to_tensor(p.future_rgb[v]));
        fut_t.push_back(&s.next_rgb[v]);
        const LabelImage& lab = s.labels[v];
        task = ad::add(task, loss_task(logit_tensor(p.current_logits[v], lab.width, lab.height), lab));
      }
      lc.recon = loss_recon(cur, cur_t, opts.reduction);
      lc.task = ad::scale(task, 1.0 / static_cast<double>(nv));
      lc.pred = loss_pred(fut, fut_t, opts.reduction);

      if (!p.policy_logits.empty()) {
        if (p.policy_logits.size() != 2 * static_cast<std::size_t>(kArmLogits)) throw ShapeError("policy logits must be 2 x 520");
        const PolicyLogits pol{ad::Tensor::from({2, static_cast<std::size_t>(kArmLogits)}, p.policy_logits)};
        lc.bc = loss_bc(pol, s.action);
        ++policy_samples;
        for (int arm = 0; arm < 2; ++arm) {
          const auto got = head_targets(pol.argmax(arm));
          const auto want = head_targets(arm == 0 ? s.action.left() : s.action.right());
          for (int h = 0; h < kHeadsPerArm; ++h) {
            if (got[h] == want[h]) ++head_hit[arm * kHeadsPerArm + h];
            if (h < 3) bin_dist += std::abs(got[h] - want[h]);
          }
        }
      }
      rep.l_bc += lc.bc.defined() ? lc.bc.item() : 0.0;
      rep.l_recon += lc.recon.item();
      rep.l_task += lc.task.item();
      rep.l_pred += lc.pred.item();
      rep.total += loss_total(lc, opts.weights).item();

      for (std::size_t v = 0; v < nv; ++v) {
        const RgbImage& a = p.future_rgb[v];
        const RgbImage& b = s.next_rgb[v];
        for (std::size_t i = 0; i < a.data.size(); ++i) {
          const double e = a.data[i] - b.data[i];
          sq += e * e;
        }
        sq_n += a.data.size();
        count_mask(p.current_logits[v], s.labels[v], rep.mask_pixels, mask_hit);
        count_mask(p.future_logits[v], s.next_labels[v], rep.future_mask_pixels, future_mask_hit);
      }
      ++rep.samples;
    }
  }
  if (rep.samples == 0) throw UsageError("no transitions to evaluate");

  const double n = static_cast<double>(rep.samples);
  for (double* v : {&rep.l_bc, &rep.l_recon, &rep.l_task, &rep.l_pred, &rep.total}) *v /= n;
  rep.mse = sq / static_cast<double>(sq_n);
  rep.psnr = psnr_from_mse(rep.mse);
  rep.psnr_infinite = std::isinf(rep.psnr);
  rep.mask_accuracy = rep.mask_pixels ? static_cast<double>(mask_hit) / static_cast<double>(rep.mask_pixels) : 0.0;
  rep.future_mask_accuracy = rep.future_mask_pixels
                                 ? static_cast<double>(future_mask_hit) / static_cast<double>(rep.future_mask_pixels)
                                 : 0.0;

  rep.head_decisions = policy_samples * 2 * kHeadsPerArm;
  if (policy_samples > 0) {
    const double ps = static_cast<double>(policy_samples);
    std::size_t trans = 0, rot = 0, bin = 0;
    for (int arm = 0; arm < 2; ++arm) {
      for (int h = 0; h < kHeadsPerArm; ++h) {
        const std::size_t hits = head_hit[arm * kHeadsPerArm + h];
        rep.head_accuracy[arm * kHeadsPerArm + h] = static_cast<double>(hits) / ps;
        (h < 3 ? trans : h < 6 ? rot : bin) += hits;
      }
    }
    rep.trans_accuracy = static_cast<double>(trans) / (6.0 * ps);
    rep.rot_accuracy = static_cast<double>(rot) / (6.0 * ps);
    rep.binary_accuracy = static_cast<double>(bin) / (4.0 * ps);
    rep.trans_bin_error = bin_dist / (6.0 * ps);
  }
  return rep;
}

EvalReport evaluate(const ModelParams& params, const std::vector<DemoTrajectory>& demos, const EvalOptions& opts) {
  return evaluate(model_predictor(params), demos, opts);
}

EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_root,
                               const ModelConfig* expected, const EvalOptions& opts) {
  const Checkpoint ck = load_checkpoint(checkpoint, expected);
  const std::vector<DemoTrajectory> demos = io::read_dataset(dataset_root);
  if (demos.empty()) throw FormatError("dataset has no demos");
  for (const DemoTrajectory& d : demos) {
    const ModelConfig& c = ck.params.config();
    if ((d.workspace.lo - c.workspace.lo).norm() != 0.0 || (d.workspace.hi - c.workspace.hi).norm() != 0.0) {
      throw ManifestMismatchError("dataset workspace differs from the checkpoint's");
    }
  }
  return evaluate(ck.params, demos, opts);
}

}  // namespace hgwm
