#include "hgwm/losses.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "hgwm/errors.hpp"

namespace hgwm {

using ad::Tensor;

namespace {

std::atomic<std::size_t> g_empty_task{0};

void require_image_shape(const Tensor& t, int w, int h, const char* what) {
  if (t.shape() != ad::Shape{static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3}) {
    throw ShapeError(std::string(what) + ": prediction " + ad::shape_str(t.shape()) + " vs target " +
                     std::to_string(h) + "x" + std::to_string(w) + "x3");
  }
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {recon, task, pred}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights must be finite and non-negative");
  }
}

Tensor loss_recon(const Tensor& pred, const RgbImage& target, Reduction r) {
  require_image_shape(pred, target.width, target.height, "loss_recon");
  Tensor l = ad::sum_sq(ad::sub(pred, Tensor::from(pred.shape(), target.data)));
  if (r == Reduction::kPixelMean) l = ad::scale(l, 1.0 / (static_cast<double>(target.width) * target.height));
  return l;
}

Tensor loss_recon(const std::vector<Tensor>& preds, const std::vector<const RgbImage*>& targets, Reduction r) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ShapeError("loss_recon: " + std::to_string(preds.size()) + " predicted views vs " +
                     std::to_string(targets.size()) + " targets");
  }
  Tensor total = loss_recon(preds[0], *targets[0], r);
  for (std::size_t v = 1; v < preds.size(); ++v) total = ad::add(total, loss_recon(preds[v], *targets[v], r));
  return ad::scale(total, 1.0 / static_cast<double>(preds.size()));
}

Tensor loss_task(const Tensor& logit_map, const LabelImage& labels) {
  require_image_shape(logit_map, labels.width, labels.height, "loss_task");
  std::vector<std::size_t> rows, cls;
  for (std::size_t p = 0; p < labels.data.size(); ++p) {
    const std::uint8_t l = labels.data[p];
    if (l == LabelImage::kIgnore) continue;
    if (l >= kNumInstanceClasses) throw ValidationError("label " + std::to_string(l) + " is not a task class");
    rows.push_back(p);
    cls.push_back(l);
  }
  if (rows.empty()) {
    ++g_empty_task;
    return ad::scale(ad::sum(logit_map), 0.0);
  }
  const Tensor flat = ad::reshape(logit_map, {labels.data.size(), 3});
  const Tensor nll = ad::pick(ad::log_softmax(ad::gather_rows(flat, rows)), cls);
  return ad::scale(ad::sum(nll), -1.0 / static_cast<double>(rows.size()));
}

std::size_t empty_task_loss_count() { return g_empty_task.load(); }

Tensor loss_pred(const std::vector<Tensor>& preds, const std::vector<const RgbImage*>& targets, Reduction r) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ShapeError("loss_pred: " + std::to_string(preds.size()) + " predicted views vs " +
                     std::to_string(targets.size()) + " targets");
  }
  return loss_recon(preds, targets, r);
}

Tensor loss_bc(const PolicyLogits& pred, const BimanualAction& gt) {
  if (pred.logits.shape() != ad::Shape{2, static_cast<std::size_t>(kArmLogits)}) {
    throw ShapeError("loss_bc: policy logits have shape " + ad::shape_str(pred.logits.shape()));
  }
  Tensor total;
  for (int arm = 0; arm < 2; ++arm) {
    const ArmAction& a = arm == 0 ? gt.left() : gt.right();
    a.validate();
    const int bins[kHeadsPerArm] = {a.trans_bin[0], a.trans_bin[1], a.trans_bin[2], a.rot_bins[0],
                                    a.rot_bins[1],  a.rot_bins[2],  a.open ? 1 : 0, a.collide ? 1 : 0};
    for (int h = 0; h < kHeadsPerArm; ++h) {
      const Tensor lp = ad::pick(ad::log_softmax(pred.head(arm, h)), {static_cast<std::size_t>(bins[h])});
      total = total.defined() ? ad::add(total, lp) : lp;
    }
  }
  return ad::scale(ad::sum(total), -1.0);
}

Tensor loss_total(const LossComponents& c, const LossWeights& w) {
  w.validate();
  Tensor total;
  auto term = [&](const Tensor& t, double weight, const char* name) {
    if (!t.defined()) return;
    if (!std::isfinite(t.item())) {
      throw NonFiniteError(std::string("loss component ") + name + " is " + std::to_string(t.item()));
    }
    const Tensor s = weight == 1.0 ? t : ad::scale(t, weight);
    total = total.defined() ? ad::add(total, s) : s;
  };
  term(c.bc, 1.0, "bc");
  term(c.recon, w.recon, "recon");
  term(c.task, w.task, "task");
  term(c.pred, w.pred, "pred");
  if (!total.defined()) throw UsageError("loss_total needs at least one component");
  return total;
}

}  // namespace hgwm
