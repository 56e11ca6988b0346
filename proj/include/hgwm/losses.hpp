#pragma once

#include <cstddef>
#include <vector>

#include "hgwm/autodiff.hpp"
#include "hgwm/core_types.hpp"
#include "hgwm/models.hpp"

namespace hgwm {

struct LossWeights {
  double recon = 0.1;
  double task = 0.1;
  double pred = 0.1;

  void validate() const;
};

enum class Reduction {
  kSum,        // plain sum over pixels and channels
  kPixelMean,  // the sum divided by the pixel count
};

// Squared color error of one rendered view [H,W,3] against its target.
ad::Tensor loss_recon(const ad::Tensor& pred, const RgbImage& target, Reduction r = Reduction::kSum);
// Mean of loss_recon over the given views.
ad::Tensor loss_recon(const std::vector<ad::Tensor>& preds, const std::vector<const RgbImage*>& targets,
                      Reduction r = Reduction::kSum);

// Cross-entropy of the rendered logits [H,W,3] over non-ignored pixels,
// normalized by their count. All-ignored maps give 0 and bump a counter.
ad::Tensor loss_task(const ad::Tensor& logit_map, const LabelImage& labels);
std::size_t empty_task_loss_count();

// loss_recon per view, averaged over views.
ad::Tensor loss_pred(const std::vector<ad::Tensor>& preds, const std::vector<const RgbImage*>& targets,
                     Reduction r = Reduction::kSum);

// Sum over both arms of the eight per-head cross-entropies.
ad::Tensor loss_bc(const PolicyLogits& pred, const BimanualAction& gt);

struct LossComponents {
  ad::Tensor bc;
  ad::Tensor recon;
  ad::Tensor task;
  ad::Tensor pred;
};

// L_BC + recon * L_Recon + task * L_Task + pred * L_Pred. Undefined components
// count as zero. Throws NonFiniteError on a non-finite component.
ad::Tensor loss_total(const LossComponents& c, const LossWeights& w);

}  // namespace hgwm
