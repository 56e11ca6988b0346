#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "hgwm/io.hpp"
#include "hgwm/losses.hpp"
#include "hgwm/models.hpp"

namespace hgwm {

/// Metrics over a dataset split. Heads are indexed arm * 8 + head, with the
/// per-arm head order of head_span().
struct EvalReport {
  std::size_t samples = 0;
  double l_bc = 0.0;
  double l_recon = 0.0;
  double l_task = 0.0;
  double l_pred = 0.0;
  double total = 0.0;

  double mse = 0.0;  // future frames, per channel
  double psnr = 0.0;
  bool psnr_infinite = false;

  // Argmax of rendered logits against labels, non-ignored pixels only.
  double mask_accuracy = 0.0;  // current frames
  std::size_t mask_pixels = 0;
  double future_mask_accuracy = 0.0;  // predicted frames against next-step labels
  std::size_t future_mask_pixels = 0;

  std::array<double, 2 * kHeadsPerArm> head_accuracy{};
  std::size_t head_decisions = 0;
  double trans_accuracy = 0.0;
  double rot_accuracy = 0.0;
  double binary_accuracy = 0.0;  // open and collide heads
  double trans_bin_error = 0.0;  // mean |argmax - expert| over translation heads

  io::KeyValue to_kv() const;
  static EvalReport from_kv(const io::KeyValue& kv);
  bool operator==(const EvalReport&) const = default;
};

/// What a world model plus policy produced for one transition. Logit maps are
/// row-major H x W x 3.
struct SamplePrediction {
  std::vector<RgbImage> current_rgb;  // every camera
  std::vector<std::vector<double>> current_logits;
  std::vector<RgbImage> future_rgb;
  std::vector<std::vector<double>> future_logits;
  std::vector<double> policy_logits;  // 2 x kArmLogits, empty when there is no policy
};

// Called with the demo's index in the evaluated split, the demo and the step.
using Predictor = std::function<SamplePrediction(std::size_t demo_index, const DemoTrajectory&, std::size_t step)>;

Predictor model_predictor(const ModelParams& params);

// Ground-truth "perfect model": renders the true scenes and returns logits
// peaked at the expert bins. scenes[d][k] are the Gaussians of demo d, step k.
Predictor oracle_predictor(const std::vector<std::vector<GaussianSet>>* scenes);

struct EvalOptions {
  LossWeights weights;
  Reduction reduction = Reduction::kPixelMean;
  // Cap on evaluated transitions (0 = all), taken in order.
  std::size_t max_samples = 0;
};

EvalReport evaluate(const Predictor& predictor, const std::vector<DemoTrajectory>& demos,
                    const EvalOptions& opts = {});
EvalReport evaluate(const ModelParams& params, const std::vector<DemoTrajectory>& demos,
                    const EvalOptions& opts = {});

// Loads a checkpoint (manifest checked against `expected` when given) and
// evaluates every demo under dataset_root.
EvalReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_root,
                               const ModelConfig* expected = nullptr, const EvalOptions& opts = {});

double psnr_from_mse(double mse);

}  // namespace hgwm
