#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hgwm/io.hpp"
#include "hgwm/losses.hpp"
#include "hgwm/models.hpp"

namespace hgwm {

enum class OptimizerKind { kSgd, kAdam };

/// Everything a training run depends on. Serialized into every checkpoint.
struct TrainConfig {
  std::filesystem::path dataset;
  std::filesystem::path out_dir = "run";
  LossWeights weights;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  int steps = 2000;
  int batch = 4;
  std::uint64_t seed = 0;
  int grid = 20;
  int image = 64;  // expected square image size of the dataset
  int cameras = 3;
  int eval_every = 500;
  int checkpoint_every = 500;
  Reduction reduction = Reduction::kPixelMean;
  bool log_wall_time = false;
  // Comma-separated parameter prefixes that are zeroed and frozen (ablations).
  std::string freeze;
  // Architecture knobs beyond the grid size.
  int features = 32;
  int mlp_hidden = 64;

  void validate() const;
  ModelConfig model_config(const Bounds& workspace) const;
  std::vector<std::string> frozen_prefixes() const;

  io::KeyValue to_kv() const;
  // Unknown keys throw UsageError; missing keys keep their defaults.
  static TrainConfig from_kv(const io::KeyValue& kv);
  static std::vector<std::string> keys();
};

/// Adam (or plain SGD) over the trainable tensors of a ModelParams.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, const ModelParams& params);

  void step(const ModelParams& params);
  long long steps() const { return t_; }

  void save_into(std::vector<std::pair<std::string, ad::Tensor>>& tensors) const;
  void load_from(const std::vector<std::pair<std::string, ad::Tensor>>& tensors, long long t);

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_ = OptimizerKind::kAdam;
  double lr_ = 1e-3;
  long long t_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// One supervised transition: demo index and step index.
struct SampleRef {
  std::size_t demo = 0;
  std::size_t step = 0;
};

std::vector<SampleRef> transition_samples(const std::vector<DemoTrajectory>& demos);

struct StepMetrics {
  long long step = 0;
  double bc = 0.0;
  double recon = 0.0;
  double task = 0.0;
  double pred = 0.0;
  double total = 0.0;
  double wall_time = 0.0;
  int skipped = 0;  // samples dropped for an empty scene

  // step,l_bc,l_recon,l_task,l_pred,total,wall_time
  std::string to_line() const;
};

inline constexpr const char* kMetricsColumns = "step,l_bc,l_recon,l_task,l_pred,total,wall_time";

struct SampleLosses {
  LossComponents parts;
  ad::Tensor total;
};

// Losses of one transition: L_Recon and L_Task on `supervision_view`, L_Pred on
// every view. Components with zero weight are not computed (left undefined).
SampleLosses sample_losses(const DemoTrajectory& demo, std::size_t step, std::size_t supervision_view,
                           const ModelParams& params, const LossWeights& w, Reduction r);

struct TrainResult {
  ModelParams params;
  std::vector<StepMetrics> metrics;
  std::filesystem::path last_checkpoint;
};

/// Checkpoint contents: parameters, optimizer moments, config and step.
struct Checkpoint {
  ModelParams params;
  TrainConfig config;
  long long step = 0;
  Optimizer optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
// `expected` (when given) must agree with the stored model manifest.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

struct TrainOptions {
  // In-memory dataset; when empty the config's dataset path is read.
  std::vector<DemoTrajectory> demos;
  // Checkpoint to continue from.
  std::filesystem::path resume;
  // Write checkpoints and logs under config.out_dir.
  bool write_files = true;
};

// Runs the loop. The metrics log gets one line per step plus the initial one.
// On a non-finite loss the run stops with NonFiniteError after flushing the
// log; the last checkpoint written stays the newest.
TrainResult train(const TrainConfig& config, const TrainOptions& opts = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, long long step);

}  // namespace hgwm
