#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hgwm/autodiff.hpp"
#include "hgwm/core_types.hpp"

namespace hgwm {

enum class RotationUpdate { kAdditive, kCompose };

struct ModelConfig {
  int grid = 20;
  int features = 32;
  int conv_hidden = 16;
  int mlp_hidden = 64;
  int latents = 8;
  int attn_layers = 2;
  int attn_dim = 32;
  int lang_dim = 32;
  double occupancy_threshold = 0.5;
  Bounds workspace;
  RotationUpdate rotation_update = RotationUpdate::kAdditive;

  double cell_size() const { return workspace.extent().x() / grid; }
  std::size_t cells() const { return static_cast<std::size_t>(grid) * grid * grid; }
  void validate() const;
};

// Input channels of the voxelized observation: mean RGB plus an occupancy indicator.
inline constexpr int kVoxelChannels = 4;
inline constexpr int kProprioChannels = 3;
inline constexpr int kGaussianOutputs = 17;
inline constexpr int kDeltaOutputs = 7;  // position (3) + rotation (4)

/// Per-arm head layout of the policy logits: 3 x 100 translation, 3 x 72
/// rotation, 2 open, 2 collide.
inline constexpr int kArmLogits = 3 * kTransBins + 3 * kRotBins + 2 + 2;
inline constexpr int kHeadsPerArm = 8;

struct HeadSpan {
  int offset;
  int size;
};
// Head h of one arm: 0-2 translation axes, 3-5 rotation axes, 6 open, 7 collide.
HeadSpan head_span(int head);

/// Learnable parameters, stored as named leaf tensors in a fixed order.
class ModelParams {
 public:
  ModelParams() = default;
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ad::Tensor& operator[](const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<std::pair<std::string, ad::Tensor>>& tensors() const { return tensors_; }
  std::size_t parameter_count() const;

  // Deep copy with fresh leaves (no shared storage).
  ModelParams clone() const;
  void zero_grad() const;
  // Zero and freeze (requires_grad = false) every tensor whose name starts with prefix.
  void freeze_zero(const std::string& prefix);
  bool all_finite() const;

  std::map<std::string, std::string> manifest() const;
  void save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra = {}) const;
  // Throws ManifestMismatchError when `expected` is given and disagrees with the file.
  static ModelParams load(const std::filesystem::path& path, const ModelConfig* expected = nullptr);
  static ModelParams from_archive(const std::map<std::string, std::string>& meta,
                                  const std::vector<std::pair<std::string, ad::Tensor>>& tensors,
                                  const ModelConfig* expected);

 private:
  void add(std::string name, ad::Tensor t);

  ModelConfig config_;
  std::vector<std::pair<std::string, ad::Tensor>> tensors_;
};

ModelConfig config_from_manifest(const std::map<std::string, std::string>& manifest);

/// Dense feature grid [G^3, F], cell index (x * G + y) * G + z.
struct VolumetricFeature {
  ad::Tensor features;
  std::vector<double> occupancy;  // per cell, 1 where any observed point landed
  int grid = 0;
  Bounds workspace;

  Vec3 cell_center(std::size_t cell) const;
};

struct RepresentOptions {
  // Return an all-zero grid instead of failing when no point lands in the workspace.
  bool allow_empty = false;
};

// Unprojects and mean-pools the RGB-D views into the grid (no parameters).
// Output [G^3, 4]: mean RGB and occupancy indicator.
std::vector<double> voxelize(const Observation& obs, int grid, const Bounds& workspace);

VolumetricFeature represent(const Observation& obs, const ModelParams& params,
                            const RepresentOptions& opts = {});

/// Differentiable Gaussian parameters, one row per particle. Positions are a
/// fixed base plus an accumulated displacement and rotations a base plus an
/// accumulated additive delta, so summed deltas are applied exactly once.
struct GaussianTensors {
  ad::Tensor mu_base;    // [N,3]
  ad::Tensor mu_delta;   // [N,3]
  ad::Tensor rot_base;   // [N,4]
  ad::Tensor rot_delta;  // [N,4]
  ad::Tensor color;      // [N,3]
  ad::Tensor scale;      // [N,3]
  ad::Tensor opacity;    // [N]
  ad::Tensor logits;     // [N,3]
  int timestamp = 0;

  std::size_t size() const { return opacity.defined() ? opacity.numel() : 0; }
  ad::Tensor mu() const;
  ad::Tensor rot() const;  // unit quaternions
  GaussianSet to_set() const;
  static GaussianTensors from_set(const GaussianSet& set);
};

GaussianTensors regress_gaussians(const VolumetricFeature& v, const ModelParams& params);

// Trilinear interpolation of grid features at world positions [N,3] -> [N,F];
// differentiable in both the features and the positions.
ad::Tensor sample_features(const VolumetricFeature& v, const ad::Tensor& positions);

/// Test hooks for the deformation models.
struct DeformHooks {
  // Replace the network output with fixed deltas on every particle.
  std::optional<Vec3> forced_leader_shift;
  std::optional<Vec4> forced_leader_rot;
  std::optional<Vec3> forced_follower_shift;
  std::optional<Vec4> forced_follower_rot;
  // Called with the name of the stage and the action vectors it consumed.
  std::function<void(const std::string&, const std::vector<std::array<double, kActionFeatureDim>>&)> probe;
};

GaussianTensors leader_deform(const GaussianTensors& theta, const ArmAction& a_s,
                              const VolumetricFeature& v, const ModelParams& params,
                              const DeformHooks* hooks = nullptr);
GaussianTensors follower_deform(const GaussianTensors& theta_s, const ArmAction& a_s,
                                const ArmAction& a_a, const VolumetricFeature& v,
                                const ModelParams& params, const DeformHooks* hooks = nullptr);

/// Fixed hashed embedding of an instruction (lower-cased whitespace tokens).
std::vector<double> language_embedding(const std::string& instruction, int dim);

/// Logits [2, kArmLogits]; row 0 is the left arm, row 1 the right arm.
struct PolicyLogits {
  ad::Tensor logits;

  ad::Tensor head(int arm, int head) const;  // [1, size]
  ArmAction argmax(int arm) const;
};

PolicyLogits decode_actions(const VolumetricFeature& v, const std::string& language,
                            const ModelParams& params);

}  // namespace hgwm
