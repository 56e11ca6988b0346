#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hgwm/geometry.hpp"

namespace hgwm {

// Instance classes carried by Gaussian logits and label maps.
enum InstanceClass : int { kStabilizingArm = 0, kActingArm = 1, kTargetObject = 2 };
inline constexpr int kNumInstanceClasses = 3;

/// One task-oriented Gaussian: position, color, orientation, per-axis scale,
/// opacity and instance logits. The rotation is normalized on construction.
struct Gaussian {
  static constexpr std::size_t kFieldCount = 17;

  Vec3 mu = Vec3::Zero();
  Vec3 color = Vec3::Constant(0.5);
  Vec4 rot = Vec4(1, 0, 0, 0);
  Vec3 scale = Vec3::Constant(0.01);
  double opacity = 1.0;
  Vec3 logits = Vec3::Zero();

  Gaussian() = default;
  Gaussian(const Vec3& mu, const Vec3& color, const Vec4& rot, const Vec3& scale, double opacity,
           const Vec3& logits);

  std::array<double, kFieldCount> to_array() const;
  static Gaussian from_array(std::span<const double, kFieldCount> a);

  // Throws ValidationError when any core invariant is broken.
  void validate() const;
  bool operator==(const Gaussian&) const = default;
};

struct GaussianSet {
  std::vector<Gaussian> gaussians;
  int timestamp = 0;

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
  bool operator==(const GaussianSet&) const = default;
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

/// Pinhole camera with OpenCV axes (x right, y down, z forward). Pixel (x, y)
/// samples the continuous image coordinate (x, y).
class Camera {
 public:
  static constexpr double kNearPlane = 0.01;

  Camera() = default;
  Camera(const Intrinsics& k, const RigidTransform& world_to_camera, int width, int height);

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                        int width, int height);

  const Intrinsics& intrinsics() const { return k_; }
  const RigidTransform& world_to_camera() const { return extrinsics_; }
  const Mat3& rotation() const { return extrinsics_.rotation; }
  const Vec3& translation() const { return extrinsics_.translation; }
  int width() const { return width_; }
  int height() const { return height_; }
  Vec3 center() const;

  Vec3 to_camera(const Vec3& world) const { return extrinsics_.apply(world); }
  std::optional<Projection> project(const Vec3& world) const;
  Vec3 unproject(const Vec2& pixel, double depth) const;

  // Same camera at another resolution, intrinsics scaled accordingly.
  Camera resized(int width, int height) const;

 private:
  Intrinsics k_;
  RigidTransform extrinsics_;
  int width_ = 0;
  int height_ = 0;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // row-major, 3 channels

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0) {}
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const RgbImage&) const = default;
};

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // 0 marks "no surface"

  DepthImage() = default;
  DepthImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}
  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const DepthImage&) const = default;
};

struct LabelImage {
  static constexpr std::uint8_t kIgnore = 255;

  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  LabelImage() = default;
  LabelImage(int w, int h)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, kIgnore) {}
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const LabelImage&) const = default;
};

struct Proprio {
  int time_index = 0;
  bool left_open = true;
  bool right_open = true;

  // (time, left_open, right_open) as network input; time is scaled by 1/10.
  std::array<double, 3> features() const;
  bool operator==(const Proprio&) const = default;
};

struct View {
  Camera camera;
  RgbImage rgb;
  DepthImage depth;
};

struct Observation {
  std::vector<View> views;
  Proprio proprio;

  void validate() const;
};

inline constexpr int kTransBins = 100;
inline constexpr int kRotBinDegrees = 5;
inline constexpr int kRotBins = 360 / kRotBinDegrees;
inline constexpr int kActionFeatureDim = 8;

struct ArmAction {
  std::array<int, 3> trans_bin{0, 0, 0};
  std::array<int, 3> rot_bins{0, 0, 0};
  bool open = true;
  bool collide = false;

  void validate() const;
  bool operator==(const ArmAction&) const = default;
};

enum class Role { kLeftStabilizes, kRightStabilizes };

struct BimanualAction {
  ArmAction stabilizing;
  ArmAction acting;
  Role role = Role::kRightStabilizes;

  const ArmAction& left() const { return role == Role::kLeftStabilizes ? stabilizing : acting; }
  const ArmAction& right() const { return role == Role::kLeftStabilizes ? acting : stabilizing; }
  static BimanualAction from_arms(const ArmAction& left, const ArmAction& right, Role role);
  bool operator==(const BimanualAction&) const = default;
};

struct ContinuousPose {
  Vec3 position = Vec3::Zero();
  Vec3 euler_deg = Vec3::Zero();
  double open = 1.0;
  double collide = 0.0;
};

ArmAction discretize_action(const ContinuousPose& pose, const Bounds& workspace);
ContinuousPose undiscretize(const ArmAction& action, const Bounds& workspace);

// Bin-center pose as an 8-vector scaled to roughly [-1, 1]:
// position (normalized to the workspace), euler angles / 180 - 1, open, collide.
std::array<double, kActionFeatureDim> action_features(const ArmAction& action,
                                                      const Bounds& workspace);

// Deterministic 64-bit mix of two seeds (splitmix finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct DemoStep {
  Observation obs;
  BimanualAction action;
  std::vector<RgbImage> next_rgb;       // empty on the final step
  std::vector<LabelImage> labels;       // per view, this step
  std::vector<LabelImage> next_labels;  // per view, next step; empty on the final step

  bool has_next() const { return !next_rgb.empty(); }
};

struct DemoTrajectory {
  std::string task;
  std::string language;
  Bounds workspace;
  std::vector<DemoStep> steps;

  void validate() const;
};

}  // namespace hgwm
