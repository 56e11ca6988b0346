#include "hgwm/core_types.hpp"

#include <cmath>
#include <string>

#include "hgwm/errors.hpp"

namespace hgwm {

namespace {

bool finite3(const Vec3& v) { return v.allFinite(); }

}  // namespace

Gaussian::Gaussian(const Vec3& mu_, const Vec3& color_, const Vec4& rot_, const Vec3& scale_,
                   double opacity_, const Vec3& logits_)
    : mu(mu_), color(color_), rot(normalize_quat(rot_)), scale(scale_), opacity(opacity_),
      logits(logits_) {}

std::array<double, Gaussian::kFieldCount> Gaussian::to_array() const {
  return {mu[0],    mu[1],    mu[2],    color[0], color[1], color[2],
          rot[0],   rot[1],   rot[2],   rot[3],   scale[0], scale[1],
          scale[2], opacity,  logits[0], logits[1], logits[2]};
}

Gaussian Gaussian::from_array(std::span<const double, kFieldCount> a) {
  // No normalization here: stored files round-trip bit-exactly.
  Gaussian g;
  g.mu = {a[0], a[1], a[2]};
  g.color = {a[3], a[4], a[5]};
  g.rot = {a[6], a[7], a[8], a[9]};
  g.scale = {a[10], a[11], a[12]};
  g.opacity = a[13];
  g.logits = {a[14], a[15], a[16]};
  return g;
}

void Gaussian::validate() const {
  if (!finite3(mu) || !finite3(color) || !rot.allFinite() || !finite3(scale) ||
      !std::isfinite(opacity) || !finite3(logits)) {
    throw ValidationError("gaussian has non-finite parameters");
  }
  if (std::abs(rot.norm() - 1.0) > 1e-6) throw ValidationError("gaussian rotation is not unit");
  if ((scale.array() <= 0.0).any()) throw ValidationError("gaussian scale must be positive");
  if (!(opacity > 0.0 && opacity <= 1.0)) throw ValidationError("gaussian opacity outside (0,1]");
  if ((color.array() < 0.0).any() || (color.array() > 1.0).any()) {
    throw ValidationError("gaussian color outside [0,1]");
  }
}

Camera::Camera(const Intrinsics& k, const RigidTransform& world_to_camera, int width, int height)
    : k_(k), extrinsics_(world_to_camera), width_(width), height_(height) {
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) throw ValidationError("camera focal lengths must be positive");
  if (!is_orthonormal(world_to_camera.rotation)) {
    throw ValidationError("camera rotation is not orthonormal");
  }
  if (width <= 0 || height <= 0) throw ValidationError("camera resolution must be positive");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal,
                       int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  RigidTransform w2c;
  w2c.rotation.row(0) = right.transpose();
  w2c.rotation.row(1) = down.transpose();
  w2c.rotation.row(2) = forward.transpose();
  w2c.translation = -(w2c.rotation * eye);
  const Intrinsics k{focal, focal, 0.5 * (width - 1), 0.5 * (height - 1)};
  return Camera(k, w2c, width, height);
}

Vec3 Camera::center() const { return extrinsics_.inverse().translation; }

std::optional<Projection> Camera::project(const Vec3& world) const {
  const Vec3 pc = to_camera(world);
  if (!(pc.z() > kNearPlane)) return std::nullopt;
  return Projection{{k_.fx * pc.x() / pc.z() + k_.cx, k_.fy * pc.y() / pc.z() + k_.cy}, pc.z()};
}

Vec3 Camera::unproject(const Vec2& pixel, double depth) const {
  const Vec3 pc((pixel.x() - k_.cx) / k_.fx * depth, (pixel.y() - k_.cy) / k_.fy * depth, depth);
  return extrinsics_.rotation.transpose() * (pc - extrinsics_.translation);
}

Camera Camera::resized(int width, int height) const {
  const double sx = static_cast<double>(width) / width_;
  const double sy = static_cast<double>(height) / height_;
  const Intrinsics k{k_.fx * sx, k_.fy * sy, (k_.cx + 0.5) * sx - 0.5, (k_.cy + 0.5) * sy - 0.5};
  return Camera(k, extrinsics_, width, height);
}

std::array<double, 3> Proprio::features() const {
  return {time_index / 10.0, left_open ? 1.0 : 0.0, right_open ? 1.0 : 0.0};
}

void Observation::validate() const {
  if (views.empty()) throw ValidationError("observation has no views");
  for (const View& v : views) {
    const int w = v.camera.width();
    const int h = v.camera.height();
    if (v.rgb.width != w || v.rgb.height != h || v.depth.width != w || v.depth.height != h) {
      throw ValidationError("observation image size does not match its camera");
    }
    if (v.rgb.data.size() != static_cast<std::size_t>(w) * h * 3 ||
        v.depth.data.size() != static_cast<std::size_t>(w) * h) {
      throw ValidationError("observation image buffer has the wrong length");
    }
    for (double d : v.depth.data) {
      if (!(d >= 0.0)) throw ValidationError("observation depth must be non-negative");
    }
  }
}

void ArmAction::validate() const {
  for (int b : trans_bin) {
    if (b < 0 || b >= kTransBins) throw ValidationError("translation bin out of range");
  }
  for (int b : rot_bins) {
    if (b < 0 || b >= kRotBins) throw ValidationError("rotation bin out of range");
  }
}

BimanualAction BimanualAction::from_arms(const ArmAction& left, const ArmAction& right, Role role) {
  if (role == Role::kLeftStabilizes) return {left, right, role};
  return {right, left, role};
}

ArmAction discretize_action(const ContinuousPose& pose, const Bounds& ws) {
  if (!pose.position.allFinite() || !ws.contains(pose.position)) {
    throw OutOfWorkspaceError("position outside the workspace bounds");
  }
  ArmAction a;
  const Vec3 ext = ws.extent();
  for (int i = 0; i < 3; ++i) {
    const double u = kTransBins * (pose.position[i] - ws.lo[i]) / ext[i];
    a.trans_bin[i] = std::clamp(static_cast<int>(std::floor(u)), 0, kTransBins - 1);
    const double deg = wrap_degrees(pose.euler_deg[i]);
    a.rot_bins[i] =
        std::clamp(static_cast<int>(std::floor(deg / kRotBinDegrees)), 0, kRotBins - 1);
  }
  a.open = pose.open >= 0.5;
  a.collide = pose.collide >= 0.5;
  return a;
}

ContinuousPose undiscretize(const ArmAction& a, const Bounds& ws) {
  a.validate();
  ContinuousPose p;
  const Vec3 ext = ws.extent();
  for (int i = 0; i < 3; ++i) {
    p.position[i] = ws.lo[i] + (a.trans_bin[i] + 0.5) * ext[i] / kTransBins;
    p.euler_deg[i] = (a.rot_bins[i] + 0.5) * kRotBinDegrees;
  }
  p.open = a.open ? 1.0 : 0.0;
  p.collide = a.collide ? 1.0 : 0.0;
  return p;
}

std::array<double, kActionFeatureDim> action_features(const ArmAction& a, const Bounds& ws) {
  const ContinuousPose p = undiscretize(a, ws);
  std::array<double, kActionFeatureDim> f{};
  for (int i = 0; i < 3; ++i) {
    f[i] = 2.0 * (p.position[i] - ws.lo[i]) / ws.extent()[i] - 1.0;
    f[3 + i] = p.euler_deg[i] / 180.0 - 1.0;
  }
  f[6] = p.open;
  f[7] = p.collide;
  return f;
}

void DemoTrajectory::validate() const {
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const DemoStep& s = steps[k];
    s.obs.validate();
    if (s.labels.size() != s.obs.views.size()) throw ValidationError("labels missing for a view");
    if (k + 1 < steps.size() && s.next_rgb.size() != s.obs.views.size()) {
      throw ValidationError("step " + std::to_string(k) + " lacks next-step images");
    }
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace hgwm
