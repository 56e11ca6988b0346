#pragma once

#include <cmath>
#include <vector>

#include "hgwm/rasterizer.hpp"

namespace hgwm::raster::detail {

// Intermediate quantities of one projection, kept for the adjoint.
struct ProjectionTrace {
  Vec3 cam_point;
  Vec4 unit_rot;
  double rot_norm = 1.0;
  Mat3 rotation;   // from unit_rot
  Mat3 cov_cam;    // W * Sigma3D * W^T
  Eigen::Matrix<double, 2, 3> jacobian;
};

std::optional<Splat2D> project(const GaussianArrays& g, std::size_t i, const Camera& cam,
                               const RasterConfig& cfg, ProjectionTrace* trace);

inline double kernel_floor(const RasterConfig& cfg) {
  return std::exp(-0.5 * cfg.cutoff_sigma * cfg.cutoff_sigma);
}

struct KernelEval {
  double alpha = 0.0;   // after clamp
  double kernel = 0.0;  // truncated, rescaled Gaussian in [0, 1]
  double mahalanobis = 0.0;
  bool clamped = false;
};

// Truncated Gaussian with value and slope both zero at the cutoff, so the
// renderer stays C1 in the splat parameters:
//   K(m) = (exp(-m/2) - e_c (1 + (c^2 - m)/2)) / (1 - e_c (1 + c^2/2)) for m < c^2, else 0.
inline double kernel_norm(const RasterConfig& cfg) {
  const double c2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
  return 1.0 - kernel_floor(cfg) * (1.0 + 0.5 * c2);
}

// dK/dm inside the cutoff.
inline double kernel_slope(double m, const RasterConfig& cfg) {
  return -0.5 * (std::exp(-0.5 * m) - kernel_floor(cfg)) / kernel_norm(cfg);
}
inline KernelEval eval_kernel(const Splat2D& s, double dx, double dy, const RasterConfig& cfg) {
  KernelEval e;
  const Mat2& q = s.conic;
  e.mahalanobis = q(0, 0) * dx * dx + 2.0 * q(0, 1) * dx * dy + q(1, 1) * dy * dy;
  if (!(e.mahalanobis < cfg.cutoff_sigma * cfg.cutoff_sigma)) return e;
  const double ec = kernel_floor(cfg);
  const double c2 = cfg.cutoff_sigma * cfg.cutoff_sigma;
  e.kernel = (std::exp(-0.5 * e.mahalanobis) - ec * (1.0 + 0.5 * (c2 - e.mahalanobis))) / kernel_norm(cfg);
  const double a = s.opacity * e.kernel;
  e.clamped = a > cfg.alpha_clamp;
  e.alpha = e.clamped ? cfg.alpha_clamp : a;
  return e;
}

// Projects all Gaussians; culled entries are dropped. Result is sorted by
// (depth, source_index).
std::vector<Splat2D> project_all(const GaussianArrays& g, const Camera& cam, const RasterConfig& cfg);

}  // namespace hgwm::raster::detail
