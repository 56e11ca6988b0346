#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hgwm/core_types.hpp"
#include "hgwm/rasterizer.hpp"

namespace hgwm::testing {

// Random scene in a unit ball around the origin.
inline GaussianSet random_scene(std::mt19937_64& rng, std::size_t n, double spread = 0.5) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.0, 1.0);
  GaussianSet set;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 mu(u(rng) * spread, u(rng) * spread, u(rng) * spread);
    Vec3 color(pos(rng), pos(rng), pos(rng));
    Vec4 rot(u(rng), u(rng), u(rng), u(rng));
    if (rot.norm() < 1e-3) rot = Vec4(1, 0, 0, 0);
    Vec3 scale(0.02 + 0.08 * pos(rng), 0.02 + 0.08 * pos(rng), 0.02 + 0.08 * pos(rng));
    double opacity = 0.05 + 0.9 * pos(rng);
    Vec3 logits(u(rng) * 3, u(rng) * 3, u(rng) * 3);
    set.gaussians.emplace_back(mu, color, rot, scale, opacity, logits);
  }
  return set;
}

// Camera on a sphere of radius ~2 looking at the origin.
inline Camera random_camera(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> ang(0.0, 2 * M_PI);
  std::uniform_real_distribution<double> elev(-0.6, 0.9);
  std::uniform_real_distribution<double> rad(1.6, 2.4);
  const double a = ang(rng), e = elev(rng), r = rad(rng);
  const Vec3 eye(r * std::cos(e) * std::cos(a), r * std::cos(e) * std::sin(a), r * std::sin(e));
  return Camera::look_at(eye, Vec3::Zero(), Vec3(0, 0, 1), 1.2 * w, w, h);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Relative error with an absolute floor so near-zero gradients do not blow up.
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2 * h);
}

}  // namespace hgwm::testing
