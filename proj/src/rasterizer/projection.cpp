#include <algorithm>
#include <cmath>
#include <string>

#include "hgwm/errors.hpp"
#include "internal.hpp"

namespace hgwm::raster {

GaussianBuffers GaussianBuffers::from_set(const GaussianSet& set) {
  GaussianBuffers b;
  const std::size_t n = set.size();
  b.mu.reserve(3 * n);
  b.color.reserve(3 * n);
  b.rot.reserve(4 * n);
  b.scale.reserve(3 * n);
  b.opacity.reserve(n);
  b.logits.reserve(3 * n);
  for (const Gaussian& g : set.gaussians) {
    for (int k = 0; k < 3; ++k) {
      b.mu.push_back(g.mu[k]);
      b.color.push_back(g.color[k]);
      b.scale.push_back(g.scale[k]);
      b.logits.push_back(g.logits[k]);
    }
    for (int k = 0; k < 4; ++k) b.rot.push_back(g.rot[k]);
    b.opacity.push_back(g.opacity);
  }
  return b;
}

GaussianArrays GaussianBuffers::view() const {
  return {opacity.size(), mu, color, rot, scale, opacity, logits};
}

GaussianGrads::GaussianGrads(std::size_t n)
    : mu(3 * n, 0.0), color(3 * n, 0.0), rot(4 * n, 0.0), scale(3 * n, 0.0), opacity(n, 0.0),
      logits(3 * n, 0.0) {}

RenderOutput::RenderOutput(int w, int h)
    : width(w), height(h),
      rgb(static_cast<std::size_t>(w) * h * 3, 0.0),
      logit_map(static_cast<std::size_t>(w) * h * 3, 0.0),
      depth_map(static_cast<std::size_t>(w) * h, 0.0),
      transmittance(static_cast<std::size_t>(w) * h, 1.0),
      weight_sum(static_cast<std::size_t>(w) * h, 0.0) {}

RgbImage RenderOutput::rgb_image() const {
  RgbImage img(width, height);
  img.data = rgb;
  return img;
}

LabelImage RenderOutput::label_map(double min_coverage) const {
  LabelImage img(width, height);
  for (std::size_t p = 0; p < img.data.size(); ++p) {
    if (1.0 - transmittance[p] <= min_coverage) continue;
    const double* l = logit_map.data() + 3 * p;
    img.data[p] = static_cast<std::uint8_t>(std::max_element(l, l + 3) - l);
  }
  return img;
}

DepthImage RenderOutput::surface_depth(double min_coverage) const {
  DepthImage img(width, height);
  for (std::size_t p = 0; p < img.data.size(); ++p) {
    const double cov = 1.0 - transmittance[p];
    if (cov > min_coverage) img.data[p] = depth_map[p] / cov;
  }
  return img;
}

void validate_arrays(const GaussianArrays& g) {
  const std::size_t n = g.count;
  if (g.mu.size() != 3 * n || g.color.size() != 3 * n || g.rot.size() != 4 * n ||
      g.scale.size() != 3 * n || g.opacity.size() != n || g.logits.size() != 3 * n) {
    throw ShapeError("gaussian arrays disagree on the particle count " + std::to_string(n));
  }
  auto finite = [](std::span<const double> s) {
    return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
  };
  if (!finite(g.mu) || !finite(g.color) || !finite(g.rot) || !finite(g.scale) ||
      !finite(g.opacity) || !finite(g.logits)) {
    throw ValidationError("gaussian parameters contain non-finite values");
  }
}

namespace detail {

std::optional<Splat2D> project(const GaussianArrays& g, std::size_t i, const Camera& cam,
                               const RasterConfig& cfg, ProjectionTrace* trace) {
  const Vec3 mu(g.mu[3 * i], g.mu[3 * i + 1], g.mu[3 * i + 2]);
  const Vec3 t = cam.to_camera(mu);
  if (!(t.z() > Camera::kNearPlane)) return std::nullopt;

  const Vec4 q(g.rot[4 * i], g.rot[4 * i + 1], g.rot[4 * i + 2], g.rot[4 * i + 3]);
  const double qn = q.norm();
  if (!(qn > 0.0)) return std::nullopt;
  const Vec4 qu = q / qn;
  const Mat3 r = quat_to_matrix(qu);
  const Vec3 s(g.scale[3 * i], g.scale[3 * i + 1], g.scale[3 * i + 2]);
  const Mat3 m = r * s.asDiagonal();
  const Mat3& w = cam.rotation();
  const Mat3 cov_cam = w * (m * m.transpose()) * w.transpose();

  const Intrinsics& k = cam.intrinsics();
  const double iz = 1.0 / t.z();
  Eigen::Matrix<double, 2, 3> jac;
  jac << k.fx * iz, 0.0, -k.fx * t.x() * iz * iz, 0.0, k.fy * iz, -k.fy * t.y() * iz * iz;

  Splat2D sp;
  sp.cov2d = jac * cov_cam * jac.transpose();
  sp.cov2d(0, 0) += cfg.cov_floor;
  sp.cov2d(1, 1) += cfg.cov_floor;
  sp.cov2d(0, 1) = sp.cov2d(1, 0) = 0.5 * (sp.cov2d(0, 1) + sp.cov2d(1, 0));
  const double det = sp.cov2d.determinant();
  if (!(det > 0.0)) return std::nullopt;
  sp.conic << sp.cov2d(1, 1) / det, -sp.cov2d(0, 1) / det, -sp.cov2d(1, 0) / det, sp.cov2d(0, 0) / det;
  sp.mean2d = {k.fx * t.x() * iz + k.cx, k.fy * t.y() * iz + k.cy};
  sp.depth = t.z();
  sp.source_index = i;
  sp.opacity = g.opacity[i];

  const double rx = cfg.cutoff_sigma * std::sqrt(sp.cov2d(0, 0));
  const double ry = cfg.cutoff_sigma * std::sqrt(sp.cov2d(1, 1));
  const double x0 = std::ceil(sp.mean2d.x() - rx);
  const double x1 = std::floor(sp.mean2d.x() + rx);
  const double y0 = std::ceil(sp.mean2d.y() - ry);
  const double y1 = std::floor(sp.mean2d.y() + ry);
  if (x1 < 0.0 || y1 < 0.0 || x0 > cam.width() - 1 || y0 > cam.height() - 1) return std::nullopt;
  sp.x_min = static_cast<int>(std::max(x0, 0.0));
  sp.x_max = static_cast<int>(std::min(x1, static_cast<double>(cam.width() - 1)));
  sp.y_min = static_cast<int>(std::max(y0, 0.0));
  sp.y_max = static_cast<int>(std::min(y1, static_cast<double>(cam.height() - 1)));

  if (trace != nullptr) {
    trace->cam_point = t;
    trace->unit_rot = qu;
    trace->rot_norm = qn;
    trace->rotation = r;
    trace->cov_cam = cov_cam;
    trace->jacobian = jac;
  }
  return sp;
}

std::vector<Splat2D> project_all(const GaussianArrays& g, const Camera& cam, const RasterConfig& cfg) {
  std::vector<Splat2D> out;
  out.reserve(g.count);
  for (std::size_t i = 0; i < g.count; ++i) {
    if (auto s = project(g, i, cam, cfg, nullptr)) out.push_back(*s);
  }
  std::stable_sort(out.begin(), out.end(), [](const Splat2D& a, const Splat2D& b) {
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.source_index < b.source_index;
  });
  return out;
}

}  // namespace detail

std::optional<Splat2D> project_gaussian(const GaussianArrays& g, std::size_t i, const Camera& cam,
                                        const RasterConfig& cfg) {
  return detail::project(g, i, cam, cfg, nullptr);
}

std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam, const RasterConfig& cfg) {
  GaussianSet one;
  one.gaussians.push_back(g);
  const GaussianBuffers b = GaussianBuffers::from_set(one);
  return detail::project(b.view(), 0, cam, cfg, nullptr);
}

double splat_alpha(const Splat2D& s, double dx, double dy, const RasterConfig& cfg) {
  return detail::eval_kernel(s, dx, dy, cfg).alpha;
}

}  // namespace hgwm::raster
