#include <cmath>
#include <string>
#include <vector>

#include "hgwm/errors.hpp"
#include "internal.hpp"
#include "tiles.hpp"

namespace hgwm::raster {

namespace {

// Screen-space adjoint of one splat, before the projection chain.
struct SplatGrad {
  Vec2 mean = Vec2::Zero();
  Mat2 conic = Mat2::Zero();  // gradient w.r.t. the full 2x2 conic
  double opacity = 0.0;
  double color[3] = {0, 0, 0};
  double logits[3] = {0, 0, 0};

  void add(const SplatGrad& o) {
    mean += o.mean;
    conic += o.conic;
    opacity += o.opacity;
    for (int c = 0; c < 3; ++c) {
      color[c] += o.color[c];
      logits[c] += o.logits[c];
    }
  }
};

struct Contribution {
  std::size_t slot;  // position in the tile list
  double alpha;
  double T;  // transmittance in front of this splat
  detail::KernelEval eval;
};

// dR/dq for the unit quaternion (w, x, y, z).
std::array<Mat3, 4> rotation_jacobian(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  return d;
}

void check_upstream(std::span<const double> d, std::size_t expected, const char* what) {
  if (!d.empty() && d.size() != expected) {
    throw ShapeError(std::string("upstream ") + what + " gradient has " + std::to_string(d.size()) +
                     " values, expected " + std::to_string(expected));
  }
}

}  // namespace

GaussianGrads render_backward(const GaussianArrays& g, const Camera& cam, std::span<const double> d_rgb,
                              std::span<const double> d_logits, const RasterConfig& cfg) {
  validate_arrays(g);
  const int w = cam.width();
  const int h = cam.height();
  const std::size_t n_px = static_cast<std::size_t>(w) * h;
  check_upstream(d_rgb, 3 * n_px, "rgb");
  check_upstream(d_logits, 3 * n_px, "logit");

  GaussianGrads out(g.count);
  if (d_rgb.empty() && d_logits.empty()) return out;

  const std::vector<Splat2D> splats = detail::project_all(g, cam, cfg);
  const detail::TileBins bins = detail::bin_splats(splats, w, h, cfg.tile_size);
  const int n_tiles = static_cast<int>(bins.lists.size());

  // Each tile writes only its own buffer; the reduction below runs in tile
  // order so the sum does not depend on the thread count.
  std::vector<std::vector<SplatGrad>> tile_grads(bins.lists.size());

#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < n_tiles; ++t) {
    const auto& list = bins.lists[static_cast<std::size_t>(t)];
    auto& local = tile_grads[static_cast<std::size_t>(t)];
    local.assign(list.size(), SplatGrad{});
    if (list.empty()) continue;
    std::vector<Contribution> hits;
    const int x0 = (t % bins.tiles_x) * bins.tile;
    const int y0 = (t / bins.tiles_x) * bins.tile;
    for (int y = y0; y < std::min(y0 + bins.tile, h); ++y) {
      for (int x = x0; x < std::min(x0 + bins.tile, w); ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        double up[6] = {0, 0, 0, 0, 0, 0};
        for (int c = 0; c < 3; ++c) {
          if (!d_rgb.empty()) up[c] = d_rgb[3 * p + c];
          if (!d_logits.empty()) up[3 + c] = d_logits[3 * p + c];
        }
        if (up[0] == 0 && up[1] == 0 && up[2] == 0 && up[3] == 0 && up[4] == 0 && up[5] == 0) continue;

        // replay the forward composite
        hits.clear();
        double T = 1.0;
        for (std::size_t slot = 0; slot < list.size(); ++slot) {
          const Splat2D& s = splats[list[slot]];
          if (x < s.x_min || x > s.x_max || y < s.y_min || y > s.y_max) continue;
          const auto e = detail::eval_kernel(s, x - s.mean2d.x(), y - s.mean2d.y(), cfg);
          if (e.alpha <= 0.0) continue;
          hits.push_back({slot, e.alpha, T, e});
          T *= 1.0 - e.alpha;
          if (T < cfg.early_stop) break;
        }

        double behind = 0.0;  // sum over later splats of weight * <up, feature>
        for (std::size_t k = hits.size(); k-- > 0;) {
          const Contribution& c = hits[k];
          const Splat2D& s = splats[list[c.slot]];
          const std::size_t gi = s.source_index;
          const double wgt = c.alpha * c.T;
          double proj = 0.0;
          SplatGrad& sg = local[c.slot];
          for (int ch = 0; ch < 3; ++ch) {
            proj += up[ch] * g.color[3 * gi + ch] + up[3 + ch] * g.logits[3 * gi + ch];
            sg.color[ch] += wgt * up[ch];
            sg.logits[ch] += wgt * up[3 + ch];
          }
          const double d_alpha = c.T * proj - behind / (1.0 - c.alpha);
          behind += wgt * proj;
          if (c.eval.clamped) continue;

          sg.opacity += d_alpha * c.eval.kernel;
          const double d_m = d_alpha * s.opacity * detail::kernel_slope(c.eval.mahalanobis, cfg);
          const Vec2 d(x - s.mean2d.x(), y - s.mean2d.y());
          sg.conic += d_m * (d * d.transpose());
          sg.mean += -2.0 * d_m * (s.conic * d);
        }
      }
    }
  }

  std::vector<SplatGrad> per_splat(splats.size());
  for (std::size_t t = 0; t < bins.lists.size(); ++t) {
    for (std::size_t slot = 0; slot < bins.lists[t].size(); ++slot) {
      per_splat[bins.lists[t][slot]].add(tile_grads[t][slot]);
    }
  }

  const Intrinsics& k = cam.intrinsics();
  const Mat3& wr = cam.rotation();
  for (std::size_t si = 0; si < splats.size(); ++si) {
    const SplatGrad& sg = per_splat[si];
    const std::size_t i = splats[si].source_index;
    detail::ProjectionTrace tr;
    const auto s = detail::project(g, i, cam, cfg, &tr);

    out.opacity[i] = sg.opacity;
    for (int c = 0; c < 3; ++c) {
      out.color[3 * i + c] = sg.color[c];
      out.logits[3 * i + c] = sg.logits[c];
    }

    // conic = inverse(cov2d)
    const Mat2& q = s->conic;
    const Mat2 g_cov2 = -q.transpose() * sg.conic * q.transpose();
    const Mat2 g_cov2s = 0.5 * (g_cov2 + g_cov2.transpose());
    const auto& jac = tr.jacobian;
    const Mat3 g_covc = jac.transpose() * g_cov2s * jac;
    const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov2s * jac * tr.cov_cam;
    const Mat3 g_cov3 = wr.transpose() * g_covc * wr;

    const Vec3 sc(g.scale[3 * i], g.scale[3 * i + 1], g.scale[3 * i + 2]);
    const Mat3 m = tr.rotation * sc.asDiagonal();
    const Mat3 g_m = 2.0 * g_cov3 * m;
    const Mat3 g_r = g_m * sc.asDiagonal();
    for (int c = 0; c < 3; ++c) out.scale[3 * i + c] = g_m.col(c).dot(tr.rotation.col(c));

    const auto dr = rotation_jacobian(tr.unit_rot);
    Vec4 g_qu;
    for (int c = 0; c < 4; ++c) g_qu[c] = (g_r.array() * dr[c].array()).sum();
    const Vec4 g_q = (g_qu - tr.unit_rot * tr.unit_rot.dot(g_qu)) / tr.rot_norm;
    for (int c = 0; c < 4; ++c) out.rot[4 * i + c] = g_q[c];

    // mean2d and the Jacobian both depend on the camera-space point
    const Vec3& p = tr.cam_point;
    const double iz = 1.0 / p.z();
    Vec3 g_t = jac.transpose() * sg.mean;
    g_t.x() += g_jac(0, 2) * (-k.fx * iz * iz);
    g_t.y() += g_jac(1, 2) * (-k.fy * iz * iz);
    g_t.z() += g_jac(0, 0) * (-k.fx * iz * iz) + g_jac(1, 1) * (-k.fy * iz * iz) +
               g_jac(0, 2) * (2.0 * k.fx * p.x() * iz * iz * iz) +
               g_jac(1, 2) * (2.0 * k.fy * p.y() * iz * iz * iz);
    const Vec3 g_mu = wr.transpose() * g_t;
    for (int c = 0; c < 3; ++c) out.mu[3 * i + c] = g_mu[c];
  }
  return out;
}

}  // namespace hgwm::raster
