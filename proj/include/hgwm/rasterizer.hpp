#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "hgwm/autodiff.hpp"
#include "hgwm/core_types.hpp"

namespace hgwm::raster {

struct RasterConfig {
  int tile_size = 16;
  double alpha_clamp = 0.99;
  // Added to the diagonal of every projected covariance, so its eigenvalues are >= this (px^2).
  double cov_floor = 0.3;
  // Splats are truncated at this Mahalanobis radius; tiles are binned by the same footprint.
  double cutoff_sigma = 3.0;
  // Fast path stops compositing a pixel once transmittance drops below this.
  double early_stop = 1e-6;
};

/// Structure-of-arrays view of N Gaussians (mu/color/scale/logits: 3N,
/// rot: 4N, opacity: N). Rotations need not be unit; they are normalized
/// inside the projection.
struct GaussianArrays {
  std::size_t count = 0;
  std::span<const double> mu;
  std::span<const double> color;
  std::span<const double> rot;
  std::span<const double> scale;
  std::span<const double> opacity;
  std::span<const double> logits;
};

struct GaussianBuffers {
  std::vector<double> mu;
  std::vector<double> color;
  std::vector<double> rot;
  std::vector<double> scale;
  std::vector<double> opacity;
  std::vector<double> logits;

  static GaussianBuffers from_set(const GaussianSet& set);
  GaussianArrays view() const;
  std::size_t count() const { return opacity.size(); }
};

struct Splat2D {
  Vec2 mean2d;
  Mat2 cov2d;
  Mat2 conic;  // inverse of cov2d
  double depth = 0.0;
  std::size_t source_index = 0;
  double opacity = 0.0;
  // Pixel bounding box of the truncated footprint, clipped to the image.
  int x_min = 0, x_max = -1, y_min = 0, y_max = -1;
};

std::optional<Splat2D> project_gaussian(const Gaussian& g, const Camera& cam,
                                        const RasterConfig& cfg = {});
std::optional<Splat2D> project_gaussian(const GaussianArrays& g, std::size_t i, const Camera& cam,
                                        const RasterConfig& cfg = {});

// Splat opacity at offset d from its center (truncated kernel, clamp applied).
double splat_alpha(const Splat2D& s, double dx, double dy, const RasterConfig& cfg);

struct RenderOutput {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;            // H*W*3
  std::vector<double> logit_map;      // H*W*3
  std::vector<double> depth_map;      // H*W, blended camera depth
  std::vector<double> transmittance;  // H*W
  std::vector<double> weight_sum;     // H*W, sum of blend weights

  RenderOutput() = default;
  RenderOutput(int w, int h);
  RgbImage rgb_image() const;
  // Argmax of the logit map where coverage (1 - transmittance) exceeds min_coverage.
  LabelImage label_map(double min_coverage = 0.5) const;
  // Blended depth divided by coverage; 0 where coverage is below min_coverage.
  DepthImage surface_depth(double min_coverage = 0.5) const;
};

void validate_arrays(const GaussianArrays& g);

/// Tile-based renderer; tiles are composited in parallel.
RenderOutput render(const GaussianArrays& g, const Camera& cam, const RasterConfig& cfg = {});
RenderOutput render(const GaussianSet& set, const Camera& cam, const RasterConfig& cfg = {});

/// Serial reference: every splat at every pixel, exact per-pixel sort, no
/// early termination. Kept as the test oracle for render().
RenderOutput render_brute_force(const GaussianArrays& g, const Camera& cam,
                                const RasterConfig& cfg = {});
RenderOutput render_brute_force(const GaussianSet& set, const Camera& cam,
                                const RasterConfig& cfg = {});

struct GaussianGrads {
  std::vector<double> mu;
  std::vector<double> color;
  std::vector<double> rot;
  std::vector<double> scale;
  std::vector<double> opacity;
  std::vector<double> logits;

  explicit GaussianGrads(std::size_t n = 0);
};

/// Adjoint of render() for the rgb and logit images. Upstream buffers are
/// H*W*3 each; an empty span means zero upstream gradient.
GaussianGrads render_backward(const GaussianArrays& g, const Camera& cam,
                              std::span<const double> d_rgb, std::span<const double> d_logits,
                              const RasterConfig& cfg = {});

/// Differentiable rendering on the tape. Inputs: mu [N,3], color [N,3],
/// rot [N,4], scale [N,3], opacity [N], logits [N,3]. Outputs: rgb [H,W,3]
/// and logit map [H,W,3].
struct RenderedTensors {
  ad::Tensor rgb;
  ad::Tensor logits;
};
RenderedTensors render_tensors(const ad::Tensor& mu, const ad::Tensor& color, const ad::Tensor& rot,
                               const ad::Tensor& scale, const ad::Tensor& opacity,
                               const ad::Tensor& logits, const Camera& cam,
                               const RasterConfig& cfg = {});

}  // namespace hgwm::raster
