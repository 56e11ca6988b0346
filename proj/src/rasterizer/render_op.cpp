#include <string>

#include "hgwm/errors.hpp"
#include "hgwm/rasterizer.hpp"

namespace hgwm::raster {

namespace {

void expect_shape(const ad::Tensor& t, std::size_t n, std::size_t cols, const char* name) {
  const bool ok = cols == 0 ? (t.rank() == 1 && t.dim(0) == n)
                            : (t.rank() == 2 && t.dim(0) == n && t.dim(1) == cols);
  if (!ok) {
    throw ShapeError(std::string("render input '") + name + "' has shape " + ad::shape_str(t.shape()));
  }
}

GaussianArrays arrays_of(std::span<const ad::Tensor> in) {
  return {in[4].numel(), in[0].data(), in[1].data(), in[2].data(), in[3].data(), in[4].data(),
          in[5].data()};
}

}  // namespace

RenderedTensors render_tensors(const ad::Tensor& mu, const ad::Tensor& color, const ad::Tensor& rot,
                               const ad::Tensor& scale, const ad::Tensor& opacity,
                               const ad::Tensor& logits, const Camera& cam, const RasterConfig& cfg) {
  const std::size_t n = opacity.defined() ? opacity.numel() : 0;
  expect_shape(mu, n, 3, "mu");
  expect_shape(color, n, 3, "color");
  expect_shape(rot, n, 4, "rot");
  expect_shape(scale, n, 3, "scale");
  expect_shape(opacity, n, 0, "opacity");
  expect_shape(logits, n, 3, "logits");

  const ad::Shape img{static_cast<std::size_t>(cam.height()), static_cast<std::size_t>(cam.width()), 3};
  auto op = ad::register_custom(
      "render",
      [cam, cfg, img](std::span<const ad::Tensor> in) {
        RenderOutput r = render(arrays_of(in), cam, cfg);
        return ad::CustomForwardResult{
            {ad::Tensor::from(img, std::move(r.rgb)), ad::Tensor::from(img, std::move(r.logit_map))}, {}};
      },
      [cam, cfg](std::span<const ad::Tensor> in, std::span<const ad::Tensor>,
                 std::span<const std::span<const double>> up, const std::any&) {
        GaussianGrads gr = render_backward(arrays_of(in), cam, up[0], up[1], cfg);
        return std::vector<std::vector<double>>{std::move(gr.mu),    std::move(gr.color),
                                                std::move(gr.rot),   std::move(gr.scale),
                                                std::move(gr.opacity), std::move(gr.logits)};
      });
  auto outs = op({mu, color, rot, scale, opacity, logits});
  return {outs[0], outs[1]};
}

}  // namespace hgwm::raster
