#include <doctest.h>

#include <cmath>
#include <random>

#include "hgwm/errors.hpp"
#include "hgwm/losses.hpp"
#include "model_support.hpp"
#include "support.hpp"

using namespace hgwm;
using hgwm::testing::values;

namespace {

RgbImage random_image(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RgbImage img(w, h);
  for (double& x : img.data) x = u(rng);
  return img;
}

ad::Tensor as_tensor(const RgbImage& img, bool grad = false) {
  return ad::Tensor::from({std::size_t(img.height), std::size_t(img.width), 3}, img.data, grad);
}

ad::Tensor random_logits(std::mt19937_64& rng, std::vector<std::size_t> shape, double spread, bool grad = false) {
  std::uniform_real_distribution<double> u(-spread, spread);
  std::vector<double> d(ad::numel(shape));
  for (double& x : d) x = u(rng);
  return ad::Tensor::from(std::move(shape), std::move(d), grad);
}

double naive_ce(const double* z, int n, int label) {
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return -(z[label] - m - std::log(s));
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("recon of identical images is zero") {
    std::mt19937_64 rng(1);
    const RgbImage a = random_image(rng, 5, 4);
    CHECK(loss_recon(as_tensor(a), a).item() == 0.0);
  }

  TEST_CASE("black versus white 2x2 costs 12") {
    RgbImage black(2, 2), white(2, 2);
    std::fill(white.data.begin(), white.data.end(), 1.0);
    CHECK(loss_recon(as_tensor(black), white).item() == 12.0);
    CHECK(loss_recon(as_tensor(black), white, Reduction::kPixelMean).item() == 3.0);
  }

  TEST_CASE("recon matches a scalar loop and rejects size mismatch") {
    std::mt19937_64 rng(2);
    const RgbImage a = random_image(rng, 7, 6), b = random_image(rng, 7, 6);
    double ref = 0.0;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x)
        for (int c = 0; c < 3; ++c) ref += (a.at(x, y, c) - b.at(x, y, c)) * (a.at(x, y, c) - b.at(x, y, c));
    CHECK(std::abs(loss_recon(as_tensor(a), b).item() - ref) < 1e-12);
    CHECK_THROWS_AS(loss_recon(as_tensor(a), random_image(rng, 6, 7)), ShapeError);
  }

  TEST_CASE("saturated logits give near-zero task loss") {
    const ad::Tensor z = ad::Tensor::from({1, 1, 3}, {10, -10, -10});
    LabelImage lab(1, 1);
    lab.data[0] = 0;
    const double l = loss_task(z, lab).item();
    CHECK(l == doctest::Approx(4.1e-9).epsilon(0.01));
  }

  TEST_CASE("uniform logits give ln 3 for any label") {
    const ad::Tensor z = ad::Tensor::zeros({2, 2, 3});
    LabelImage lab(2, 2);
    lab.data = {0, 1, 2, LabelImage::kIgnore};
    CHECK(std::abs(loss_task(z, lab).item() - std::log(3.0)) < 1e-15);
  }

  TEST_CASE("all-ignored labels give zero and bump the counter") {
    const std::size_t before = empty_task_loss_count();
    const LabelImage lab(3, 3);
    CHECK(loss_task(ad::Tensor::zeros({3, 3, 3}), lab).item() == 0.0);
    CHECK(empty_task_loss_count() == before + 1);
  }

  TEST_CASE("task loss matches a naive per-pixel loop") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> cls(0, 3);
    const ad::Tensor z = random_logits(rng, {6, 5, 3}, 4.0);
    LabelImage lab(5, 6);
    for (auto& l : lab.data) {
      const int c = cls(rng);
      l = c == 3 ? LabelImage::kIgnore : std::uint8_t(c);
    }
    double ref = 0.0;
    int counted = 0;
    for (std::size_t i = 0; i < lab.data.size(); ++i) {
      if (lab.data[i] == LabelImage::kIgnore) continue;
      ref += naive_ce(&z.data()[i * 3], 3, lab.data[i]);
      ++counted;
    }
    CHECK(std::abs(loss_task(z, lab).item() - ref / counted) < 1e-10);
  }

  TEST_CASE("task loss is invariant to a per-pixel logit shift") {
    std::mt19937_64 rng(4);
    const ad::Tensor z = random_logits(rng, {4, 4, 3}, 3.0);
    std::vector<double> d = values(z);
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (std::size_t i = 0; i < d.size(); i += 3) {
      const double c = u(rng);
      for (int k = 0; k < 3; ++k) d[i + k] += c;
    }
    LabelImage lab(4, 4);
    for (std::size_t i = 0; i < lab.data.size(); ++i) lab.data[i] = std::uint8_t(i % 3);
    CHECK(std::abs(loss_task(z, lab).item() - loss_task(ad::Tensor::from({4, 4, 3}, d), lab).item()) < 1e-10);
  }

  TEST_CASE("pred of identical futures is zero and equals mean per-view recon") {
    std::mt19937_64 rng(5);
    std::vector<RgbImage> p, t;
    for (int v = 0; v < 3; ++v) {
      p.push_back(random_image(rng, 4, 4));
      t.push_back(random_image(rng, 4, 4));
    }
    std::vector<ad::Tensor> pt;
    std::vector<const RgbImage*> tp, pp;
    double ref = 0.0;
    for (int v = 0; v < 3; ++v) {
      pt.push_back(as_tensor(p[v]));
      tp.push_back(&t[v]);
      pp.push_back(&p[v]);
      ref += loss_recon(pt.back(), t[v]).item() / 3.0;
    }
    CHECK(loss_pred(pt, pp).item() == 0.0);
    CHECK(std::abs(loss_pred(pt, tp).item() - ref) < 1e-12);
    CHECK_THROWS(loss_pred(pt, {tp[0], tp[1]}));
  }

  TEST_CASE("bc loss: peaked logits vanish and uniform logits give 56.06") {
    BimanualAction gt;
    gt.stabilizing.trans_bin = {3, 50, 99};
    gt.stabilizing.rot_bins = {0, 71, 36};
    gt.acting.trans_bin = {0, 1, 2};
    gt.acting.rot_bins = {5, 6, 7};
    gt.acting.open = false;
    gt.acting.collide = true;
    const PolicyLogits uniform{ad::Tensor::zeros({2, kArmLogits})};
    const double expect = 2 * (3 * std::log(100.0) + 3 * std::log(72.0) + 2 * std::log(2.0));
    CHECK(std::abs(loss_bc(uniform, gt).item() - expect) < 1e-10);
    CHECK(loss_bc(uniform, gt).item() == doctest::Approx(56.06).epsilon(1e-4));

    std::vector<double> peaked(2 * kArmLogits, 0.0);
    for (int arm = 0; arm < 2; ++arm) {
      const ArmAction& a = arm == 0 ? gt.left() : gt.right();
      const int bins[8] = {a.trans_bin[0], a.trans_bin[1], a.trans_bin[2], a.rot_bins[0],
                           a.rot_bins[1],  a.rot_bins[2],  a.open ? 1 : 0,  a.collide ? 1 : 0};
      for (int h = 0; h < kHeadsPerArm; ++h) peaked[arm * kArmLogits + head_span(h).offset + bins[h]] = 20.0;
    }
    // A +20 margin leaves (n - 1) e^-20 per head: below 1e-6 per head, about 2.1e-6 summed over 16 heads.
    const double peaked_loss = loss_bc(PolicyLogits{ad::Tensor::from({2, kArmLogits}, peaked)}, gt).item();
    double closed = 0.0;
    for (int arm = 0; arm < 2; ++arm)
      for (int h = 0; h < kHeadsPerArm; ++h) {
        const double per_head = std::log1p((head_span(h).size - 1) * std::exp(-20.0));
        CHECK(per_head < 1e-6);
        closed += per_head;
      }
    CHECK(std::abs(peaked_loss - closed) < 1e-12);

    ArmAction bad;
    bad.trans_bin = {100, 0, 0};
    CHECK_THROWS(loss_bc(uniform, BimanualAction{bad, ArmAction{}}));
  }

  TEST_CASE("bc loss matches a naive softmax cross-entropy") {
    std::mt19937_64 rng(6);
    const ad::Tensor z = random_logits(rng, {2, std::size_t(kArmLogits)}, 5.0);
    BimanualAction gt;
    gt.role = Role::kLeftStabilizes;
    gt.stabilizing.trans_bin = {11, 22, 33};
    gt.stabilizing.rot_bins = {44, 55, 66};
    gt.acting.trans_bin = {77, 88, 99};
    gt.acting.rot_bins = {1, 2, 3};
    gt.acting.open = false;
    double ref = 0.0;
    for (int arm = 0; arm < 2; ++arm) {
      const ArmAction& a = arm == 0 ? gt.left() : gt.right();
      const int bins[8] = {a.trans_bin[0], a.trans_bin[1], a.trans_bin[2], a.rot_bins[0],
                           a.rot_bins[1],  a.rot_bins[2],  a.open ? 1 : 0,  a.collide ? 1 : 0};
      for (int h = 0; h < kHeadsPerArm; ++h) {
        const HeadSpan s = head_span(h);
        ref += naive_ce(&z.data()[arm * kArmLogits + s.offset], s.size, bins[h]);
      }
    }
    CHECK(std::abs(loss_bc(PolicyLogits{z}, gt).item() - ref) < 1e-10);
  }

  TEST_CASE("total is the weighted sum") {
    const ad::Tensor one = ad::Tensor::scalar(1.0);
    LossComponents c{one, one, one, one};
    CHECK(loss_total(c, LossWeights{}).item() == doctest::Approx(1.3).epsilon(1e-15));
    CHECK(loss_total(c, LossWeights{0, 0, 0}).item() == 1.0);
    LossComponents partial{one, {}, one, {}};
    CHECK(loss_total(partial, LossWeights{}).item() == doctest::Approx(1.1).epsilon(1e-15));
    LossComponents broken{one, ad::Tensor::scalar(std::nan("")), one, one};
    CHECK_THROWS_AS(loss_total(broken, LossWeights{}), NonFiniteError);
    CHECK_THROWS(LossWeights{-0.1, 0, 0}.validate());
  }

  TEST_CASE("gradient of the total is linear in the weights") {
    std::mt19937_64 rng(7);
    const RgbImage target = random_image(rng, 3, 3);
    LabelImage lab(3, 3);
    for (std::size_t i = 0; i < lab.data.size(); ++i) lab.data[i] = std::uint8_t(i % 3);
    const ad::Tensor x = random_logits(rng, {3, 3, 3}, 1.0, true);
    const ad::Tensor pol = random_logits(rng, {2, std::size_t(kArmLogits)}, 1.0, true);
    BimanualAction gt;

    const auto grads = [&](const LossWeights& w) {
      x.zero_grad();
      pol.zero_grad();
      ad::Tape tape;
      ad::TapeScope scope(tape);
      const ad::Tensor rgb = ad::sigmoid(x);
      LossComponents c;
      c.bc = loss_bc(PolicyLogits{pol}, gt);
      c.recon = loss_recon(rgb, target);
      c.task = loss_task(x, lab);
      c.pred = loss_pred({ad::tanh(x)}, {&target});
      ad::backward(loss_total(c, w));
      std::vector<double> g = values(x);
      g.assign(x.grad().begin(), x.grad().end());
      return g;
    };
    const auto g_all = grads({0.3, 0.5, 0.7});
    const auto g_bc = grads({0, 0, 0});
    const auto g_r = grads({1, 0, 0});
    const auto g_t = grads({0, 1, 0});
    const auto g_p = grads({0, 0, 1});
    const auto g_p2 = grads({0, 0, 2});
    for (std::size_t i = 0; i < g_all.size(); ++i) {
      const double r = g_r[i] - g_bc[i], t = g_t[i] - g_bc[i], p = g_p[i] - g_bc[i];
      CHECK(std::abs(g_all[i] - (g_bc[i] + 0.3 * r + 0.5 * t + 0.7 * p)) < 1e-10);
      CHECK(std::abs((g_p2[i] - g_bc[i]) - 2.0 * p) < 1e-12);
    }
  }
}
