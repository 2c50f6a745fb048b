#include <doctest.h>

#include <cmath>

#include "siamtrack/loss.hpp"
#include "support.hpp"

using namespace siamtrack;
using namespace siamtrack::testing;

namespace {

// k anchors on an h x h grid; positives get deltas, first `neg` others are negatives.
LabelAssignment make_labels(int k, int h, std::vector<std::size_t> pos, std::vector<std::size_t> neg,
                            Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(k) * h * h;
  LabelAssignment la;
  la.labels.assign(n, AnchorLabel::ignore);
  la.cls_mask.assign(n, 0);
  la.reg_mask.assign(n, 0);
  la.deltas.assign(n, RegressionDelta{});
  std::normal_distribution<double> d(0, 0.7);
  for (std::size_t i : pos) {
    la.labels[i] = AnchorLabel::positive;
    la.cls_mask[i] = la.reg_mask[i] = 1;
    la.deltas[i] = {d(rng), d(rng), d(rng), d(rng)};
  }
  for (std::size_t i : neg) {
    la.labels[i] = AnchorLabel::negative;
    la.cls_mask[i] = 1;
  }
  la.num_positive = static_cast<int>(pos.size());
  la.num_negative = static_cast<int>(neg.size());
  la.no_positive = pos.empty();
  return la;
}

// cls channel q * k + a, reg channel c * k + a at anchor index ((i * W) + j) * k + a
void set_anchor(ResponsePair<double>& p, int n, std::size_t idx, double bg, double fg,
                const RegressionDelta* d) {
  const int k = p.k(), w = p.cls.w();
  const int a = static_cast<int>(idx % k), cell = static_cast<int>(idx / k);
  const int i = cell / w, j = cell % w;
  p.cls.at(n, a, i, j) = bg;
  p.cls.at(n, k + a, i, j) = fg;
  if (d) {
    p.reg.at(n, a, i, j) = d->dx;
    p.reg.at(n, k + a, i, j) = d->dy;
    p.reg.at(n, 2 * k + a, i, j) = d->dw;
    p.reg.at(n, 3 * k + a, i, j) = d->dh;
  }
}

}  // namespace

TEST_CASE("smooth_l1 values") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(2.0) == 1.5);
  CHECK(smooth_l1(-2.0) == 1.5);
  CHECK(smooth_l1(1.0) == 0.5);
  CHECK(smooth_l1_grad(0.5) == 0.5);
  CHECK(smooth_l1_grad(-3.0) == -1.0);
  const Tensor<double> t = smooth_l1(from_values<double>(Shape{1, 1, 1, 3}, {0, 0.5, 2}));
  CHECK(t == from_values<double>(Shape{1, 1, 1, 3}, {0, 0.125, 1.5}));
}

TEST_CASE("total loss closed forms") {
  Rng rng(1);
  const int k = 2, h = 3;
  const LabelAssignment la = make_labels(k, h, {4, 9}, {0, 1, 2, 3, 17}, rng);
  ResponsePair<double> p{Tensor<double>(Shape{1, 2 * k, h, h}), Tensor<double>(Shape{1, 4 * k, h, h}), 3};

  SUBCASE("uniform logits") {
    const auto r = total_loss(p, {la});
    CHECK(r.loss.cls_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_FALSE(r.loss.empty_mask);
  }
  SUBCASE("perfect prediction") {
    for (std::size_t i = 0; i < la.labels.size(); ++i) {
      if (la.labels[i] == AnchorLabel::positive) set_anchor(p, 0, i, -50, 50, &la.deltas[i]);
      if (la.labels[i] == AnchorLabel::negative) set_anchor(p, 0, i, 50, -50, nullptr);
    }
    CHECK(total_loss(p, {la}).loss.total < 1e-6);
  }
  SUBCASE("hand-computed mixture") {
    set_anchor(p, 0, 4, 0.3, 1.1, nullptr);
    const auto r = total_loss(p, {la}, 1.0);
    // anchor 4 has logit gap 0.8 towards the target; the other six sit at ln 2
    const double ce4 = std::log1p(std::exp(-0.8));
    CHECK(r.loss.cls_loss == doctest::Approx((ce4 + 6 * std::log(2.0)) / 7).epsilon(1e-12));
    double reg = 0;
    for (std::size_t i : {4u, 9u}) {
      const auto& d = la.deltas[i];
      reg += smooth_l1(-d.dx) + smooth_l1(-d.dy) + smooth_l1(-d.dw) + smooth_l1(-d.dh);
    }
    CHECK(r.loss.reg_loss == doctest::Approx(reg / 2).epsilon(1e-12));
    CHECK(r.loss.total == doctest::Approx(r.loss.cls_loss + r.loss.reg_loss).epsilon(1e-14));
  }
  SUBCASE("regression weight is linear") {
    p = {random_tensor<double>(p.cls.shape(), rng), random_tensor<double>(p.reg.shape(), rng), 3};
    const auto one = total_loss(p, {la}, 1.0);
    const auto two = total_loss(p, {la}, 2.0);
    CHECK(two.loss.reg_loss == one.loss.reg_loss);
    CHECK(two.loss.total - two.loss.cls_loss == 2.0 * (one.loss.total - one.loss.cls_loss));
    for (std::size_t i = 0; i < one.dreg.size(); ++i) CHECK(two.dreg.data()[i] == 2.0 * one.dreg.data()[i]);
  }
}

TEST_CASE("loss pools anchors over the batch") {
  Rng rng(2);
  const int k = 1, h = 2;
  const LabelAssignment a = make_labels(k, h, {0}, {1, 2}, rng);
  const LabelAssignment b = make_labels(k, h, {}, {3}, rng);
  ResponsePair<double> p{random_tensor<double>(Shape{2, 2, h, h}, rng),
                         random_tensor<double>(Shape{2, 4, h, h}, rng), 3};
  const auto both = total_loss(p, {a, b});
  ResponsePair<double> p0{p.cls.slice_sample(0), p.reg.slice_sample(0), 3};
  ResponsePair<double> p1{p.cls.slice_sample(1), p.reg.slice_sample(1), 3};
  const auto l0 = total_loss(p0, {a}), l1 = total_loss(p1, {b});
  CHECK(both.loss.cls_loss == doctest::Approx((3 * l0.loss.cls_loss + 1 * l1.loss.cls_loss) / 4).epsilon(1e-12));
  CHECK(both.loss.reg_loss == doctest::Approx(l0.loss.reg_loss).epsilon(1e-12));
  CHECK(l1.loss.reg_loss == 0.0);
}

TEST_CASE("empty mask is a flagged zero loss") {
  Rng rng(3);
  const LabelAssignment la = make_labels(1, 2, {}, {}, rng);
  ResponsePair<double> p{random_tensor<double>(Shape{1, 2, 2, 2}, rng),
                         random_tensor<double>(Shape{1, 4, 2, 2}, rng), 3};
  const auto r = total_loss(p, {la});
  CHECK(r.loss.total == 0.0);
  CHECK(r.loss.empty_mask);
  for (double g : r.dcls.values()) CHECK(g == 0.0);
}

TEST_CASE("loss is finite and non-negative on random inputs") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const LabelAssignment la = make_labels(3, 4, {1, 5, 20}, {0, 2, 3, 40, 41}, rng);
    ResponsePair<float> p{random_tensor<float>(Shape{1, 6, 4, 4}, rng, 30.0),
                          random_tensor<float>(Shape{1, 12, 4, 4}, rng, 5.0), 3};
    const auto r = total_loss(p, {la});
    CHECK(std::isfinite(r.loss.total));
    CHECK(r.loss.cls_loss >= 0);
    CHECK(r.loss.reg_loss >= 0);
  }
}
