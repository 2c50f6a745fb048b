#include <doctest.h>

#include <cmath>
#include <limits>

#include "siamtrack/error.hpp"
#include "siamtrack/rpn_head.hpp"
#include "support.hpp"

using namespace siamtrack;
using namespace siamtrack::testing;

namespace {

ResponsePair<float> constant_pair(int k, int size, float v, int level) {
  return {Tensor<float>(Shape{1, 2 * k, size, size}, v), Tensor<float>(Shape{1, 4 * k, size, size}, v), level};
}

void set_raw(Fusion<float>& f, std::vector<float> alpha, std::vector<float> beta) {
  std::copy(alpha.begin(), alpha.end(), f.alpha.value.data());
  std::copy(beta.begin(), beta.end(), f.beta.value.data());
}

}  // namespace

TEST_CASE("rpn block output sizes") {
  Rng rng(1);
  RpnBlock<float> block(8, 5, 3, 1);
  block.init(rng);
  const auto big = block.forward(random_tensor<float>(Shape{1, 8, 7, 7}, rng),
                                 random_tensor<float>(Shape{1, 8, 31, 31}, rng), Mode::eval);
  CHECK(big.cls.shape() == Shape{1, 10, 25, 25});
  CHECK(big.reg.shape() == Shape{1, 20, 25, 25});
  CHECK(big.level == 3);
  CHECK(big.k() == 5);
  const auto desk = block.forward(random_tensor<float>(Shape{1, 8, 5, 5}, rng),
                                  random_tensor<float>(Shape{1, 8, 17, 17}, rng), Mode::eval);
  CHECK(desk.cls.h() == 13);
  CHECK(desk.reg.w() == 13);

  // the default 3x3 adjust convs shrink both maps by two cells first
  RpnBlock<float> adjusted(8, 5, 4);
  adjusted.init(rng);
  const Tensor<float> z = random_tensor<float>(Shape{1, 8, 7, 7}, rng);
  const Tensor<float> x = random_tensor<float>(Shape{1, 8, 31, 31}, rng);
  const auto a = adjusted.forward(z, x, Mode::eval);
  const auto b = adjusted.forward(z, x, Mode::eval);
  CHECK(a.cls.h() == 25);
  CHECK(a.cls == b.cls);
  CHECK(a.reg == b.reg);
}

TEST_CASE("response pair validation") {
  ResponsePair<float> p = constant_pair(5, 4, 0, 3);
  CHECK_NOTHROW(p.validate());
  p.reg = Tensor<float>(Shape{1, 19, 4, 4});
  CHECK_THROWS_AS(p.validate(), ShapeError);
  p = constant_pair(5, 4, 0, 3);
  p.reg = Tensor<float>(Shape{1, 20, 5, 4});
  CHECK_THROWS_AS(p.validate(), ShapeError);
}

TEST_CASE("fusion weights") {
  Fusion<float> f(3);
  for (float w : f.alpha_normalized()) CHECK(w == doctest::Approx(1.0 / 3.0));
  set_raw(f, {0.3f, -1.2f, 2.0f}, {0.1f, 0.2f, 0.3f});
  const auto a = f.alpha_normalized();
  CHECK(a[0] + a[1] + a[2] == doctest::Approx(1.0).epsilon(1e-6));
  for (float w : a) CHECK(w > 0);

  // normalization ignores a common offset of the raw weights
  Fusion<float> g(3);
  set_raw(g, {0.3f + 4.0f, -1.2f + 4.0f, 2.0f + 4.0f}, {0.1f, 0.2f, 0.3f});
  const auto b = g.alpha_normalized();
  for (int i = 0; i < 3; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-7);
  // and with equal raw weights, scaling them changes nothing
  set_raw(g, {2.5f, 2.5f, 2.5f}, {0.f, 0.f, 0.f});
  for (float w : g.alpha_normalized()) CHECK(w == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("fusion outputs") {
  const float inf = std::numeric_limits<float>::infinity();
  Rng rng(2);
  std::vector<ResponsePair<float>> in;
  for (int l = 0; l < 3; ++l) {
    in.push_back({random_tensor<float>(Shape{1, 10, 6, 6}, rng), random_tensor<float>(Shape{1, 20, 6, 6}, rng),
                  3 + l});
  }
  Fusion<float> f(3);
  SUBCASE("one-hot selection") {
    set_raw(f, {0, -inf, -inf}, {-inf, -inf, 0});
    const auto out = f.forward(in);
    CHECK(out.cls == in[0].cls);
    CHECK(out.reg == in[2].reg);
  }
  SUBCASE("identical inputs are a fixed point") {
    set_raw(f, {0.4f, -0.3f, 1.1f}, {0.2f, 0.1f, 0.0f});
    const std::vector<ResponsePair<float>> same(3, in[1]);
    const auto out = f.forward(same);
    CHECK(max_abs_diff(out.cls, in[1].cls) < 1e-6);
    CHECK(max_abs_diff(out.reg, in[1].reg) < 1e-6);
  }
  SUBCASE("weighted constant maps") {
    set_raw(f, {std::log(0.2f), std::log(0.5f), std::log(0.3f)}, {0, 0, 0});
    const std::vector<ResponsePair<float>> c{constant_pair(5, 4, 1, 3), constant_pair(5, 4, 2, 4),
                                             constant_pair(5, 4, 3, 5)};
    const auto out = f.forward(c);
    for (float v : out.cls.values()) CHECK(v == doctest::Approx(2.1).epsilon(1e-6));
    for (float v : out.reg.values()) CHECK(v == doctest::Approx(2.0).epsilon(1e-6));
  }
  SUBCASE("shape mismatch") {
    in[2].cls = Tensor<float>(Shape{1, 10, 5, 5});
    in[2].reg = Tensor<float>(Shape{1, 20, 5, 5});
    CHECK_THROWS_AS(f.forward(in), ShapeError);
    in.pop_back();
    CHECK_THROWS_AS(f.forward(in), ShapeError);
  }
}

TEST_CASE("select_best") {
  AnchorConfig ac;
  ac.scales = {32};
  SUBCASE("single candidate") {
    AnchorConfig one;
    one.ratios = {1.0};
    const AnchorSet anchors = make_anchors(one, 1, 1, 10, 10);
    ResponsePair<float> p = constant_pair(1, 1, 0, 3);
    p.cls.at(0, 1, 0, 0) = -3;
    const Selection s = select_best(p, anchors);
    CHECK(s.index == 0u);
    CHECK(s.box == anchors.boxes[0]);
  }
  SUBCASE("ties go to the lowest flat index") {
    const AnchorSet anchors = make_anchors(ac, 9, 9, 0, 0);
    const Selection s = select_best(constant_pair(5, 9, 0.5f, 3), anchors);
    CHECK(s.index == 0u);
    CHECK(s.score == doctest::Approx(0.5));
    const std::vector<double> v{0.1, 0.7, 0.3, 0.7};
    CHECK(argmax_first(v) == 1u);
  }
  SUBCASE("constructed maximum") {
    const AnchorSet anchors = make_anchors(ac, 9, 11, 0, 0);
    ResponsePair<float> p{Tensor<float>(Shape{1, 10, 9, 11}), Tensor<float>(Shape{1, 20, 9, 11}), 3};
    p.cls.at(0, 5 + 2, 3, 7) = 4.0f;  // target channel of anchor 2
    p.reg.at(0, 0 * 5 + 2, 3, 7) = 0.25f;  // dx of anchor 2
    const Selection s = select_best(p, anchors);
    CHECK(s.row == 3);
    CHECK(s.col == 7);
    CHECK(s.anchor == 2);
    CHECK(s.index == anchors.index(3, 7, 2));
    CHECK(s.score == doctest::Approx(1.0 / (1.0 + std::exp(-4.0))).epsilon(1e-6));
    const BBox& a = anchors.at(3, 7, 2);
    CHECK(s.box.cx == doctest::Approx(a.cx + 0.25 * a.w));
    CHECK(s.box.w == doctest::Approx(a.w));
  }
}
