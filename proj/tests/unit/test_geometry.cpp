#include <doctest.h>

#include <cmath>
#include <sstream>

#include "siamtrack/error.hpp"
#include "siamtrack/geometry.hpp"
#include "support.hpp"

using namespace siamtrack;
using siamtrack::testing::raster_iou;
using siamtrack::testing::rel_error;

namespace {

BBox random_box(Rng& rng, double lo = 1, double hi = 200) {
  std::uniform_real_distribution<double> pos(-300, 300), size(lo, hi);
  return {pos(rng), pos(rng), size(rng), size(rng)};
}

}  // namespace

TEST_CASE("iou fixed cases") {
  const BBox a{1, 1, 2, 2};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox{10, 10, 2, 2}) == 0.0);
  CHECK(iou(a, BBox{2, 1, 2, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // touching edges share no interior
  CHECK(iou(a, BBox{3, 1, 2, 2}) == 0.0);
}

TEST_CASE("iou symmetry, bounds and scale invariance") {
  Rng rng(11);
  std::uniform_real_distribution<double> scale(0.01, 100);
  for (int t = 0; t < 2000; ++t) {
    BBox a = random_box(rng), b = random_box(rng);
    if (t % 3 == 0) b = {a.cx + 5, a.cy - 3, a.w * 1.2, a.h * 0.9};
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
    const double c = scale(rng);
    const BBox as{a.cx * c, a.cy * c, a.w * c, a.h * c}, bs{b.cx * c, b.cy * c, b.w * c, b.h * c};
    CHECK(std::abs(iou(as, bs) - v) <= 1e-9);
  }
}

TEST_CASE("iou agrees with a raster oracle") {
  Rng rng(5);
  std::uniform_real_distribution<double> pos(0, 100), size(1, 60);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const BBox a{pos(rng), pos(rng), size(rng), size(rng)};
    const BBox b{a.cx + size(rng) - 30, a.cy + size(rng) - 30, size(rng), size(rng)};
    worst = std::max(worst, std::abs(iou(a, b) - raster_iou(a, b, 512)));
  }
  CHECK(worst < 2e-3);
}

TEST_CASE("corner form roundtrip") {
  Rng rng(3);
  for (int t = 0; t < 1000; ++t) {
    const BBox b = random_box(rng);
    const BBox r = BBox::from_corners(b.x0(), b.y0(), b.x1(), b.y1());
    CHECK(rel_error(r.cx, b.cx) < 1e-9 + 1e-12 / std::max(std::abs(b.cx), 1e-3));
    CHECK(rel_error(r.w, b.w) < 1e-9);
    CHECK(rel_error(r.h, b.h) < 1e-9);
    const BBox x = BBox::from_xywh(b.x0(), b.y0(), b.w, b.h);
    CHECK(std::abs(x.cy - b.cy) <= 1e-9 * std::max(1.0, std::abs(b.cy)));
  }
}

TEST_CASE("anchor grid") {
  AnchorConfig cfg;
  cfg.scales = {32};
  cfg.stride = 4;
  SUBCASE("count") { CHECK(make_anchors(cfg, 25, 25, 0, 0).size() == 3125u); }
  SUBCASE("single cell centered on patch") {
    AnchorConfig one;
    one.ratios = {1.0};
    one.scales = {64};
    one.stride = 8;
    const double o = centered_origin(127, 1, 8);
    const AnchorSet s = make_anchors(one, 1, 1, o, o);
    REQUIRE(s.size() == 1u);
    CHECK(s.boxes[0].cx == doctest::Approx(63.5));
    CHECK(s.boxes[0].cy == doctest::Approx(63.5));
    CHECK(s.boxes[0].w == doctest::Approx(64));
  }
  SUBCASE("areas close to scale squared") {
    const AnchorSet s = make_anchors(cfg, 3, 3, 0, 0);
    for (const BBox& b : s.boxes) CHECK(std::abs(b.area() / (32.0 * 32.0) - 1.0) < 0.02);
  }
  SUBCASE("centers on a regular grid with flat index order") {
    const AnchorSet s = make_anchors(cfg, 4, 6, 10.5, -3.0);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 6; ++j) {
        for (int a = 0; a < cfg.k(); ++a) {
          const BBox& b = s.boxes[(static_cast<std::size_t>(i) * 6 + j) * cfg.k() + a];
          CHECK(b.cx == doctest::Approx(10.5 + 4 * j));
          CHECK(b.cy == doctest::Approx(-3.0 + 4 * i));
          CHECK(&b == &s.at(i, j, a));
        }
      }
    }
  }
  SUBCASE("origin translation moves every center exactly") {
    const AnchorSet s0 = make_anchors(cfg, 5, 5, 2.0, 3.0);
    const AnchorSet s1 = make_anchors(cfg, 5, 5, 2.0 + 7.0, 3.0 - 2.0);
    for (std::size_t n = 0; n < s0.size(); ++n) {
      CHECK(s1.boxes[n].cx - s0.boxes[n].cx == 7.0);
      CHECK(s1.boxes[n].cy - s0.boxes[n].cy == -2.0);
      CHECK(s1.boxes[n].w == s0.boxes[n].w);
    }
  }
  SUBCASE("invalid ratios rejected") {
    AnchorConfig bad = cfg;
    bad.ratios = {1.0, -2.0};
    CHECK_THROWS_AS(make_anchors(bad, 2, 2, 0, 0), ConfigError);
    bad.ratios = {};
    CHECK_THROWS_AS(make_anchors(bad, 2, 2, 0, 0), ConfigError);
  }
}

TEST_CASE("regression encoding") {
  const BBox anchor{0, 0, 10, 10};
  const RegressionDelta zero = encode_regression(anchor, anchor);
  CHECK(zero.dx == 0);
  CHECK(zero.dy == 0);
  CHECK(zero.dw == 0);
  CHECK(zero.dh == 0);
  const RegressionDelta d = encode_regression(anchor, BBox{5, 0, 20, 10});
  CHECK(d.dx == doctest::Approx(0.5));
  CHECK(d.dy == 0);
  CHECK(d.dw == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(d.dh == 0);
  CHECK(decode_regression(anchor, RegressionDelta{}) == anchor);
  const BBox back = decode_regression(anchor, RegressionDelta{0.5, 0, std::log(2.0), 0});
  CHECK(back.cx == doctest::Approx(5));
  CHECK(back.w == doctest::Approx(20));
  CHECK(back.h == doctest::Approx(10));
}

TEST_CASE("regression roundtrip fuzz") {
  Rng rng(17);
  std::uniform_real_distribution<double> delta(-3, 3);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const BBox a = random_box(rng), g = random_box(rng);
    const BBox r = decode_regression(a, encode_regression(a, g));
    worst = std::max({worst, std::abs(r.cx - g.cx) / std::max(std::abs(g.cx), g.w),
                      std::abs(r.cy - g.cy) / std::max(std::abs(g.cy), g.h), rel_error(r.w, g.w),
                      rel_error(r.h, g.h)});
    const RegressionDelta d{delta(rng), delta(rng), delta(rng), delta(rng)};
    const RegressionDelta e = encode_regression(a, decode_regression(a, d));
    worst = std::max({worst, std::abs(e.dx - d.dx), std::abs(e.dw - d.dw)});
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("decode overflow is a numeric error") {
  CHECK_THROWS_AS(decode_regression(BBox{0, 0, 10, 10}, RegressionDelta{0, 0, 800, 0}), NumericError);
}

TEST_CASE("box text format") {
  std::istringstream in("10,20,30,40\n1.5,2.5,3,4\n");
  const auto boxes = parse_boxes(in);
  REQUIRE(boxes.size() == 2u);
  CHECK(boxes[0].cx == 25);
  CHECK(boxes[0].cy == 40);
  CHECK(boxes[0].w == 30);
  std::ostringstream out;
  write_boxes(out, boxes);
  std::istringstream again(out.str());
  const auto back = parse_boxes(again);
  REQUIRE(back.size() == 2u);
  CHECK(back[1].cx == doctest::Approx(boxes[1].cx).epsilon(1e-12));
  std::istringstream bad("1,2,3\n");
  CHECK_THROWS_AS(parse_boxes(bad), DatasetError);
}
