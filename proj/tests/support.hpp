#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "siamtrack/backbone.hpp"
#include "siamtrack/geometry.hpp"
#include "siamtrack/tensor.hpp"

namespace siamtrack::testing {

template <typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double sd = 1.0) {
  Tensor<T> t(s);
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : t.values()) v = static_cast<T>(n(rng));
  return t;
}

template <typename T>
Tensor<T> from_values(Shape s, std::initializer_list<double> v) {
  Tensor<T> t(s);
  std::size_t i = 0;
  for (double x : v) t.data()[i++] = static_cast<T>(x);
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  }
  return m;
}

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

// Overlap measured by counting the pixel centers of a res x res raster laid
// over the joint bounding region of both boxes.
inline double raster_iou(const BBox& a, const BBox& b, int res) {
  const double x0 = std::min(a.x0(), b.x0()), y0 = std::min(a.y0(), b.y0());
  const double cw = (std::max(a.x1(), b.x1()) - x0) / res;
  const double ch = (std::max(a.y1(), b.y1()) - y0) / res;
  long ia = 0, ib = 0, both = 0;
  for (int i = 0; i < res; ++i) {
    const double y = y0 + (i + 0.5) * ch;
    const bool ya = y >= a.y0() && y < a.y1(), yb = y >= b.y0() && y < b.y1();
    if (!ya && !yb) continue;
    for (int j = 0; j < res; ++j) {
      const double x = x0 + (j + 0.5) * cw;
      const bool in_a = ya && x >= a.x0() && x < a.x1();
      const bool in_b = yb && x >= b.x0() && x < b.x1();
      ia += in_a;
      ib += in_b;
      both += in_a && in_b;
    }
  }
  const long uni = ia + ib - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / uni;
}

struct EquivarianceReport {
  double interior = 0;  // max abs deviation away from the border cells
  double border = 0;    // max abs deviation on the outermost overlapping cells
};

// Feeds two windows of one random image offset by `stride` pixels and compares
// the deepest feature map of the second with the first shifted by one cell.
inline EquivarianceReport stride_shift_deviation(Backbone& net, int input, std::uint64_t seed) {
  const int s = net.config().base_stride();
  Rng rng(seed);
  const Tensor<float> big = random_tensor<float>(Shape{1, net.config().input_channels, input + s, input + s}, rng);
  Tensor<float> a(Shape{1, big.c(), input, input}), b(Shape{1, big.c(), input, input});
  for (int c = 0; c < big.c(); ++c) {
    for (int y = 0; y < input; ++y) {
      for (int x = 0; x < input; ++x) {
        a.at(0, c, y, x) = big.at(0, c, y, x);
        b.at(0, c, y, x) = big.at(0, c, y + s, x + s);
      }
    }
  }
  const Tensor<float> fa = net.forward(a, Mode::eval).levels.back().values;
  const Tensor<float> fb = net.forward(b, Mode::eval).levels.back().values;
  EquivarianceReport r;
  const int h = fa.h(), w = fa.w();
  for (int c = 0; c < fa.c(); ++c) {
    for (int i = 0; i + 1 < h; ++i) {
      for (int j = 0; j + 1 < w; ++j) {
        const double d = std::abs(static_cast<double>(fb.at(0, c, i, j)) - fa.at(0, c, i + 1, j + 1));
        const bool edge = i == 0 || j == 0 || i + 2 == h || j + 2 == w;
        (edge ? r.border : r.interior) = std::max(edge ? r.border : r.interior, d);
      }
    }
  }
  return r;
}

}  // namespace siamtrack::testing
