#include "siamtrack/loss.hpp"

#include <cmath>

namespace siamtrack {

template <typename T>
T smooth_l1(T x) {
  const T a = std::abs(x);
  return a < T(1) ? T(0.5) * x * x : a - T(0.5);
}

template <typename T>
T smooth_l1_grad(T x) {
  if (x >= T(1)) return T(1);
  if (x <= T(-1)) return T(-1);
  return x;
}

template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = smooth_l1(x.data()[i]);
  return y;
}

template <typename T>
LossResult<T> total_loss(const ResponsePair<T>& fused, const std::vector<LabelAssignment>& labels,
                         double reg_weight) {
  fused.validate();
  const int N = fused.cls.n();
  const int k = fused.k();
  const int H = fused.cls.h();
  const int W = fused.cls.w();
  if (static_cast<int>(labels.size()) != N) throw ShapeError("one label assignment per batch item");
  const std::size_t anchors = static_cast<std::size_t>(H) * W * k;
  std::size_t n_cls = 0;
  std::size_t n_reg = 0;
  for (const auto& l : labels) {
    if (l.labels.size() != anchors) throw ShapeError("labels and response grid disagree");
    for (std::size_t i = 0; i < anchors; ++i) {
      n_cls += l.cls_mask[i];
      n_reg += l.reg_mask[i];
    }
  }
  LossResult<T> out;
  out.dcls = Tensor<T>(fused.cls.shape());
  out.dreg = Tensor<T>(fused.reg.shape());
  if (n_cls == 0) {
    out.loss.empty_mask = true;
    return out;
  }
  double cls_sum = 0;
  double reg_sum = 0;
  const double inv_cls = 1.0 / static_cast<double>(n_cls);
  const double inv_reg = n_reg > 0 ? 1.0 / static_cast<double>(n_reg) : 0.0;
  for (int n = 0; n < N; ++n) {
    const auto& l = labels[n];
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        for (int a = 0; a < k; ++a) {
          const std::size_t idx = (static_cast<std::size_t>(i) * W + j) * k + a;
          if (l.cls_mask[idx]) {
            const double bg = fused.cls.at(n, a, i, j);
            const double fg = fused.cls.at(n, k + a, i, j);
            const double m = std::max(bg, fg);
            const double lse = m + std::log(std::exp(bg - m) + std::exp(fg - m));
            const bool pos = l.labels[idx] == AnchorLabel::positive;
            cls_sum += lse - (pos ? fg : bg);
            const double p_fg = std::exp(fg - lse);
            const double p_bg = std::exp(bg - lse);
            out.dcls.at(n, a, i, j) = static_cast<T>((p_bg - (pos ? 0.0 : 1.0)) * inv_cls);
            out.dcls.at(n, k + a, i, j) = static_cast<T>((p_fg - (pos ? 1.0 : 0.0)) * inv_cls);
          }
          if (l.reg_mask[idx]) {
            const RegressionDelta& d = l.deltas[idx];
            const double target[4] = {d.dx, d.dy, d.dw, d.dh};
            for (int c = 0; c < 4; ++c) {
              const double diff = fused.reg.at(n, c * k + a, i, j) - target[c];
              reg_sum += smooth_l1(diff);
              out.dreg.at(n, c * k + a, i, j) =
                  static_cast<T>(reg_weight * smooth_l1_grad(diff) * inv_reg);
            }
          }
        }
      }
    }
  }
  out.loss.cls_loss = cls_sum * inv_cls;
  out.loss.reg_loss = reg_sum * inv_reg;
  out.loss.total = out.loss.cls_loss + reg_weight * out.loss.reg_loss;
  return out;
}

template float smooth_l1(float);
template double smooth_l1(double);
template float smooth_l1_grad(float);
template double smooth_l1_grad(double);
template Tensor<float> smooth_l1(const Tensor<float>&);
template Tensor<double> smooth_l1(const Tensor<double>&);
template LossResult<float> total_loss(const ResponsePair<float>&, const std::vector<LabelAssignment>&, double);
template LossResult<double> total_loss(const ResponsePair<double>&, const std::vector<LabelAssignment>&, double);

}  // namespace siamtrack
