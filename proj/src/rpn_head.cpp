#include "siamtrack/rpn_head.hpp"

#include <algorithm>
#include <cmath>

namespace siamtrack {

template <typename T>
void ResponsePair<T>::validate() const {
  if (cls.c() % 2 != 0 || reg.c() != 2 * cls.c()) {
    throw ShapeError("response channels must be 2k / 4k");
  }
  if (cls.n() != reg.n() || cls.h() != reg.h() || cls.w() != reg.w()) {
    throw ShapeError("cls and reg maps disagree on shape");
  }
}

template <typename T>
RpnBlock<T>::RpnBlock(int channels, int k, int level, int adjust_kernel)
    : corr(channels, adjust_kernel),
      cls_fuse(ConvSpec{channels, channels, 1, 1, 0, 1, false}, true),
      cls_out(ConvSpec{channels, 2 * k, 1, 1, 0, 1, true}),
      reg_fuse(ConvSpec{channels, channels, 1, 1, 0, 1, false}, true),
      reg_out(ConvSpec{channels, 4 * k, 1, 1, 0, 1, true}),
      k_(k),
      level_(level) {
  if (k < 1) throw ConfigError("need at least one anchor per location");
}

template <typename T>
void RpnBlock<T>::init(Rng& rng) {
  corr.init(rng);
  cls_fuse.init(rng);
  cls_out.init(rng);
  reg_fuse.init(rng);
  reg_out.init(rng);
  // small output weights keep the initial logits and deltas near zero
  for (auto& w : cls_out.weight.value.values()) w *= T(0.1);
  for (auto& w : reg_out.weight.value.values()) w *= T(0.1);
}

template <typename T>
ResponsePair<T> RpnBlock<T>::forward(const Tensor<T>& zf, const Tensor<T>& xf, Mode mode,
                                     Cache* cache) {
  Tensor<T> c = corr.forward(zf, xf, mode, cache ? &cache->corr : nullptr);
  ResponsePair<T> out;
  out.level = level_;
  out.cls = cls_out.forward(cls_fuse.forward(c, mode, cache ? &cache->cls_fuse : nullptr),
                            cache ? &cache->cls_out : nullptr);
  out.reg = reg_out.forward(reg_fuse.forward(c, mode, cache ? &cache->reg_fuse : nullptr),
                            cache ? &cache->reg_out : nullptr);
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> RpnBlock<T>::backward(const Tensor<T>& dcls, const Tensor<T>& dreg,
                                                      const Cache& cache) {
  Tensor<T> dc = cls_fuse.backward(cls_out.backward(dcls, cache.cls_out), cache.cls_fuse);
  dc += reg_fuse.backward(reg_out.backward(dreg, cache.reg_out), cache.reg_fuse);
  return corr.backward(dc, cache.corr);
}

template <typename T>
void RpnBlock<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  corr.visit(v, prefix + ".corr");
  cls_fuse.visit(v, prefix + ".cls_fuse");
  cls_out.visit(v, prefix + ".cls_out");
  reg_fuse.visit(v, prefix + ".reg_fuse");
  reg_out.visit(v, prefix + ".reg_out");
}

template <typename T>
std::size_t RpnBlock<T>::param_count() const {
  return corr.param_count() + cls_fuse.param_count() + cls_out.param_count() +
         reg_fuse.param_count() + reg_out.param_count();
}

template <typename T>
std::vector<T> normalize_weights(std::span<const T> raw) {
  if (raw.empty()) throw ShapeError("no fusion weights");
  T mx = raw[0];
  for (T r : raw) mx = std::max(mx, r);
  std::vector<T> out(raw.size());
  T sum = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::exp(raw[i] - mx);
    sum += out[i];
  }
  for (auto& o : out) o /= sum;
  return out;
}

template <typename T>
Tensor<T> weighted_sum(const std::vector<const Tensor<T>*>& maps, std::span<const T> weights) {
  if (maps.empty() || maps.size() != weights.size()) throw ShapeError("fusion arity mismatch");
  Tensor<T> out(maps[0]->shape());
  for (std::size_t l = 0; l < maps.size(); ++l) {
    maps[0]->require_same(*maps[l], "fuse");
    const T w = weights[l];
    const T* src = maps[l]->data();
    T* dst = out.data();
    for (std::size_t i = 0; i < out.size(); ++i) dst[i] += w * src[i];
  }
  return out;
}

template <typename T>
Fusion<T>::Fusion(int levels) : levels_(levels) {
  if (levels < 1 || levels > 3) throw ConfigError("fusion supports 1..3 levels");
  alpha.reset(Shape{1, levels, 1, 1});
  beta.reset(Shape{1, levels, 1, 1});
}

template <typename T>
std::vector<T> Fusion<T>::alpha_normalized() const {
  return normalize_weights<T>(alpha.value.values());
}

template <typename T>
std::vector<T> Fusion<T>::beta_normalized() const {
  return normalize_weights<T>(beta.value.values());
}

template <typename T>
ResponsePair<T> Fusion<T>::forward(const std::vector<ResponsePair<T>>& in) const {
  if (static_cast<int>(in.size()) != levels_) throw ShapeError("fusion expects " + std::to_string(levels_) + " levels");
  std::vector<const Tensor<T>*> cls;
  std::vector<const Tensor<T>*> reg;
  for (const auto& r : in) {
    r.validate();
    cls.push_back(&r.cls);
    reg.push_back(&r.reg);
  }
  const auto a = alpha_normalized();
  const auto b = beta_normalized();
  ResponsePair<T> out;
  out.cls = weighted_sum<T>(cls, a);
  out.reg = weighted_sum<T>(reg, b);
  out.level = 0;
  return out;
}

namespace {

template <typename T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// d raw_l = w_l * (g_l - sum_m w_m g_m)
template <typename T>
void softmax_backward(const std::vector<T>& w, const std::vector<T>& g, Tensor<T>& raw_grad) {
  T mean = 0;
  for (std::size_t m = 0; m < w.size(); ++m) mean += w[m] * g[m];
  for (std::size_t l = 0; l < w.size(); ++l) raw_grad.data()[l] += w[l] * (g[l] - mean);
}

}  // namespace

template <typename T>
std::vector<ResponsePair<T>> Fusion<T>::backward(const ResponsePair<T>& grad,
                                                 const std::vector<ResponsePair<T>>& in) {
  const auto a = alpha_normalized();
  const auto b = beta_normalized();
  std::vector<ResponsePair<T>> out(in.size());
  std::vector<T> ga(in.size());
  std::vector<T> gb(in.size());
  for (std::size_t l = 0; l < in.size(); ++l) {
    out[l].level = in[l].level;
    out[l].cls = grad.cls;
    out[l].cls *= a[l];
    out[l].reg = grad.reg;
    out[l].reg *= b[l];
    ga[l] = dot(grad.cls, in[l].cls);
    gb[l] = dot(grad.reg, in[l].reg);
  }
  softmax_backward(a, ga, alpha.grad);
  softmax_backward(b, gb, beta.grad);
  return out;
}

template <typename T>
void Fusion<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  if (v.param) {
    v.param(prefix + ".alpha", alpha);
    v.param(prefix + ".beta", beta);
  }
}

std::vector<double> positive_scores(const Tensor<float>& cls, int n) {
  const int k = cls.c() / 2;
  const int H = cls.h();
  const int W = cls.w();
  std::vector<double> out(static_cast<std::size_t>(H) * W * k);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      for (int a = 0; a < k; ++a) {
        const double bg = cls.at(n, a, i, j);
        const double fg = cls.at(n, k + a, i, j);
        out[(static_cast<std::size_t>(i) * W + j) * k + a] = 1.0 / (1.0 + std::exp(bg - fg));
      }
    }
  }
  return out;
}

std::vector<BBox> decode_boxes(const Tensor<float>& reg, const AnchorSet& anchors, int n) {
  const int k = anchors.k;
  if (reg.c() != 4 * k || reg.h() != anchors.rows || reg.w() != anchors.cols) {
    throw ShapeError("regression map and anchors are not aligned");
  }
  std::vector<BBox> out(anchors.size());
  for (int i = 0; i < anchors.rows; ++i) {
    for (int j = 0; j < anchors.cols; ++j) {
      for (int a = 0; a < k; ++a) {
        RegressionDelta d{reg.at(n, a, i, j), reg.at(n, k + a, i, j), reg.at(n, 2 * k + a, i, j),
                          reg.at(n, 3 * k + a, i, j)};
        // keep decoding finite for wildly untrained heads
        d.dw = std::clamp(d.dw, -10.0, 10.0);
        d.dh = std::clamp(d.dh, -10.0, 10.0);
        const std::size_t idx = anchors.index(i, j, a);
        out[idx] = decode_regression(anchors.boxes[idx], d);
      }
    }
  }
  return out;
}

std::size_t argmax_first(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Selection select_best(const ResponsePair<float>& fused, const AnchorSet& anchors) {
  fused.validate();
  if (fused.cls.h() != anchors.rows || fused.cls.w() != anchors.cols || fused.k() != anchors.k) {
    throw ShapeError("response and anchors are not aligned");
  }
  const auto scores = positive_scores(fused.cls);
  const std::size_t best = argmax_first(scores);
  Selection sel;
  sel.index = best;
  sel.anchor = static_cast<int>(best % anchors.k);
  sel.col = static_cast<int>((best / anchors.k) % anchors.cols);
  sel.row = static_cast<int>(best / anchors.k / anchors.cols);
  sel.score = scores[best];
  const int k = anchors.k;
  const int i = sel.row;
  const int j = sel.col;
  const int a = sel.anchor;
  RegressionDelta d{fused.reg.at(0, a, i, j), fused.reg.at(0, k + a, i, j),
                    fused.reg.at(0, 2 * k + a, i, j), fused.reg.at(0, 3 * k + a, i, j)};
  sel.box = decode_regression(anchors.boxes[best], d);
  return sel;
}

template struct ResponsePair<float>;
template struct ResponsePair<double>;
template class RpnBlock<float>;
template class RpnBlock<double>;
template class Fusion<float>;
template class Fusion<double>;
template std::vector<float> normalize_weights(std::span<const float>);
template std::vector<double> normalize_weights(std::span<const double>);
template Tensor<float> weighted_sum(const std::vector<const Tensor<float>*>&, std::span<const float>);
template Tensor<double> weighted_sum(const std::vector<const Tensor<double>*>&, std::span<const double>);

}  // namespace siamtrack
