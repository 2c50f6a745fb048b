#pragma once

#include <vector>

#include "siamtrack/correlation.hpp"
#include "siamtrack/geometry.hpp"

namespace siamtrack {

// cls channel (class q, anchor a) = q * k + a with q = 0 background, 1 target;
// reg channel (coord c, anchor a) = c * k + a with c in (dx, dy, dw, dh).
template <typename T>
struct ResponsePair {
  Tensor<T> cls;
  Tensor<T> reg;
  int level = 0;

  int k() const { return cls.c() / 2; }
  void validate() const;
};

// One Siamese RPN block: DW-XCorr followed by sibling cls / reg heads
// (1x1 conv-bn-relu, then a 1x1 output conv).
template <typename T>
class RpnBlock {
 public:
  struct Cache {
    typename DwXCorr<T>::Cache corr;
    typename ConvBn<T>::Cache cls_fuse;
    typename Conv2d<T>::Cache cls_out;
    typename ConvBn<T>::Cache reg_fuse;
    typename Conv2d<T>::Cache reg_out;
  };

  RpnBlock() = default;
  RpnBlock(int channels, int k, int level, int adjust_kernel = 3);

  void init(Rng& rng);
  ResponsePair<T> forward(const Tensor<T>& zf, const Tensor<T>& xf, Mode mode,
                          Cache* cache = nullptr);
  // Returns (dL/dzf, dL/dxf).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dcls, const Tensor<T>& dreg,
                                           const Cache& cache);
  void visit(const Visitor<T>& v, const std::string& prefix);
  std::size_t param_count() const;
  int level() const { return level_; }
  int k() const { return k_; }

  DwXCorr<T> corr;
  ConvBn<T> cls_fuse;
  Conv2d<T> cls_out;
  ConvBn<T> reg_fuse;
  Conv2d<T> reg_out;

 private:
  int k_ = 0;
  int level_ = 0;
};

// Raw-weight softmax, one group per output kind.
template <typename T>
std::vector<T> normalize_weights(std::span<const T> raw);

template <typename T>
Tensor<T> weighted_sum(const std::vector<const Tensor<T>*>& maps, std::span<const T> weights);

// Learned weighted fusion of per-level responses; alpha weighs cls, beta reg.
template <typename T>
class Fusion {
 public:
  Fusion() = default;
  explicit Fusion(int levels);

  int levels() const { return levels_; }
  std::vector<T> alpha_normalized() const;
  std::vector<T> beta_normalized() const;

  ResponsePair<T> forward(const std::vector<ResponsePair<T>>& in) const;
  // Per-level gradients; accumulates raw alpha/beta gradients.
  std::vector<ResponsePair<T>> backward(const ResponsePair<T>& grad,
                                        const std::vector<ResponsePair<T>>& in);
  void visit(const Visitor<T>& v, const std::string& prefix);

  Parameter<T> alpha;
  Parameter<T> beta;

 private:
  int levels_ = 0;
};

struct Selection {
  std::size_t index = 0;  // flat anchor index ((i * W) + j) * k + a
  int row = 0;
  int col = 0;
  int anchor = 0;
  double score = 0;
  BBox box;
};

// Positive-class softmax probability per anchor for batch item n, in anchor order.
std::vector<double> positive_scores(const Tensor<float>& cls, int n = 0);
// Decoded boxes per anchor for batch item n, in anchor order.
std::vector<BBox> decode_boxes(const Tensor<float>& reg, const AnchorSet& anchors, int n = 0);

// Raw argmax of positive scores; ties go to the lowest flat index.
Selection select_best(const ResponsePair<float>& fused, const AnchorSet& anchors);
std::size_t argmax_first(std::span<const double> values);

}  // namespace siamtrack
