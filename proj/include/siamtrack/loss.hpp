#pragma once

#include <vector>

#include "siamtrack/rpn_head.hpp"
#include "siamtrack/sampling.hpp"

namespace siamtrack {

template <typename T>
T smooth_l1(T x);
template <typename T>
T smooth_l1_grad(T x);
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& x);

struct LossBreakdown {
  double cls_loss = 0;
  double reg_loss = 0;
  double total = 0;
  bool empty_mask = false;  // no anchor selected anywhere in the batch
};

template <typename T>
struct LossResult {
  LossBreakdown loss;
  Tensor<T> dcls;
  Tensor<T> dreg;
};

// Softmax cross-entropy averaged over masked anchors plus reg_weight times the
// smooth-L1 regression loss averaged over sampled positives, pooled over the
// batch. labels[n] belongs to batch item n.
template <typename T>
LossResult<T> total_loss(const ResponsePair<T>& fused, const std::vector<LabelAssignment>& labels,
                         double reg_weight = 1.0);

}  // namespace siamtrack
