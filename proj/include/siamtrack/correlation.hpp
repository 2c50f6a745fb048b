#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "siamtrack/layers.hpp"

namespace siamtrack {

enum class CorrVariant { xcorr, up_xcorr, dw_xcorr };

std::string to_string(CorrVariant v);
CorrVariant corr_variant_from_string(const std::string& s);

struct CorrConfig {
  CorrVariant variant = CorrVariant::dw_xcorr;
  int channels = 256;       // D, identical on both branches
  int out_channels = 0;     // UP raise multiplier for a single branch; 0 = derive from k
  double bias = 0.0;        // plain XCorr offset b
  int adjust_kernel = 3;
  int raise_kernel = 3;
  int fusion_kernel = 1;
  int output_kernel = 1;

  void validate() const;
};

// Parameter totals of one correlation head (cls + reg branches), split by role.
struct ParamCount {
  std::int64_t adjust_conv = 0;
  std::int64_t adjust_norm = 0;
  std::int64_t corr_side = 0;
  std::int64_t fusion = 0;
  std::int64_t output = 0;

  std::int64_t total() const { return adjust_conv + adjust_norm + corr_side + fusion + output; }
};

ParamCount count_params(const CorrConfig& cfg, int k);

// Multiply-accumulates of one head forward pass for template/search feature
// sizes hz and hx (square maps).
std::int64_t count_macs(const CorrConfig& cfg, int k, int hz, int hx);

// All correlations are "valid": output extent is Hx - Hz + 1. The template
// batch is either 1 (broadcast) or equal to the search batch.
template <typename T>
Tensor<T> xcorr(const Tensor<T>& zf, const Tensor<T>& xf, T b);
template <typename T>
Tensor<T> xcorr_reference(const Tensor<T>& zf, const Tensor<T>& xf, T b);

template <typename T>
Tensor<T> dw_xcorr(const Tensor<T>& zf, const Tensor<T>& xf);
template <typename T>
Tensor<T> dw_xcorr_reference(const Tensor<T>& zf, const Tensor<T>& xf);
// Returns (dL/dzf, dL/dxf).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> dw_xcorr_backward(const Tensor<T>& dy, const Tensor<T>& zf,
                                                  const Tensor<T>& xf);

// zf carries G*C channels; output channel g correlates zf[g*C:(g+1)*C] with xf.
template <typename T>
Tensor<T> grouped_xcorr(const Tensor<T>& zf, const Tensor<T>& xf);
template <typename T>
Tensor<T> grouped_xcorr_reference(const Tensor<T>& zf, const Tensor<T>& xf);
template <typename T>
std::pair<Tensor<T>, Tensor<T>> grouped_xcorr_backward(const Tensor<T>& dy, const Tensor<T>& zf,
                                                       const Tensor<T>& xf);

// Up-channel correlation: a heavy convolution raises the template to
// out_channels * D channels, then each slice is correlated with the search map.
template <typename T>
class UpXCorr {
 public:
  struct Cache {
    typename Conv2d<T>::Cache raise;
    Tensor<T> raised;
    Tensor<T> xf;
  };

  UpXCorr() = default;
  UpXCorr(int channels, int out_channels, int raise_kernel);

  void init(Rng& rng) { raise.init(rng); }
  Tensor<T> forward(const Tensor<T>& zf, const Tensor<T>& xf, Cache* cache = nullptr) const;
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy, const Cache& cache);
  void visit(const Visitor<T>& v, const std::string& prefix) { raise.visit(v, prefix + ".raise"); }
  std::size_t param_count() const { return raise.param_count(); }
  int out_channels() const { return out_channels_; }

  Conv2d<T> raise;

 private:
  int out_channels_ = 0;
};

// The full SiamRPN-style UP head: search adjust convs, raised template
// correlation for cls (2k) and reg (4k), and a 1x1 regression adjust.
template <typename T>
class UpXCorrHead {
 public:
  struct Cache {
    typename Conv2d<T>::Cache search_cls;
    typename Conv2d<T>::Cache search_reg;
    typename UpXCorr<T>::Cache corr_cls;
    typename UpXCorr<T>::Cache corr_reg;
    typename Conv2d<T>::Cache reg_adjust;
  };

  UpXCorrHead() = default;
  UpXCorrHead(const CorrConfig& cfg, int k);

  void init(Rng& rng);
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& zf, const Tensor<T>& xf,
                                          Cache* cache = nullptr) const;
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dcls, const Tensor<T>& dreg,
                                           const Cache& cache);
  void visit(const Visitor<T>& v, const std::string& prefix);
  std::size_t param_count() const;

  Conv2d<T> search_cls;
  Conv2d<T> search_reg;
  UpXCorr<T> corr_cls;
  UpXCorr<T> corr_reg;
  Conv2d<T> reg_adjust;
};

// Depthwise correlation with its two non-shared adjust blocks (conv + BN).
template <typename T>
class DwXCorr {
 public:
  struct Cache {
    typename ConvBn<T>::Cache z_adjust;
    typename ConvBn<T>::Cache x_adjust;
    Tensor<T> zf;
    Tensor<T> xf;
  };

  DwXCorr() = default;
  DwXCorr(int channels, int adjust_kernel);

  void init(Rng& rng);
  Tensor<T> forward(const Tensor<T>& zf, const Tensor<T>& xf, Mode mode, Cache* cache = nullptr);
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy, const Cache& cache);
  void visit(const Visitor<T>& v, const std::string& prefix);
  std::size_t param_count() const { return z_adjust.param_count() + x_adjust.param_count(); }

  ConvBn<T> z_adjust;
  ConvBn<T> x_adjust;
};

}  // namespace siamtrack
