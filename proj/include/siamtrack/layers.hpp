#pragma once

#include <functional>
#include <random>
#include <string>

#include "siamtrack/tensor.hpp"

namespace siamtrack {

using Rng = std::mt19937_64;

enum class Mode { train, eval };

// Parameters of the feature extractor get the backbone learning-rate scale
// and are subject to freezing; everything else is "head".
enum class ParamGroup { backbone, head };

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> velocity;
  ParamGroup group = ParamGroup::head;

  void reset(Shape s, T fill = T(0)) {
    value = Tensor<T>(s, fill);
    grad = Tensor<T>(s);
    velocity = Tensor<T>(s);
  }
  std::size_t count() const { return value.size(); }
};

template <typename T>
struct Visitor {
  std::function<void(const std::string&, Parameter<T>&)> param;
  std::function<void(const std::string&, Tensor<T>&)> buffer;
};

struct ConvSpec {
  int in = 1;
  int out = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  bool bias = true;

  int out_size(int in_size) const {
    return (in_size + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1;
  }
  std::size_t param_count() const {
    return static_cast<std::size_t>(out) * in * kernel * kernel + (bias ? out : 0);
  }
};

template <typename T>
class Conv2d {
 public:
  struct Cache {
    Tensor<T> input;
  };

  Conv2d() = default;
  explicit Conv2d(const ConvSpec& spec);

  const ConvSpec& spec() const { return spec_; }

  // He-normal weights (std = sqrt(2 / fan_in)), zero bias.
  void init(Rng& rng);
  void set_identity();

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const;
  // Accumulates into weight/bias grads; returns dL/dx unless need_dx is false.
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx = true);

  void visit(const Visitor<T>& v, const std::string& prefix);
  void set_group(ParamGroup g);
  std::size_t param_count() const { return spec_.param_count(); }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  ConvSpec spec_;
};

template <typename T>
class BatchNorm2d {
 public:
  struct Cache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    Mode mode = Mode::train;
  };

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, T eps = T(1e-5), T momentum = T(0.1));

  // Train mode normalizes with batch statistics and updates the running
  // estimates; eval mode uses the running estimates only.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache = nullptr);
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache);

  void visit(const Visitor<T>& v, const std::string& prefix);
  void set_group(ParamGroup g);
  int channels() const { return channels_; }
  std::size_t param_count() const { return 2 * static_cast<std::size_t>(channels_); }

  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

 private:
  int channels_ = 0;
  T eps_ = T(1e-5);
  T momentum_ = T(0.1);
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
// dy masked by y > 0, where y is the relu output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y);

// Conv -> BN -> optional ReLU, the recurring unit of every network here.
template <typename T>
class ConvBn {
 public:
  struct Cache {
    typename Conv2d<T>::Cache conv;
    typename BatchNorm2d<T>::Cache bn;
    Tensor<T> out;
  };

  ConvBn() = default;
  ConvBn(const ConvSpec& spec, bool relu);

  void init(Rng& rng) { conv.init(rng); }
  Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache = nullptr);
  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache, bool need_dx = true);
  void visit(const Visitor<T>& v, const std::string& prefix);
  void set_group(ParamGroup g);
  std::size_t param_count() const { return conv.param_count() + bn.param_count(); }
  bool has_relu() const { return relu_; }

  Conv2d<T> conv;
  BatchNorm2d<T> bn;

 private:
  bool relu_ = false;
};

}  // namespace siamtrack
