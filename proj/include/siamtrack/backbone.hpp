#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "siamtrack/layers.hpp"

namespace siamtrack {

enum class BackboneVariant { padfree_shallow, padded_residual };

std::string to_string(BackboneVariant v);
BackboneVariant backbone_variant_from_string(const std::string& s);

inline constexpr int kNumStages = 3;
// Stage index 0..2 <-> conv3..conv5.
inline constexpr std::array<int, kNumStages> kStageTags{3, 4, 5};

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::padded_residual;
  int input_channels = 3;
  // One stride-2 3x3 valid conv per entry; the product of strides is the base stride.
  std::vector<int> stem_channels{8, 16};
  std::array<int, kNumStages> stage_channels{16, 32, 64};
  std::array<int, kNumStages> stage_dilations{1, 2, 4};
  std::array<int, kNumStages> stage_strides{1, 1, 1};
  int adapter_dim = 32;
  // Center crop applied to template features (cells); 0 disables it.
  int template_crop = 7;

  int base_stride() const { return 1 << stem_channels.size(); }
  std::array<int, kNumStages> effective_strides() const;
  // Spatial size of stage `s` for a square input of `input` pixels.
  int feature_size(int input, int stage) const;
  void validate() const;

  static BackboneConfig desk(BackboneVariant v);
  static BackboneConfig large_scale();
};

struct FeatureMap {
  Tensor<float> values;
  int stride = 1;
  bool padding_used = false;
  int level = 0;
};

struct FeaturePyramid {
  std::vector<FeatureMap> levels;
};

// One layer on the main path, for receptive-field arithmetic.
struct LayerGeometry {
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

std::vector<LayerGeometry> main_path(const BackboneConfig& cfg, int stage);

struct ReceptiveField {
  int size = 1;  // input pixels
  int jump = 1;  // input pixels per output cell
};
ReceptiveField receptive_field(const BackboneConfig& cfg, int stage);

// Output cells [lo, hi] (one axis) whose value can depend on input pixel p.
std::pair<int, int> influence_range(const BackboneConfig& cfg, int stage, int pixel);

class BasicBlock {
 public:
  struct Cache {
    ConvBn<float>::Cache a;
    ConvBn<float>::Cache b;
    ConvBn<float>::Cache shortcut;
    Tensor<float> out;
  };

  BasicBlock() = default;
  BasicBlock(int in, int out, int stride, int dilation);

  void init(Rng& rng);
  Tensor<float> forward(const Tensor<float>& x, Mode mode, Cache* cache);
  Tensor<float> backward(const Tensor<float>& dy, const Cache& cache, bool need_dx);
  void visit(const Visitor<float>& v, const std::string& prefix);
  void set_group(ParamGroup g);

  ConvBn<float> a;
  ConvBn<float> b;
  ConvBn<float> shortcut;
  bool has_shortcut = false;
};

class Backbone {
 public:
  struct Cache {
    std::vector<ConvBn<float>::Cache> stem;
    std::array<BasicBlock::Cache, kNumStages> blocks;
    std::array<ConvBn<float>::Cache, kNumStages> plain;
    int depth = 0;
  };

  Backbone() = default;
  Backbone(const BackboneConfig& cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }

  // Runs the stages up to and including `last_stage`.
  FeaturePyramid forward(const Tensor<float>& x, Mode mode, int last_stage = kNumStages - 1,
                         Cache* cache = nullptr);
  // grads[s] may be empty for stages that did not feed the loss.
  void backward(const std::vector<Tensor<float>>& grads, const Cache& cache);

  void visit(const Visitor<float>& v, const std::string& prefix);
  std::size_t param_count();

 private:
  BackboneConfig cfg_;
  std::vector<ConvBn<float>> stem_;
  std::array<BasicBlock, kNumStages> blocks_;
  std::array<ConvBn<float>, kNumStages> plain_;
};

// Per-level 1x1 conv + BN reducing stage channels to a common width.
class Adapters {
 public:
  using Cache = std::array<ConvBn<float>::Cache, kNumStages>;

  Adapters() = default;
  Adapters(const BackboneConfig& cfg, std::uint64_t seed);

  FeaturePyramid forward(const FeaturePyramid& in, Mode mode, Cache* cache = nullptr);
  std::vector<Tensor<float>> backward(const std::vector<Tensor<float>>& grads, const Cache& cache,
                                      bool need_dx);
  void visit(const Visitor<float>& v, const std::string& prefix);

  std::array<ConvBn<float>, kNumStages> layers;
};

// Spatially centered sub-grid; size must share the parity of each extent.
template <typename T>
Tensor<T> crop_center(const Tensor<T>& x, int size);
// Gradient of crop_center: zero-pads back to (h, w).
template <typename T>
Tensor<T> uncrop_center(const Tensor<T>& dy, int h, int w);

FeatureMap crop_center(const FeatureMap& f, int size);

}  // namespace siamtrack
