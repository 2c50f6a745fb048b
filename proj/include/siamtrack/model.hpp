#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "siamtrack/backbone.hpp"
#include "siamtrack/geometry.hpp"
#include "siamtrack/rpn_head.hpp"

namespace siamtrack {

struct ModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  int template_size = 63;
  int search_size = 127;
  std::vector<int> levels{3, 4, 5};  // subset of kStageTags, ascending
  int adjust_kernel = 3;

  int k() const { return anchors.k(); }
  int last_stage() const { return levels.back() - kStageTags[0]; }
  int stride() const { return backbone.effective_strides()[levels.front() - kStageTags[0]]; }
  // Per-level template feature side after the optional crop.
  int template_feature_size(int level) const;
  int search_feature_size(int level) const;
  int response_size() const;
  void validate() const;

  static ModelConfig desk(BackboneVariant v);
  static ModelConfig large_scale();
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

class SiamModel {
 public:
  struct Cache {
    Backbone::Cache bz;
    Backbone::Cache bx;
    Adapters::Cache az;
    Adapters::Cache ax;
    std::vector<RpnBlock<float>::Cache> heads;
    std::vector<ResponsePair<float>> responses;
    std::vector<int> zf_size;  // template feature extent before the crop
  };

  SiamModel() = default;
  SiamModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const AnchorSet& anchors() const { return anchors_; }
  int num_levels() const { return static_cast<int>(cfg_.levels.size()); }

  // Template branch, one tensor per level (adapted and cropped).
  std::vector<Tensor<float>> template_features(const Tensor<float>& z, Mode mode = Mode::eval,
                                               Cache* cache = nullptr);
  std::vector<Tensor<float>> search_features(const Tensor<float>& x, Mode mode = Mode::eval,
                                             Cache* cache = nullptr);
  std::vector<ResponsePair<float>> level_responses(const std::vector<Tensor<float>>& zf,
                                                   const std::vector<Tensor<float>>& xf, Mode mode,
                                                   Cache* cache = nullptr);

  // Full pass; z may have batch 1 against a larger search batch.
  ResponsePair<float> forward(const Tensor<float>& z, const Tensor<float>& x, Mode mode,
                              Cache* cache = nullptr);
  // Inference with cached template features.
  ResponsePair<float> track(const std::vector<Tensor<float>>& zf, const Tensor<float>& x);

  // Accumulates gradients. The backbone is skipped when train_backbone is false.
  void backward(const ResponsePair<float>& grad, Cache& cache, bool train_backbone);

  void visit(const Visitor<float>& v);
  std::size_t param_count();
  void zero_grad();

  Backbone backbone;
  Adapters adapters;
  std::vector<RpnBlock<float>> heads;
  Fusion<float> fusion;

 private:
  ModelConfig cfg_;
  AnchorSet anchors_;
};

// Binary container: magic, version, model config as JSON, then named f32
// arrays for every parameter and buffer.
void save_checkpoint(const std::filesystem::path& path, SiamModel& model);
SiamModel load_checkpoint(const std::filesystem::path& path);

}  // namespace siamtrack
