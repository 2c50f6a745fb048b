#include "siamtrack/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

namespace siamtrack {

namespace {

int stage_of(int level) { return level - kStageTags[0]; }

}  // namespace

int ModelConfig::template_feature_size(int level) const {
  const int n = backbone.feature_size(template_size, stage_of(level));
  return backbone.template_crop > 0 ? std::min(n, backbone.template_crop) : n;
}

int ModelConfig::search_feature_size(int level) const {
  return backbone.feature_size(search_size, stage_of(level));
}

int ModelConfig::response_size() const {
  const int l = levels.front();
  return search_feature_size(l) - template_feature_size(l) + 1;
}

void ModelConfig::validate() const {
  backbone.validate();
  anchors.validate();
  if (levels.empty() || levels.size() > kNumStages) throw ConfigError("model needs 1..3 levels");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < kStageTags.front() || levels[i] > kStageTags.back()) {
      throw ConfigError("level " + std::to_string(levels[i]) + " is not one of 3, 4, 5");
    }
    if (i > 0 && levels[i] <= levels[i - 1]) throw ConfigError("levels must be strictly ascending");
  }
  if (template_size < 1 || search_size <= template_size) {
    throw ConfigError("search patch must be larger than the template patch");
  }
  if (adjust_kernel < 1) throw ConfigError("adjust_kernel must be positive");
  const auto strides = backbone.effective_strides();
  for (int l : levels) {
    if (strides[stage_of(l)] != stride()) {
      throw ConfigError("fused levels must share one effective stride");
    }
    const int full = backbone.feature_size(template_size, stage_of(l));
    if (full < 1) throw ConfigError("template patch too small for the backbone");
    if (backbone.template_crop > 0 && (full - backbone.template_crop) % 2 != 0) {
      throw ConfigError("template_crop parity differs from the template feature size");
    }
    if (template_feature_size(l) < adjust_kernel) {
      throw ConfigError("template features smaller than the adjust kernel");
    }
    const int r = search_feature_size(l) - template_feature_size(l) + 1;
    if (r < 1) throw ConfigError("search features smaller than template features");
    if (r != response_size()) throw ConfigError("levels produce different response sizes");
  }
  if (anchors.stride != stride()) {
    throw ConfigError("anchor stride " + std::to_string(anchors.stride) +
                      " differs from feature stride " + std::to_string(stride()));
  }
}

ModelConfig ModelConfig::desk(BackboneVariant v) {
  ModelConfig cfg;
  cfg.backbone = BackboneConfig::desk(v);
  cfg.anchors.stride = cfg.backbone.effective_strides()[0];
  cfg.anchors.scales = {8.0 * cfg.anchors.stride};
  return cfg;
}

ModelConfig ModelConfig::large_scale() {
  ModelConfig cfg;
  cfg.backbone = BackboneConfig::large_scale();
  cfg.template_size = 127;
  cfg.search_size = 255;
  cfg.anchors.stride = cfg.backbone.effective_strides()[0];
  cfg.anchors.scales = {8.0 * cfg.anchors.stride};
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  const auto& b = cfg.backbone;
  nlohmann::json j;
  j["backbone"] = {{"variant", to_string(b.variant)},
                   {"input_channels", b.input_channels},
                   {"stem_channels", b.stem_channels},
                   {"stage_channels", b.stage_channels},
                   {"stage_dilations", b.stage_dilations},
                   {"stage_strides", b.stage_strides},
                   {"adapter_dim", b.adapter_dim},
                   {"template_crop", b.template_crop}};
  j["anchors"] = {{"ratios", cfg.anchors.ratios},
                  {"scales", cfg.anchors.scales},
                  {"stride", cfg.anchors.stride}};
  j["template_size"] = cfg.template_size;
  j["search_size"] = cfg.search_size;
  j["levels"] = cfg.levels;
  j["adjust_kernel"] = cfg.adjust_kernel;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig cfg;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& b = j.at("backbone");
    cfg.backbone.variant = backbone_variant_from_string(b.at("variant").get<std::string>());
    cfg.backbone.input_channels = b.at("input_channels").get<int>();
    cfg.backbone.stem_channels = b.at("stem_channels").get<std::vector<int>>();
    cfg.backbone.stage_channels = b.at("stage_channels").get<std::array<int, kNumStages>>();
    cfg.backbone.stage_dilations = b.at("stage_dilations").get<std::array<int, kNumStages>>();
    cfg.backbone.stage_strides = b.at("stage_strides").get<std::array<int, kNumStages>>();
    cfg.backbone.adapter_dim = b.at("adapter_dim").get<int>();
    cfg.backbone.template_crop = b.at("template_crop").get<int>();
    const auto& a = j.at("anchors");
    cfg.anchors.ratios = a.at("ratios").get<std::vector<double>>();
    cfg.anchors.scales = a.at("scales").get<std::vector<double>>();
    cfg.anchors.stride = a.at("stride").get<int>();
    cfg.template_size = j.at("template_size").get<int>();
    cfg.search_size = j.at("search_size").get<int>();
    cfg.levels = j.at("levels").get<std::vector<int>>();
    cfg.adjust_kernel = j.at("adjust_kernel").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad model config in checkpoint: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

SiamModel::SiamModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  backbone = Backbone(cfg_.backbone, rng());
  adapters = Adapters(cfg_.backbone, rng());
  for (int l : cfg_.levels) {
    heads.emplace_back(cfg_.backbone.adapter_dim, cfg_.k(), l, cfg_.adjust_kernel);
    heads.back().init(rng);
  }
  fusion = Fusion<float>(num_levels());
  const int r = cfg_.response_size();
  const double o = centered_origin(cfg_.search_size, r, cfg_.stride());
  anchors_ = make_anchors(cfg_.anchors, r, r, o, o);
}

std::vector<Tensor<float>> SiamModel::template_features(const Tensor<float>& z, Mode mode,
                                                        Cache* cache) {
  FeaturePyramid p = backbone.forward(z, mode, cfg_.last_stage(), cache ? &cache->bz : nullptr);
  FeaturePyramid used;
  for (int l : cfg_.levels) used.levels.push_back(p.levels[stage_of(l)]);
  used = adapters.forward(used, mode, cache ? &cache->az : nullptr);
  std::vector<Tensor<float>> out;
  if (cache) cache->zf_size.clear();
  for (auto& f : used.levels) {
    if (cache) cache->zf_size.push_back(f.values.h());
    out.push_back(cfg_.backbone.template_crop > 0 && f.values.h() > cfg_.backbone.template_crop
                      ? crop_center(f.values, cfg_.backbone.template_crop)
                      : std::move(f.values));
  }
  return out;
}

std::vector<Tensor<float>> SiamModel::search_features(const Tensor<float>& x, Mode mode,
                                                      Cache* cache) {
  FeaturePyramid p = backbone.forward(x, mode, cfg_.last_stage(), cache ? &cache->bx : nullptr);
  FeaturePyramid used;
  for (int l : cfg_.levels) used.levels.push_back(p.levels[stage_of(l)]);
  used = adapters.forward(used, mode, cache ? &cache->ax : nullptr);
  std::vector<Tensor<float>> out;
  for (auto& f : used.levels) out.push_back(std::move(f.values));
  return out;
}

std::vector<ResponsePair<float>> SiamModel::level_responses(const std::vector<Tensor<float>>& zf,
                                                            const std::vector<Tensor<float>>& xf,
                                                            Mode mode, Cache* cache) {
  if (zf.size() != heads.size() || xf.size() != heads.size()) {
    throw ShapeError("one template and one search feature map per level");
  }
  if (cache) cache->heads.resize(heads.size());
  std::vector<ResponsePair<float>> out;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    out.push_back(heads[i].forward(zf[i], xf[i], mode, cache ? &cache->heads[i] : nullptr));
  }
  return out;
}

ResponsePair<float> SiamModel::forward(const Tensor<float>& z, const Tensor<float>& x, Mode mode,
                                       Cache* cache) {
  auto zf = template_features(z, mode, cache);
  auto xf = search_features(x, mode, cache);
  auto responses = level_responses(zf, xf, mode, cache);
  ResponsePair<float> fused = fusion.forward(responses);
  if (cache) cache->responses = std::move(responses);
  return fused;
}

ResponsePair<float> SiamModel::track(const std::vector<Tensor<float>>& zf, const Tensor<float>& x) {
  auto xf = search_features(x, Mode::eval);
  return fusion.forward(level_responses(zf, xf, Mode::eval));
}

void SiamModel::backward(const ResponsePair<float>& grad, Cache& cache, bool train_backbone) {
  const auto per_level = fusion.backward(grad, cache.responses);
  std::vector<Tensor<float>> dz(kNumStages), dx(kNumStages);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    auto [gz, gx] = heads[i].backward(per_level[i].cls, per_level[i].reg, cache.heads[i]);
    const int s = stage_of(cfg_.levels[i]);
    const int full = cache.zf_size[i];
    dz[s] = gz.h() == full ? std::move(gz) : uncrop_center(gz, full, full);
    dx[s] = std::move(gx);
  }
  auto bz = adapters.backward(dz, cache.az, train_backbone);
  auto bx = adapters.backward(dx, cache.ax, train_backbone);
  if (!train_backbone) return;
  backbone.backward(bz, cache.bz);
  backbone.backward(bx, cache.bx);
}

void SiamModel::visit(const Visitor<float>& v) {
  backbone.visit(v, "backbone");
  adapters.visit(v, "adapter");
  for (auto& h : heads) h.visit(v, "head.l" + std::to_string(h.level()));
  fusion.visit(v, "fusion");
}

std::size_t SiamModel::param_count() {
  std::size_t n = 0;
  visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) { n += p.count(); }, nullptr});
  return n;
}

void SiamModel::zero_grad() {
  visit(Visitor<float>{[](const std::string&, Parameter<float>& p) { p.grad.zero(); }, nullptr});
}

namespace {

constexpr char kMagic[8] = {'S', 'I', 'A', 'M', 'T', 'R', 'K', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 1;

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(V))) throw IoError("truncated checkpoint");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, std::uint64_t limit) {
  const auto n = get<std::uint64_t>(in);
  if (n > limit) throw IoError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint");
  return s;
}

struct NamedTensor {
  std::string name;
  Tensor<float>* tensor;
};

std::vector<NamedTensor> collect(SiamModel& model) {
  std::vector<NamedTensor> out;
  model.visit(Visitor<float>{
      [&](const std::string& n, Parameter<float>& p) { out.push_back({n, &p.value}); },
      [&](const std::string& n, Tensor<float>& t) { out.push_back({n, &t}); }});
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, SiamModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put_string(out, model_config_to_json(model.config()));
  const auto entries = collect(model);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_string(out, e.name);
    put<std::uint8_t>(out, kFloat32);
    const Shape s = e.tensor->shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(e.tensor->data()),
              static_cast<std::streamsize>(e.tensor->size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

SiamModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  SiamModel model(model_config_from_json(get_string(in, 1 << 20)), 0);
  std::map<std::string, Tensor<float>*> slots;
  for (const auto& e : collect(model)) slots[e.name] = e.tensor;
  const auto count = get<std::uint32_t>(in);
  if (count != slots.size()) {
    throw IoError("checkpoint has " + std::to_string(count) + " arrays, model expects " +
                  std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, 4096);
    const auto dtype = get<std::uint8_t>(in);
    if (dtype != kFloat32) throw IoError("unsupported dtype for " + name);
    Shape s;
    s.n = get<std::int32_t>(in);
    s.c = get<std::int32_t>(in);
    s.h = get<std::int32_t>(in);
    s.w = get<std::int32_t>(in);
    auto it = slots.find(name);
    if (it == slots.end()) throw IoError("unexpected array '" + name + "' in checkpoint");
    if (!(it->second->shape() == s)) {
      throw IoError("shape mismatch for '" + name + "': " + s.str() + " vs " +
                    it->second->shape().str());
    }
    if (!in.read(reinterpret_cast<char*>(it->second->data()),
                 static_cast<std::streamsize>(it->second->size() * sizeof(float)))) {
      throw IoError("truncated checkpoint at '" + name + "'");
    }
    slots.erase(it);
  }
  return model;
}

}  // namespace siamtrack
