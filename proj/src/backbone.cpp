#include "siamtrack/backbone.hpp"

#include <algorithm>

namespace siamtrack {

std::string to_string(BackboneVariant v) {
  return v == BackboneVariant::padfree_shallow ? "padfree_shallow" : "padded_residual";
}

BackboneVariant backbone_variant_from_string(const std::string& s) {
  if (s == "padfree_shallow" || s == "padfree") return BackboneVariant::padfree_shallow;
  if (s == "padded_residual" || s == "padded") return BackboneVariant::padded_residual;
  throw ConfigError("unknown backbone variant '" + s + "'");
}

std::array<int, kNumStages> BackboneConfig::effective_strides() const {
  std::array<int, kNumStages> out{};
  int s = base_stride();
  for (int i = 0; i < kNumStages; ++i) {
    s *= stage_strides[i];
    out[i] = s;
  }
  return out;
}

void BackboneConfig::validate() const {
  if (input_channels < 1) throw ConfigError("input_channels must be positive");
  if (stem_channels.empty() || stem_channels.size() > 5) {
    throw ConfigError("stem must have 1..5 downsampling convs");
  }
  for (int c : stem_channels) {
    if (c < 1) throw ConfigError("stem channels must be positive");
  }
  for (int i = 0; i < kNumStages; ++i) {
    if (stage_channels[i] < 1) throw ConfigError("stage channels must be positive");
    if (stage_dilations[i] < 1 || stage_strides[i] < 1) {
      throw ConfigError("stage stride and dilation must be positive");
    }
    if (stage_strides[i] > 1 && stage_dilations[i] > 1) {
      throw ConfigError("conv" + std::to_string(kStageTags[i]) +
                        " combines stride > 1 with dilation > 1");
    }
  }
  if (variant == BackboneVariant::padded_residual &&
      (stage_strides[1] != 1 || stage_strides[2] != 1)) {
    throw ConfigError("padded_residual requires unit stride in conv4 and conv5");
  }
  for (int s : effective_strides()) {
    if (s > 32) throw ConfigError("effective stride above 32");
  }
  if (adapter_dim < 1) throw ConfigError("adapter_dim must be positive");
  if (template_crop < 0) throw ConfigError("template_crop must be non-negative");
}

BackboneConfig BackboneConfig::desk(BackboneVariant v) {
  BackboneConfig cfg;
  cfg.variant = v;
  if (v == BackboneVariant::padfree_shallow) {
    cfg.stage_dilations = {1, 1, 1};
    cfg.template_crop = 0;
  }
  return cfg;
}

BackboneConfig BackboneConfig::large_scale() {
  BackboneConfig cfg;
  cfg.stem_channels = {64, 128, 256};
  cfg.stage_channels = {512, 1024, 2048};
  cfg.adapter_dim = 256;
  return cfg;
}

std::vector<LayerGeometry> main_path(const BackboneConfig& cfg, int stage) {
  std::vector<LayerGeometry> path;
  for (std::size_t i = 0; i < cfg.stem_channels.size(); ++i) path.push_back({3, 2, 0, 1});
  for (int s = 0; s <= stage; ++s) {
    const int d = cfg.stage_dilations[s];
    if (cfg.variant == BackboneVariant::padded_residual) {
      path.push_back({3, cfg.stage_strides[s], d, d});
      path.push_back({3, 1, d, d});
    } else {
      path.push_back({3, cfg.stage_strides[s], 0, d});
    }
  }
  return path;
}

int BackboneConfig::feature_size(int input, int stage) const {
  int n = input;
  for (const auto& l : main_path(*this, stage)) {
    n = (n + 2 * l.pad - l.dilation * (l.kernel - 1) - 1) / l.stride + 1;
  }
  return n;
}

ReceptiveField receptive_field(const BackboneConfig& cfg, int stage) {
  ReceptiveField rf;
  for (const auto& l : main_path(cfg, stage)) {
    rf.size += (l.kernel - 1) * l.dilation * rf.jump;
    rf.jump *= l.stride;
  }
  return rf;
}

std::pair<int, int> influence_range(const BackboneConfig& cfg, int stage, int pixel) {
  int lo = pixel;
  int hi = pixel;
  auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
  auto ceil_div = [&](int a, int b) { return -floor_div(-a, b); };
  for (const auto& l : main_path(cfg, stage)) {
    // output o reads inputs o*s - p + t*d, t in [0, k)
    lo = ceil_div(lo + l.pad - (l.kernel - 1) * l.dilation, l.stride);
    hi = floor_div(hi + l.pad, l.stride);
  }
  return {lo, hi};
}

BasicBlock::BasicBlock(int in, int out, int stride, int dilation)
    : a(ConvSpec{in, out, 3, stride, dilation, dilation, false}, true),
      b(ConvSpec{out, out, 3, 1, dilation, dilation, false}, false),
      has_shortcut(in != out || stride != 1) {
  if (has_shortcut) shortcut = ConvBn<float>(ConvSpec{in, out, 1, stride, 0, 1, false}, false);
}

void BasicBlock::init(Rng& rng) {
  a.init(rng);
  b.init(rng);
  if (has_shortcut) shortcut.init(rng);
}

Tensor<float> BasicBlock::forward(const Tensor<float>& x, Mode mode, Cache* cache) {
  Tensor<float> y = b.forward(a.forward(x, mode, cache ? &cache->a : nullptr), mode,
                              cache ? &cache->b : nullptr);
  if (has_shortcut) {
    y += shortcut.forward(x, mode, cache ? &cache->shortcut : nullptr);
  } else {
    y += x;
  }
  y = relu(y);
  if (cache) cache->out = y;
  return y;
}

Tensor<float> BasicBlock::backward(const Tensor<float>& dy, const Cache& cache, bool need_dx) {
  Tensor<float> g = relu_backward(dy, cache.out);
  Tensor<float> dx = a.backward(b.backward(g, cache.b), cache.a, need_dx);
  if (has_shortcut) {
    Tensor<float> ds = shortcut.backward(g, cache.shortcut, need_dx);
    if (need_dx) dx += ds;
  } else if (need_dx) {
    dx += g;
  }
  return dx;
}

void BasicBlock::visit(const Visitor<float>& v, const std::string& prefix) {
  a.visit(v, prefix + ".a");
  b.visit(v, prefix + ".b");
  if (has_shortcut) shortcut.visit(v, prefix + ".shortcut");
}

void BasicBlock::set_group(ParamGroup g) {
  a.set_group(g);
  b.set_group(g);
  shortcut.set_group(g);
}

Backbone::Backbone(const BackboneConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int in = cfg_.input_channels;
  for (int c : cfg_.stem_channels) {
    stem_.emplace_back(ConvSpec{in, c, 3, 2, 0, 1, false}, true);
    stem_.back().init(rng);
    stem_.back().set_group(ParamGroup::backbone);
    in = c;
  }
  for (int s = 0; s < kNumStages; ++s) {
    const int out = cfg_.stage_channels[s];
    const int d = cfg_.stage_dilations[s];
    if (cfg_.variant == BackboneVariant::padded_residual) {
      blocks_[s] = BasicBlock(in, out, cfg_.stage_strides[s], d);
      blocks_[s].init(rng);
      blocks_[s].set_group(ParamGroup::backbone);
    } else {
      plain_[s] = ConvBn<float>(ConvSpec{in, out, 3, cfg_.stage_strides[s], 0, d, false}, true);
      plain_[s].init(rng);
      plain_[s].set_group(ParamGroup::backbone);
    }
    in = out;
  }
}

FeaturePyramid Backbone::forward(const Tensor<float>& x, Mode mode, int last_stage, Cache* cache) {
  if (x.c() != cfg_.input_channels) throw ShapeError("backbone input channel mismatch");
  if (cfg_.feature_size(std::min(x.h(), x.w()), last_stage) < 1) {
    throw ShapeError("patch " + x.shape().str() + " too small for the backbone receptive field");
  }
  if (cache) {
    cache->stem.resize(stem_.size());
    cache->depth = last_stage + 1;
  }
  Tensor<float> h = x;
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    h = stem_[i].forward(h, mode, cache ? &cache->stem[i] : nullptr);
  }
  const bool padded = cfg_.variant == BackboneVariant::padded_residual;
  const auto strides = cfg_.effective_strides();
  FeaturePyramid pyr;
  for (int s = 0; s <= last_stage; ++s) {
    if (padded) {
      h = blocks_[s].forward(h, mode, cache ? &cache->blocks[s] : nullptr);
    } else {
      h = plain_[s].forward(h, mode, cache ? &cache->plain[s] : nullptr);
    }
    pyr.levels.push_back(FeatureMap{h, strides[s], padded, kStageTags[s]});
  }
  return pyr;
}

void Backbone::backward(const std::vector<Tensor<float>>& grads, const Cache& cache) {
  const bool padded = cfg_.variant == BackboneVariant::padded_residual;
  Tensor<float> g;
  for (int s = cache.depth - 1; s >= 0; --s) {
    if (s < static_cast<int>(grads.size()) && !grads[s].empty()) {
      if (g.empty()) {
        g = grads[s];
      } else {
        g += grads[s];
      }
    }
    if (g.empty()) continue;
    g = padded ? blocks_[s].backward(g, cache.blocks[s], true)
               : plain_[s].backward(g, cache.plain[s], true);
  }
  if (g.empty()) return;
  for (int i = static_cast<int>(stem_.size()) - 1; i >= 0; --i) {
    g = stem_[i].backward(g, cache.stem[i], i > 0);
  }
}

void Backbone::visit(const Visitor<float>& v, const std::string& prefix) {
  for (std::size_t i = 0; i < stem_.size(); ++i) stem_[i].visit(v, prefix + ".stem" + std::to_string(i));
  for (int s = 0; s < kNumStages; ++s) {
    const std::string name = prefix + ".conv" + std::to_string(kStageTags[s]);
    if (cfg_.variant == BackboneVariant::padded_residual) {
      blocks_[s].visit(v, name);
    } else {
      plain_[s].visit(v, name);
    }
  }
}

std::size_t Backbone::param_count() {
  std::size_t n = 0;
  visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) { n += p.count(); }, nullptr},
        "backbone");
  return n;
}

Adapters::Adapters(const BackboneConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  for (int s = 0; s < kNumStages; ++s) {
    layers[s] = ConvBn<float>(ConvSpec{cfg.stage_channels[s], cfg.adapter_dim, 1, 1, 0, 1, false}, false);
    layers[s].init(rng);
  }
}

FeaturePyramid Adapters::forward(const FeaturePyramid& in, Mode mode, Cache* cache) {
  FeaturePyramid out;
  for (std::size_t i = 0; i < in.levels.size(); ++i) {
    const auto& f = in.levels[i];
    const int s = f.level - kStageTags[0];
    out.levels.push_back(FeatureMap{layers[s].forward(f.values, mode, cache ? &(*cache)[s] : nullptr),
                                    f.stride, f.padding_used, f.level});
  }
  return out;
}

std::vector<Tensor<float>> Adapters::backward(const std::vector<Tensor<float>>& grads,
                                              const Cache& cache, bool need_dx) {
  std::vector<Tensor<float>> out(grads.size());
  for (std::size_t s = 0; s < grads.size(); ++s) {
    if (grads[s].empty()) continue;
    out[s] = layers[s].backward(grads[s], cache[s], need_dx);
  }
  return out;
}

void Adapters::visit(const Visitor<float>& v, const std::string& prefix) {
  for (int s = 0; s < kNumStages; ++s) layers[s].visit(v, prefix + ".l" + std::to_string(kStageTags[s]));
}

template <typename T>
Tensor<T> crop_center(const Tensor<T>& x, int size) {
  if (size < 1 || size > x.h() || size > x.w()) {
    throw ShapeError("crop size " + std::to_string(size) + " outside extent " + x.shape().str());
  }
  if ((x.h() - size) % 2 != 0 || (x.w() - size) % 2 != 0) {
    throw ShapeError("crop size " + std::to_string(size) + " has different parity than extent " +
                     x.shape().str());
  }
  const int oy = (x.h() - size) / 2;
  const int ox = (x.w() - size) / 2;
  Tensor<T> out(Shape{x.n(), x.c(), size, size});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int i = 0; i < size; ++i) {
        const T* src = x.plane(n, c) + static_cast<std::size_t>(i + oy) * x.w() + ox;
        std::copy(src, src + size, out.plane(n, c) + static_cast<std::size_t>(i) * size);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> uncrop_center(const Tensor<T>& dy, int h, int w) {
  const int oy = (h - dy.h()) / 2;
  const int ox = (w - dy.w()) / 2;
  Tensor<T> out(Shape{dy.n(), dy.c(), h, w});
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      for (int i = 0; i < dy.h(); ++i) {
        const T* src = dy.plane(n, c) + static_cast<std::size_t>(i) * dy.w();
        std::copy(src, src + dy.w(), out.plane(n, c) + static_cast<std::size_t>(i + oy) * w + ox);
      }
    }
  }
  return out;
}

FeatureMap crop_center(const FeatureMap& f, int size) {
  return FeatureMap{crop_center(f.values, size), f.stride, f.padding_used, f.level};
}

template Tensor<float> crop_center(const Tensor<float>&, int);
template Tensor<double> crop_center(const Tensor<double>&, int);
template Tensor<float> uncrop_center(const Tensor<float>&, int, int);
template Tensor<double> uncrop_center(const Tensor<double>&, int, int);

}  // namespace siamtrack
