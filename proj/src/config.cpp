#include "siamtrack/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace siamtrack {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("key '" + key + "': cannot parse '" + value + "' as " + what);
}

template <typename V>
V parse_number(const std::string& key, const std::string& value) {
  V out{};
  const char* b = value.data();
  const char* e = b + value.size();
  auto [ptr, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || ptr != e) {
    if constexpr (std::is_floating_point_v<V>) bad_value(key, value, "a number");
    else bad_value(key, value, "an integer");
  }
  if constexpr (std::is_floating_point_v<V>) {
    if (!std::isfinite(out)) bad_value(key, value, "a finite number");
  }
  return out;
}

template <typename V>
std::vector<V> parse_list(const std::string& key, const std::string& value) {
  std::vector<V> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<V>(key, trim(item)));
  if (out.empty()) bad_value(key, value, "a comma-separated list");
  return out;
}

template <std::size_t N>
std::array<int, N> parse_array(const std::string& key, const std::string& value) {
  const auto v = parse_list<int>(key, value);
  if (v.size() != N) bad_value(key, value, "a list of three integers");
  std::array<int, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

using Setter = std::function<void(AppConfig&, const std::string& key, const std::string& value)>;

template <typename V, typename F>
Setter num(F field) {
  return [field](AppConfig& c, const std::string& k, const std::string& v) {
    field(c) = parse_number<V>(k, v);
  };
}

template <typename F>
Setter str(F field) {
  return [field](AppConfig& c, const std::string&, const std::string& v) { field(c) = v; };
}

// Keys applied before everything else because they reset other defaults.
const std::vector<std::string> kPresetKeys{"model.preset", "model.variant"};

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    // model
    t["model.levels"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.levels = parse_list<int>(k, v);
    };
    t["model.template_size"] = num<int>([](AppConfig& c) -> int& { return c.model.template_size; });
    t["model.search_size"] = num<int>([](AppConfig& c) -> int& { return c.model.search_size; });
    t["model.adjust_kernel"] = num<int>([](AppConfig& c) -> int& { return c.model.adjust_kernel; });
    t["model.checkpoint"] = str([](AppConfig& c) -> std::string& { return c.checkpoint; });
    // backbone
    t["backbone.stem_channels"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.backbone.stem_channels = parse_list<int>(k, v);
    };
    t["backbone.stage_channels"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.backbone.stage_channels = parse_array<kNumStages>(k, v);
    };
    t["backbone.stage_dilations"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.backbone.stage_dilations = parse_array<kNumStages>(k, v);
    };
    t["backbone.stage_strides"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.backbone.stage_strides = parse_array<kNumStages>(k, v);
    };
    t["backbone.adapter_dim"] = num<int>([](AppConfig& c) -> int& { return c.model.backbone.adapter_dim; });
    t["backbone.template_crop"] = num<int>([](AppConfig& c) -> int& { return c.model.backbone.template_crop; });
    // anchors
    t["anchors.ratios"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.anchors.ratios = parse_list<double>(k, v);
    };
    t["anchors.scales"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.model.anchors.scales = parse_list<double>(k, v);
    };
    t["anchors.stride"] = num<int>([](AppConfig& c) -> int& { return c.model.anchors.stride; });
    // train
    t["train.epochs"] = num<int>([](AppConfig& c) -> int& { return c.train.epochs; });
    t["train.warmup_epochs"] = num<int>([](AppConfig& c) -> int& { return c.train.warmup_epochs; });
    t["train.warmup_lr"] = num<double>([](AppConfig& c) -> double& { return c.train.warmup_lr; });
    t["train.peak_lr"] = num<double>([](AppConfig& c) -> double& { return c.train.peak_lr; });
    t["train.final_lr"] = num<double>([](AppConfig& c) -> double& { return c.train.final_lr; });
    t["train.momentum"] = num<double>([](AppConfig& c) -> double& { return c.train.momentum; });
    t["train.weight_decay"] = num<double>([](AppConfig& c) -> double& { return c.train.weight_decay; });
    t["train.backbone_lr_scale"] = num<double>([](AppConfig& c) -> double& { return c.train.backbone_lr_scale; });
    t["train.freeze_backbone_epochs"] = num<int>([](AppConfig& c) -> int& { return c.train.freeze_backbone_epochs; });
    t["train.batch_size"] = num<int>([](AppConfig& c) -> int& { return c.train.batch_size; });
    t["train.steps_per_epoch"] = num<int>([](AppConfig& c) -> int& { return c.train.steps_per_epoch; });
    t["train.reg_weight"] = num<double>([](AppConfig& c) -> double& { return c.train.reg_weight; });
    t["train.clip_norm"] = num<double>([](AppConfig& c) -> double& { return c.train.clip_norm; });
    t["train.seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.train.seed; });
    t["train.metrics"] = str([](AppConfig& c) -> std::string& { return c.metrics; });
    // sampling and labels
    t["sampling.context"] = num<double>([](AppConfig& c) -> double& { return c.sampling.context; });
    t["sampling.shift_range"] = num<double>([](AppConfig& c) -> double& { return c.sampling.shift_range; });
    t["sampling.scale_jitter"] = num<double>([](AppConfig& c) -> double& { return c.sampling.scale_jitter; });
    t["sampling.frame_gap"] = num<int>([](AppConfig& c) -> int& { return c.sampling.frame_gap; });
    t["labels.pos_threshold"] = num<double>([](AppConfig& c) -> double& { return c.labels.pos_threshold; });
    t["labels.neg_threshold"] = num<double>([](AppConfig& c) -> double& { return c.labels.neg_threshold; });
    t["labels.max_positives"] = num<int>([](AppConfig& c) -> int& { return c.labels.max_positives; });
    t["labels.neg_per_pos"] = num<int>([](AppConfig& c) -> int& { return c.labels.neg_per_pos; });
    // synth
    t["synth.canvas_width"] = num<int>([](AppConfig& c) -> int& { return c.synth.canvas_width; });
    t["synth.canvas_height"] = num<int>([](AppConfig& c) -> int& { return c.synth.canvas_height; });
    t["synth.object_min"] = num<double>([](AppConfig& c) -> double& { return c.synth.object_min; });
    t["synth.object_max"] = num<double>([](AppConfig& c) -> double& { return c.synth.object_max; });
    t["synth.aspect_min"] = num<double>([](AppConfig& c) -> double& { return c.synth.aspect_min; });
    t["synth.aspect_max"] = num<double>([](AppConfig& c) -> double& { return c.synth.aspect_max; });
    t["synth.step_sigma"] = num<double>([](AppConfig& c) -> double& { return c.synth.step_sigma; });
    t["synth.velocity"] = num<double>([](AppConfig& c) -> double& { return c.synth.velocity; });
    t["synth.distractors"] = num<int>([](AppConfig& c) -> int& { return c.synth.distractors; });
    t["synth.noise"] = num<double>([](AppConfig& c) -> double& { return c.synth.noise; });
    t["synth.texture_seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.synth.texture_seed; });
    // tracker
    t["tracker.context_fraction"] = num<double>([](AppConfig& c) -> double& { return c.tracker.context_fraction; });
    t["tracker.window_influence"] = num<double>([](AppConfig& c) -> double& { return c.tracker.window_influence; });
    t["tracker.penalty_k"] = num<double>([](AppConfig& c) -> double& { return c.tracker.penalty_k; });
    t["tracker.size_lr"] = num<double>([](AppConfig& c) -> double& { return c.tracker.size_lr; });
    t["tracker.min_size"] = num<double>([](AppConfig& c) -> double& { return c.tracker.min_size; });
    // eval
    t["eval.dataset"] = str([](AppConfig& c) -> std::string& { return c.eval.dataset; });
    t["eval.tracker"] = str([](AppConfig& c) -> std::string& { return c.eval.tracker; });
    t["eval.sequences"] = num<int>([](AppConfig& c) -> int& { return c.eval.sequences; });
    t["eval.length"] = num<int>([](AppConfig& c) -> int& { return c.eval.length; });
    t["eval.seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.eval.seed; });
    t["eval.random_seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.eval.random_seed; });
    // data
    t["data.dir"] = str([](AppConfig& c) -> std::string& { return c.data.dir; });
    t["data.sequences"] = num<int>([](AppConfig& c) -> int& { return c.data.sequences; });
    t["data.length"] = num<int>([](AppConfig& c) -> int& { return c.data.length; });
    t["data.seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.data.seed; });
    // bias
    t["bias.shifts"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.bias_sweep.shifts = parse_list<double>(k, v);
    };
    t["bias.seeds"] = num<int>([](AppConfig& c) -> int& { return c.bias_sweep.seeds; });
    t["bias.first_seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.bias_sweep.first_seed; });
    t["bias.eval_samples"] = num<int>([](AppConfig& c) -> int& { return c.bias.eval_samples; });
    t["bias.eval_range"] = num<double>([](AppConfig& c) -> double& { return c.bias.eval_range; });
    t["bias.eval_seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.bias.eval_seed; });
    t["bias.track_sequences"] = num<int>([](AppConfig& c) -> int& { return c.bias.track_sequences; });
    t["bias.track_length"] = num<int>([](AppConfig& c) -> int& { return c.bias.track_length; });
    t["bias.track_velocity"] = num<double>([](AppConfig& c) -> double& { return c.bias.track_velocity; });
    // corr-bench
    t["corr.channels"] = [](AppConfig& c, const std::string& k, const std::string& v) {
      c.corr.channels = parse_list<int>(k, v);
    };
    t["corr.template_size"] = num<int>([](AppConfig& c) -> int& { return c.corr.template_size; });
    t["corr.search_size"] = num<int>([](AppConfig& c) -> int& { return c.corr.search_size; });
    t["corr.repeats"] = num<int>([](AppConfig& c) -> int& { return c.corr.repeats; });
    // grad-check
    t["grad.tolerance"] = num<double>([](AppConfig& c) -> double& { return c.grad.tolerance; });
    t["grad.epsilon"] = num<double>([](AppConfig& c) -> double& { return c.grad.epsilon; });
    t["grad.seed"] = num<std::uint64_t>([](AppConfig& c) -> std::uint64_t& { return c.grad.seed; });
    // output
    t["output.dir"] = str([](AppConfig& c) -> std::string& { return c.output_dir; });
    return t;
  }();
  return table;
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    }
    if (!cf.values_.emplace(key, value).second) {
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return cf;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys = kPresetKeys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

void AppConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  labels.validate();
  tracker.validate();
  bias.validate();
  if (sampling.context < 0 || sampling.shift_range < 0 || sampling.scale_jitter < 0 ||
      sampling.frame_gap < 0) {
    throw ConfigError("sampling settings must be non-negative");
  }
  if (sampling.shift_range >= sampling.search_size / 2.0) {
    throw ConfigError("sampling.shift_range must stay below half the search size");
  }
  if (eval.tracker != "model" && eval.tracker != "oracle" && eval.tracker != "random") {
    throw ConfigError("eval.tracker must be model, oracle or random");
  }
  if (eval.sequences < 1 || eval.length < 2) throw ConfigError("eval needs sequences of 2+ frames");
  if (data.sequences < 1 || data.length < 1) throw ConfigError("data.sequences and data.length must be positive");
  if (bias_sweep.shifts.empty() || bias_sweep.seeds < 1) throw ConfigError("bias sweep is empty");
  for (double s : bias_sweep.shifts) {
    if (s < 0 || s >= model.search_size / 2.0) throw ConfigError("bias shift outside [0, search/2)");
  }
  if (corr.channels.empty() || corr.template_size < 1 || corr.search_size < corr.template_size ||
      corr.repeats < 1) {
    throw ConfigError("bad corr-bench sizes");
  }
  for (int c : corr.channels) {
    if (c < 1) throw ConfigError("corr.channels must be positive");
  }
  if (!(grad.tolerance > 0) || !(grad.epsilon > 0)) throw ConfigError("grad settings must be positive");
}

AppConfig build_config(const ConfigFile& file, std::optional<std::uint64_t> seed) {
  AppConfig c;
  const auto& values = file.values();
  for (const auto& [k, v] : values) {
    if (std::find(kPresetKeys.begin(), kPresetKeys.end(), k) == kPresetKeys.end() &&
        !setters().count(k)) {
      throw ConfigError("unknown key '" + k + "'");
    }
  }
  std::string preset = "desk";
  if (auto it = values.find("model.preset"); it != values.end()) preset = it->second;
  BackboneVariant variant = BackboneVariant::padded_residual;
  if (auto it = values.find("model.variant"); it != values.end()) {
    variant = backbone_variant_from_string(it->second);
  }
  if (preset == "desk") {
    c.model = ModelConfig::desk(variant);
    c.tracker = TrackerConfig::desk();
    c.train = TrainConfig::desk();
  } else if (preset == "large") {
    c.model = ModelConfig::large_scale();
    c.model.backbone.variant = variant;
    c.tracker = TrackerConfig{};
    c.train = TrainConfig{};
  } else {
    throw ConfigError("model.preset must be desk or large");
  }
  const bool stride_given = values.count("anchors.stride") > 0;
  const bool scales_given = values.count("anchors.scales") > 0;
  for (const auto& [k, v] : values) {
    if (auto it = setters().find(k); it != setters().end()) it->second(c, k, v);
  }
  // anchors follow the backbone unless pinned explicitly
  c.model.backbone.validate();
  const int stride = c.model.backbone.effective_strides()[c.model.levels.empty() ? 0 : std::clamp(
      c.model.levels.front() - kStageTags[0], 0, kNumStages - 1)];
  if (!stride_given) c.model.anchors.stride = stride;
  if (!scales_given) c.model.anchors.scales = {8.0 * c.model.anchors.stride};
  if (seed) {
    c.train.seed = *seed;
    c.data.seed = *seed;
    c.eval.random_seed = *seed;
    c.bias_sweep.first_seed = *seed;
    c.grad.seed = *seed;
  }
  c.sampling.template_size = c.model.template_size;
  c.sampling.search_size = c.model.search_size;
  c.tracker.template_size = c.model.template_size;
  c.tracker.search_size = c.model.search_size;
  c.bias.model = c.model;
  c.bias.train = c.train;
  c.bias.synth = c.synth;
  c.bias.sampling = c.sampling;
  c.bias.labels = c.labels;
  c.bias.tracker = c.tracker;
  std::ostringstream canon;
  for (const auto& [k, v] : values) canon << k << '=' << v << '\n';
  if (seed) canon << "--seed=" << *seed << '\n';
  c.canonical = canon.str();
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
  return build_config(ConfigFile::load(path), seed);
}

}  // namespace siamtrack
