#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "siamtrack/bias_lab.hpp"
#include "siamtrack/model.hpp"
#include "siamtrack/sampling.hpp"
#include "siamtrack/tracker.hpp"
#include "siamtrack/training.hpp"

namespace siamtrack {

// Flat "key = value" text; '#' starts a comment. Duplicate keys are errors.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  const std::map<std::string, std::string>& values() const { return values_; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

 private:
  std::map<std::string, std::string> values_;
};

struct EvalConfig {
  std::string dataset;          // directory; empty means generated sequences
  std::string tracker = "model";  // model | oracle | random
  int sequences = 10;           // generated dataset size
  int length = 100;
  std::uint64_t seed = 1000000;  // first generated sequence seed
  std::uint64_t random_seed = 7;
};

struct DataConfig {
  std::string dir = "data";
  int sequences = 10;
  int length = 100;
  std::uint64_t seed = 1;
};

struct BiasSweepConfig {
  std::vector<double> shifts{0, 16, 32};
  int seeds = 3;
  std::uint64_t first_seed = 1;
};

struct CorrBenchConfig {
  std::vector<int> channels{32, 64, 128, 256};
  int template_size = 7;
  int search_size = 31;
  int repeats = 3;
};

struct GradCheckSettings {
  double tolerance = 1e-6;
  double epsilon = 1e-4;
  std::uint64_t seed = 1;
};

struct AppConfig {
  ModelConfig model = ModelConfig::desk(BackboneVariant::padded_residual);
  std::string checkpoint = "model.ckpt";
  TrainConfig train;
  std::string metrics;  // empty: <output>/metrics.csv
  SynthSpec synth;
  SamplingConfig sampling;
  LabelConfig labels;
  TrackerConfig tracker = TrackerConfig::desk();
  EvalConfig eval;
  DataConfig data;
  BiasRunConfig bias = BiasRunConfig::desk();
  BiasSweepConfig bias_sweep;
  CorrBenchConfig corr;
  GradCheckSettings grad;
  std::string output_dir = "out";
  // Sorted key=value lines actually given, after overrides; hashed into reports.
  std::string canonical;

  void validate() const;
};

// Unknown keys and malformed values raise ConfigError. A seed override
// replaces every seed-like setting (train, data, eval, bias, grad).
AppConfig build_config(const ConfigFile& file, std::optional<std::uint64_t> seed = std::nullopt);
AppConfig load_config(const std::filesystem::path& path,
                      std::optional<std::uint64_t> seed = std::nullopt);

std::vector<std::string> known_config_keys();

}  // namespace siamtrack
