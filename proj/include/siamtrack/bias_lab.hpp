#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

#include "siamtrack/model.hpp"
#include "siamtrack/tracker.hpp"
#include "siamtrack/training.hpp"

namespace siamtrack {

struct Heatmap {
  int rows = 0;
  int cols = 0;
  std::vector<double> p;  // row-major

  double at(int i, int j) const { return p[static_cast<std::size_t>(i) * cols + j]; }
  double sum() const;
};

struct HeatmapStats {
  Heatmap map;
  double central_mass_fraction = 0;
  double chi_square = 0;
  double entropy = 0;  // nats
};

// Elementwise mean, renormalized to sum to one.
Heatmap aggregate_heatmaps(std::span<const Heatmap> maps);
// Central mass uses the centered window covering half of each axis (a
// quarter of the area); partially covered cells count by covered fraction.
HeatmapStats bias_metrics(const Heatmap& map);

// Positive-class probability of batch item n, max over anchors per cell.
Heatmap positive_heatmap(const Tensor<float>& cls, int n = 0);

struct BiasRunConfig {
  double shift_range = 0;
  std::uint64_t seed = 1;
  int eval_samples = 200;
  // Half-range (pixels) of the uniform target placement for heatmap samples;
  // negative means the full extent of the response grid.
  double eval_range = -1;
  int track_sequences = 6;
  int track_length = 60;
  double track_velocity = 6;  // pixels per frame in the tracking evaluation
  std::uint64_t eval_seed = 900000;
  ModelConfig model;
  TrainConfig train;
  SynthSpec synth;
  SamplingConfig sampling;
  LabelConfig labels;
  TrackerConfig tracker;

  void validate() const;
  static BiasRunConfig desk();
};

struct BiasRunResult {
  double shift_range = 0;
  std::uint64_t seed = 0;
  HeatmapStats stats;
  double track_mean_iou = 0;
  double track_auc = 0;
  std::vector<double> epoch_loss;
};

// Heatmap statistics of a model on uniformly placed held-out targets.
HeatmapStats evaluate_heatmaps(SiamModel& model, const BiasRunConfig& cfg);
BiasRunResult run_simulation(const BiasRunConfig& cfg, SiamModel* trained = nullptr);

// Grayscale PNG scaled to the map maximum, each cell drawn as scale x scale pixels.
void write_heatmap_png(const std::filesystem::path& path, const Heatmap& map, int scale = 8);

void write_bias_runs_csv(std::ostream& out, std::span<const BiasRunResult> runs);
// Per shift: medians over seeds of every metric.
void write_bias_summary_csv(std::ostream& out, std::span<const BiasRunResult> runs);

double median(std::vector<double> v);

}  // namespace siamtrack
