#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "siamtrack/geometry.hpp"
#include "siamtrack/image.hpp"
#include "siamtrack/layers.hpp"

namespace siamtrack {

struct SynthSpec {
  int canvas_width = 256;
  int canvas_height = 256;
  double object_min = 24;  // shorter side range, pixels
  double object_max = 40;
  double aspect_min = 0.67;  // h / w
  double aspect_max = 1.5;
  double step_sigma = 2.0;  // random-walk step per axis, pixels
  double velocity = 0.0;    // constant drift speed, pixels per frame
  int distractors = 2;
  double noise = 8.0;  // per-pixel gaussian noise sigma
  std::uint64_t texture_seed = 0;  // 0: derived from the sequence seed

  void validate() const;
};

struct Sequence {
  std::string name;
  std::vector<Image> frames;
  std::vector<BBox> gt;
};

Sequence synth_sequence(const SynthSpec& spec, int length, std::uint64_t seed);

struct SamplingConfig {
  int template_size = 63;
  int search_size = 127;
  double context = 0.5;
  double shift_range = 32;   // search-patch pixels
  double scale_jitter = 0.05;  // log-uniform +-5%
  int frame_gap = 1;
};

struct TrainSample {
  Image z;
  Image x;
  BBox gt;  // search-patch coordinates
  double shift_x = 0;
  double shift_y = 0;
  bool flagged = false;
};

// SiamFC-style context side: s^2 = (w + c)(h + c), c = context * (w + h).
double context_side(const BBox& box, double context);

TrainSample sample_pair(const Sequence& source, const SamplingConfig& cfg, Rng& rng);
TrainSample sample_pair(const SynthSpec& source, const SamplingConfig& cfg, Rng& rng);

struct LabelConfig {
  double pos_threshold = 0.6;
  double neg_threshold = 0.3;
  int max_positives = 16;
  int neg_per_pos = 3;

  void validate() const;
};

enum class AnchorLabel : std::int8_t { ignore = -1, negative = 0, positive = 1 };

struct LabelAssignment {
  std::vector<AnchorLabel> labels;        // by IoU thresholds
  std::vector<std::uint8_t> cls_mask;     // anchors in the cls loss
  std::vector<std::uint8_t> reg_mask;     // sampled positives in the reg loss
  std::vector<RegressionDelta> deltas;    // filled for positives
  int num_positive = 0;                   // sampled
  int num_negative = 0;                   // sampled
  bool no_positive = false;
};

LabelAssignment assign_labels(const AnchorSet& anchors, const BBox& gt, const LabelConfig& cfg,
                              Rng& rng);

// Dataset directory: one subdirectory per sequence holding numbered PNG
// frames and groundtruth.txt.
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);

}  // namespace siamtrack
