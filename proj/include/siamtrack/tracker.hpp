#pragma once

#include <vector>

#include "siamtrack/image.hpp"
#include "siamtrack/model.hpp"

namespace siamtrack {

struct TrackerConfig {
  int template_size = 127;
  int search_size = 255;
  double context_fraction = 0.5;
  double window_influence = 0.4;
  double penalty_k = 0.04;
  double size_lr = 0.3;
  double min_size = 4.0;  // pixels, lower clamp on the tracked box

  void validate() const;
  static TrackerConfig desk();
};

struct TrackerState {
  std::vector<Tensor<float>> template_features;
  BBox box;
  std::vector<double> window;  // per anchor, flat anchor order
  TrackerConfig cfg;
  int frame = 0;
  int frame_width = 0;
  int frame_height = 0;
};

struct TrackOutput {
  BBox box;
  double score = 0;  // raw target probability of the selected anchor
  std::size_t anchor = 0;
};

// Outer product of two Hann windows over the response grid, repeated per anchor.
std::vector<double> cosine_window(const AnchorSet& anchors);

// Scale/aspect change penalty for a candidate (w, h) against the current
// target (tw, th), both in search-patch pixels.
double change_penalty(double w, double h, double tw, double th, double k);

TrackerState tracker_init(const Image& frame, const BBox& box, SiamModel& model,
                          const TrackerConfig& cfg);
// The model is only read; several states may share it across threads.
TrackOutput track_step(TrackerState& state, SiamModel& model, const Image& frame);

// Lower-level step on an already computed fused response, for testing.
TrackOutput select_and_update(TrackerState& state, const ResponsePair<float>& fused,
                              const AnchorSet& anchors, double scale);

}  // namespace siamtrack
