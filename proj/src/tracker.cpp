#include "siamtrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "siamtrack/sampling.hpp"

namespace siamtrack {

void TrackerConfig::validate() const {
  if (template_size < 1 || search_size <= template_size) {
    throw ConfigError("tracker search_size must exceed template_size");
  }
  for (double v : {context_fraction, window_influence, penalty_k, size_lr, min_size}) {
    if (!std::isfinite(v)) throw ConfigError("tracker settings must be finite");
  }
  if (context_fraction < 0) throw ConfigError("context_fraction must be non-negative");
  if (window_influence < 0 || window_influence > 1) {
    throw ConfigError("window_influence must lie in [0, 1]");
  }
  if (penalty_k < 0) throw ConfigError("penalty_k must be non-negative");
  if (size_lr <= 0 || size_lr > 1) throw ConfigError("size_lr must lie in (0, 1]");
  if (min_size <= 0) throw ConfigError("min_size must be positive");
}

TrackerConfig TrackerConfig::desk() {
  TrackerConfig cfg;
  cfg.template_size = 63;
  cfg.search_size = 127;
  return cfg;
}

std::vector<double> cosine_window(const AnchorSet& anchors) {
  auto hann = [](int n) {
    std::vector<double> w(n, 1.0);
    if (n > 1) {
      for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / (n - 1));
    }
    return w;
  };
  const auto wr = hann(anchors.rows);
  const auto wc = hann(anchors.cols);
  std::vector<double> out(anchors.size());
  for (int i = 0; i < anchors.rows; ++i) {
    for (int j = 0; j < anchors.cols; ++j) {
      for (int a = 0; a < anchors.k; ++a) out[anchors.index(i, j, a)] = wr[i] * wc[j];
    }
  }
  return out;
}

double change_penalty(double w, double h, double tw, double th, double k) {
  auto change = [](double r) { return std::max(r, 1.0 / r); };
  auto padded = [](double w, double h) {
    const double p = (w + h) * 0.5;
    return std::sqrt((w + p) * (h + p));
  };
  const double s_c = change(padded(w, h) / padded(tw, th));
  const double r_c = change((tw / th) / (w / h));
  return std::exp(-(r_c * s_c - 1.0) * k);
}

TrackerState tracker_init(const Image& frame, const BBox& box, SiamModel& model,
                          const TrackerConfig& cfg) {
  cfg.validate();
  if (!box.valid()) throw UsageError("degenerate initial box");
  const auto& mc = model.config();
  if (cfg.template_size != mc.template_size || cfg.search_size != mc.search_size) {
    throw ConfigError("tracker patch sizes differ from the model's");
  }
  TrackerState st;
  st.cfg = cfg;
  st.box = box;
  st.frame_width = frame.width;
  st.frame_height = frame.height;
  const double s_z = context_side(box, cfg.context_fraction);
  const Image z = crop_and_resize(frame, box.cx, box.cy, s_z, cfg.template_size);
  st.template_features = model.template_features(to_tensor(z), Mode::eval);
  st.window = cosine_window(model.anchors());
  return st;
}

TrackOutput select_and_update(TrackerState& st, const ResponsePair<float>& fused,
                              const AnchorSet& anchors, double scale) {
  const auto& cfg = st.cfg;
  const std::vector<double> score = positive_scores(fused.cls);
  const std::vector<BBox> boxes = decode_boxes(fused.reg, anchors);
  if (st.window.size() != score.size()) throw ShapeError("cosine window and response disagree");
  const double tw = st.box.w * scale;
  const double th = st.box.h * scale;
  std::vector<double> penalty(score.size());
  std::vector<double> pscore(score.size());
  for (std::size_t i = 0; i < score.size(); ++i) {
    const double w = std::max(boxes[i].w, 1e-6);
    const double h = std::max(boxes[i].h, 1e-6);
    penalty[i] = change_penalty(w, h, tw, th, cfg.penalty_k);
    pscore[i] = (1 - cfg.window_influence) * penalty[i] * score[i] + cfg.window_influence * st.window[i];
  }
  const std::size_t best = argmax_first(pscore);
  const BBox& b = boxes[best];
  const double half = cfg.search_size / 2.0;
  const double lr = penalty[best] * score[best] * cfg.size_lr;
  BBox next;
  next.cx = st.box.cx + (b.cx - half) / scale;
  next.cy = st.box.cy + (b.cy - half) / scale;
  next.w = st.box.w * (1 - lr) + (b.w / scale) * lr;
  next.h = st.box.h * (1 - lr) + (b.h / scale) * lr;
  if (!std::isfinite(next.cx) || !std::isfinite(next.cy)) {
    next.cx = st.box.cx;
    next.cy = st.box.cy;
  }
  if (!std::isfinite(next.w) || !std::isfinite(next.h)) {
    next.w = st.box.w;
    next.h = st.box.h;
  }
  const double fw = std::max(st.frame_width, 1);
  const double fh = std::max(st.frame_height, 1);
  next.cx = std::clamp(next.cx, 0.0, fw);
  next.cy = std::clamp(next.cy, 0.0, fh);
  next.w = std::clamp(next.w, std::min(cfg.min_size, fw), fw);
  next.h = std::clamp(next.h, std::min(cfg.min_size, fh), fh);
  st.box = next;
  ++st.frame;
  return TrackOutput{next, score[best], best};
}

TrackOutput track_step(TrackerState& st, SiamModel& model, const Image& frame) {
  const double s_z = context_side(st.box, st.cfg.context_fraction);
  const double scale = st.cfg.template_size / s_z;
  const double s_x = st.cfg.search_size / scale;
  const Image x = crop_and_resize(frame, st.box.cx, st.box.cy, s_x, st.cfg.search_size);
  st.frame_width = frame.width;
  st.frame_height = frame.height;
  const ResponsePair<float> fused = model.track(st.template_features, to_tensor(x));
  return select_and_update(st, fused, model.anchors(), scale);
}

}  // namespace siamtrack
