#include "siamtrack/bias_lab.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>

#include "siamtrack/ope.hpp"

namespace siamtrack {

double Heatmap::sum() const {
  double s = 0;
  for (double v : p) s += v;
  return s;
}

Heatmap aggregate_heatmaps(std::span<const Heatmap> maps) {
  if (maps.empty()) throw UsageError("no heatmaps to aggregate");
  Heatmap out{maps[0].rows, maps[0].cols, std::vector<double>(maps[0].p.size(), 0.0)};
  for (const auto& m : maps) {
    if (m.rows != out.rows || m.cols != out.cols || m.p.size() != out.p.size()) {
      throw ShapeError("heatmaps differ in shape");
    }
    for (std::size_t i = 0; i < m.p.size(); ++i) {
      if (!(m.p[i] >= 0) || !std::isfinite(m.p[i])) throw UsageError("heatmap entries must be non-negative");
      out.p[i] += m.p[i];
    }
  }
  for (double& v : out.p) v /= static_cast<double>(maps.size());
  const double s = out.sum();
  if (!(s > 0)) throw UsageError("aggregated heatmap has no mass");
  for (double& v : out.p) v /= s;
  return out;
}

namespace {

// Length of [i, i+1) inside [lo, hi).
double cover(int i, double lo, double hi) {
  return std::max(0.0, std::min<double>(i + 1, hi) - std::max<double>(i, lo));
}

}  // namespace

HeatmapStats bias_metrics(const Heatmap& map) {
  if (map.rows < 1 || map.cols < 1 || map.p.size() != static_cast<std::size_t>(map.rows) * map.cols) {
    throw ShapeError("malformed heatmap");
  }
  double s = 0;
  for (double v : map.p) {
    if (!(v >= 0) || !std::isfinite(v)) throw UsageError("heatmap has negative or non-finite entries");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw UsageError("heatmap is not normalized (sum " + std::to_string(s) + ")");
  HeatmapStats st;
  st.map = map;
  const double u = 1.0 / static_cast<double>(map.p.size());
  const double r0 = map.rows / 4.0, r1 = 3.0 * map.rows / 4.0;
  const double c0 = map.cols / 4.0, c1 = 3.0 * map.cols / 4.0;
  for (int i = 0; i < map.rows; ++i) {
    const double wr = cover(i, r0, r1);
    for (int j = 0; j < map.cols; ++j) {
      const double v = map.at(i, j);
      st.central_mass_fraction += v * wr * cover(j, c0, c1);
      st.chi_square += (v - u) * (v - u) / u;
      if (v > 0) st.entropy -= v * std::log(v);
    }
  }
  return st;
}

Heatmap positive_heatmap(const Tensor<float>& cls, int n) {
  const int k = cls.c() / 2;
  Heatmap m{cls.h(), cls.w(), std::vector<double>(static_cast<std::size_t>(cls.h()) * cls.w(), 0.0)};
  for (int i = 0; i < cls.h(); ++i) {
    for (int j = 0; j < cls.w(); ++j) {
      double best = 0;
      for (int a = 0; a < k; ++a) {
        const double d = static_cast<double>(cls.at(n, k + a, i, j)) - cls.at(n, a, i, j);
        best = std::max(best, 1.0 / (1.0 + std::exp(-d)));
      }
      m.p[static_cast<std::size_t>(i) * m.cols + j] = best;
    }
  }
  return m;
}

void BiasRunConfig::validate() const {
  if (!(shift_range >= 0)) throw ConfigError("shift_range must be non-negative");
  if (eval_samples < 1) throw ConfigError("eval_samples must be positive");
  if (track_sequences < 0 || track_length < 2) throw ConfigError("bad tracking evaluation size");
  model.validate();
  train.validate();
  synth.validate();
  labels.validate();
  tracker.validate();
}

BiasRunConfig BiasRunConfig::desk() {
  BiasRunConfig cfg;
  cfg.model = ModelConfig::desk(BackboneVariant::padded_residual);
  // wider dilations give the deepest stage a receptive field reaching the
  // padded border from every response cell
  cfg.model.backbone.stage_dilations = {2, 4, 8};
  cfg.tracker = TrackerConfig::desk();
  cfg.train = TrainConfig::desk();
  cfg.train.epochs = 30;
  cfg.train.warmup_epochs = 7;
  cfg.train.batch_size = 4;
  cfg.train.peak_lr = 0.04;
  cfg.train.warmup_lr = cfg.train.peak_lr / 5;
  cfg.train.final_lr = cfg.train.peak_lr / 10;
  return cfg;
}

HeatmapStats evaluate_heatmaps(SiamModel& model, const BiasRunConfig& cfg) {
  const auto& mc = model.config();
  const AnchorSet& anchors = model.anchors();
  const double range = cfg.eval_range >= 0 ? cfg.eval_range
                                           : 0.5 * anchors.stride * (anchors.rows - 1);
  Rng rng(cfg.eval_seed);
  std::uniform_real_distribution<double> u(-range, range);
  std::vector<Heatmap> maps;
  for (int s = 0; s < cfg.eval_samples; ++s) {
    const Sequence seq = synth_sequence(cfg.synth, 2, rng());
    const BBox& bz = seq.gt[0];
    const double sz = context_side(bz, cfg.sampling.context);
    const Image z = crop_and_resize(seq.frames[0], bz.cx, bz.cy, sz, mc.template_size);
    const BBox& bx = seq.gt[1];
    const double side = context_side(bx, cfg.sampling.context) * mc.search_size / mc.template_size;
    const double scale = mc.search_size / side;
    const double dx = u(rng), dy = u(rng);
    const Image x = crop_and_resize(seq.frames[1], bx.cx - dx / scale, bx.cy - dy / scale, side,
                                    mc.search_size);
    const ResponsePair<float> out = model.forward(to_tensor(z), to_tensor(x), Mode::eval);
    maps.push_back(positive_heatmap(out.cls));
  }
  return bias_metrics(aggregate_heatmaps(maps));
}

BiasRunResult run_simulation(const BiasRunConfig& cfg, SiamModel* trained) {
  cfg.validate();
  BiasRunResult r;
  r.shift_range = cfg.shift_range;
  r.seed = cfg.seed;
  SiamModel model(cfg.model, cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  SamplingConfig sc = cfg.sampling;
  sc.shift_range = cfg.shift_range;
  sc.template_size = cfg.model.template_size;
  sc.search_size = cfg.model.search_size;
  r.epoch_loss = train(model, tc, cfg.synth, sc, cfg.labels).epoch_loss;
  r.stats = evaluate_heatmaps(model, cfg);
  if (cfg.track_sequences > 0) {
    SynthSpec moving = cfg.synth;
    moving.velocity = cfg.track_velocity;
    SynthDataset data(moving, cfg.track_sequences, cfg.track_length, cfg.eval_seed + 7919);
    const auto results = run_ope(data, [&](std::size_t, const Sequence&) {
      return std::make_unique<ModelTracker>(model, cfg.tracker);
    });
    const OPEResult s = summarize(results, precision_threshold_for(cfg.tracker.search_size));
    r.track_mean_iou = s.mean_iou;
    r.track_auc = s.auc;
  }
  if (trained) *trained = std::move(model);
  return r;
}

void write_heatmap_png(const std::filesystem::path& path, const Heatmap& map, int scale) {
  double mx = 0;
  for (double v : map.p) mx = std::max(mx, v);
  Image img;
  img.width = map.cols * scale;
  img.height = map.rows * scale;
  img.channels = 1;
  img.data.assign(static_cast<std::size_t>(img.width) * img.height, 0.f);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double v = mx > 0 ? map.at(y / scale, x / scale) / mx : 0.0;
      img.data[static_cast<std::size_t>(y) * img.width + x] = static_cast<float>(255.0 * v);
    }
  }
  write_png(path, img);
}

double median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_bias_runs_csv(std::ostream& out, std::span<const BiasRunResult> runs) {
  out << "shift,seed,central_mass,chi_square,entropy,track_mean_iou,track_auc\n";
  out << std::setprecision(9);
  for (const auto& r : runs) {
    out << r.shift_range << ',' << r.seed << ',' << r.stats.central_mass_fraction << ','
        << r.stats.chi_square << ',' << r.stats.entropy << ',' << r.track_mean_iou << ','
        << r.track_auc << '\n';
  }
}

void write_bias_summary_csv(std::ostream& out, std::span<const BiasRunResult> runs) {
  std::map<double, std::vector<const BiasRunResult*>> by_shift;
  for (const auto& r : runs) by_shift[r.shift_range].push_back(&r);
  out << "shift,runs,median_central_mass,median_chi_square,median_entropy,median_track_mean_iou\n";
  out << std::setprecision(9);
  for (const auto& [shift, rs] : by_shift) {
    std::vector<double> cm, chi, ent, iou;
    for (const auto* r : rs) {
      cm.push_back(r->stats.central_mass_fraction);
      chi.push_back(r->stats.chi_square);
      ent.push_back(r->stats.entropy);
      iou.push_back(r->track_mean_iou);
    }
    out << shift << ',' << rs.size() << ',' << median(cm) << ',' << median(chi) << ',' << median(ent)
        << ',' << median(iou) << '\n';
  }
}

}  // namespace siamtrack
