#include "siamtrack/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "siamtrack/error.hpp"

namespace siamtrack {

void SynthSpec::validate() const {
  if (canvas_width < 16 || canvas_height < 16) throw ConfigError("canvas too small");
  if (!(object_min > 0) || object_max < object_min) throw ConfigError("bad object size range");
  if (!(aspect_min > 0) || aspect_max < aspect_min) throw ConfigError("bad aspect range");
  const double longest = object_max * std::max({1.0, aspect_max, 1.0 / aspect_min});
  if (longest >= std::min(canvas_width, canvas_height) / 2.0) {
    throw ConfigError("objects do not fit the canvas");
  }
  if (step_sigma < 0 || velocity < 0 || noise < 0 || distractors < 0) {
    throw ConfigError("motion/noise parameters must be non-negative");
  }
}

namespace {

struct Rgb {
  float v[3];
};

Rgb random_color(Rng& rng) {
  std::uniform_real_distribution<float> d(20.f, 235.f);
  return Rgb{{d(rng), d(rng), d(rng)}};
}

// Procedural texture in normalized object coordinates (u, v) in [0, 1].
class Texture {
 public:
  explicit Texture(Rng& rng) {
    kind_ = std::uniform_int_distribution<int>(0, 3)(rng);
    a_ = random_color(rng);
    b_ = random_color(rng);
    // keep the two colors distinguishable
    for (int c = 0; c < 3; ++c) {
      if (std::abs(a_.v[c] - b_.v[c]) < 40.f) b_.v[c] = a_.v[c] > 128.f ? a_.v[c] - 90.f : a_.v[c] + 90.f;
    }
    cells_ = std::uniform_int_distribution<int>(2, 4)(rng);
    freq_ = std::uniform_real_distribution<double>(1.5, 3.5)(rng);
    angle_ = std::uniform_real_distribution<double>(0, std::numbers::pi)(rng);
    phase_ = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
    for (auto& blob : blobs_) {
      blob.u = std::uniform_real_distribution<double>(0.15, 0.85)(rng);
      blob.v = std::uniform_real_distribution<double>(0.15, 0.85)(rng);
      blob.r = std::uniform_real_distribution<double>(0.12, 0.3)(rng);
      blob.color = random_color(rng);
    }
  }

  Rgb operator()(double u, double v) const {
    switch (kind_) {
      case 0: {
        const int cu = static_cast<int>(std::floor(u * cells_));
        const int cv = static_cast<int>(std::floor(v * cells_));
        return ((cu + cv) & 1) ? a_ : b_;
      }
      case 1: {
        const double t = u * std::cos(angle_) + v * std::sin(angle_);
        return std::sin(2 * std::numbers::pi * freq_ * t + phase_) > 0 ? a_ : b_;
      }
      case 2: {
        const double r = std::hypot(u - 0.5, v - 0.5);
        return std::sin(2 * std::numbers::pi * freq_ * r + phase_) > 0 ? a_ : b_;
      }
      default: {
        for (const auto& blob : blobs_) {
          if (std::hypot(u - blob.u, v - blob.v) < blob.r) return blob.color;
        }
        return b_;
      }
    }
  }

 private:
  struct Blob {
    double u, v, r;
    Rgb color;
  };
  int kind_ = 0;
  Rgb a_{};
  Rgb b_{};
  int cells_ = 2;
  double freq_ = 2;
  double angle_ = 0;
  double phase_ = 0;
  std::array<Blob, 3> blobs_{};
};

struct Mover {
  Texture texture;
  BBox box;
  double vx = 0;
  double vy = 0;
};

Image make_background(const SynthSpec& spec, Rng& rng) {
  Image bg(spec.canvas_width, spec.canvas_height, 3);
  const Rgb base = random_color(rng);
  struct Blob {
    double x, y, sigma;
    float amp[3];
  };
  std::vector<Blob> blobs(6);
  std::uniform_real_distribution<double> ux(0, spec.canvas_width);
  std::uniform_real_distribution<double> uy(0, spec.canvas_height);
  std::uniform_real_distribution<double> us(15, 50);
  std::uniform_real_distribution<float> ua(-70.f, 70.f);
  for (auto& b : blobs) {
    b.x = ux(rng);
    b.y = uy(rng);
    b.sigma = us(rng);
    for (auto& a : b.amp) a = ua(rng);
  }
  // the gaussians are separable, so tabulate each axis once
  std::vector<float> gx(blobs.size() * bg.width), gy(blobs.size() * bg.height);
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    const double k = 1.0 / (2 * blobs[i].sigma * blobs[i].sigma);
    for (int x = 0; x < bg.width; ++x) {
      const double d = x + 0.5 - blobs[i].x;
      gx[i * bg.width + x] = static_cast<float>(std::exp(-d * d * k));
    }
    for (int y = 0; y < bg.height; ++y) {
      const double d = y + 0.5 - blobs[i].y;
      gy[i * bg.height + y] = static_cast<float>(std::exp(-d * d * k));
    }
  }
  for (int y = 0; y < bg.height; ++y) {
    for (int x = 0; x < bg.width; ++x) {
      float v[3] = {base.v[0], base.v[1], base.v[2]};
      for (std::size_t i = 0; i < blobs.size(); ++i) {
        const float g = gx[i * bg.width + x] * gy[i * bg.height + y];
        for (int c = 0; c < 3; ++c) v[c] += g * blobs[i].amp[c];
      }
      for (int c = 0; c < 3; ++c) bg.at(c, y, x) = v[c];
    }
  }
  return bg;
}

void draw(Image& img, const Mover& m) {
  const BBox& b = m.box;
  const int xa = std::max(0, static_cast<int>(std::ceil(b.x0() - 0.5)));
  const int xb = std::min(img.width - 1, static_cast<int>(std::floor(b.x1() - 0.5)));
  const int ya = std::max(0, static_cast<int>(std::ceil(b.y0() - 0.5)));
  const int yb = std::min(img.height - 1, static_cast<int>(std::floor(b.y1() - 0.5)));
  for (int y = ya; y <= yb; ++y) {
    const double v = (y + 0.5 - b.y0()) / b.h;
    for (int x = xa; x <= xb; ++x) {
      const double u = (x + 0.5 - b.x0()) / b.w;
      const Rgb c = m.texture(u, v);
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c.v[ch];
    }
  }
}

// Fixed tile of unit gaussian noise; each frame reads it at a random offset,
// which is far cheaper than drawing every pixel.
constexpr int kNoiseTile = 512;

const std::vector<float>& noise_tile() {
  static const std::vector<float> tile = [] {
    Rng rng(0x5eed);
    std::normal_distribution<float> n(0.f, 1.f);
    std::vector<float> t(static_cast<std::size_t>(kNoiseTile) * kNoiseTile);
    for (auto& v : t) v = n(rng);
    return t;
  }();
  return tile;
}

void add_noise(Image& frame, float sigma, Rng& rng) {
  const auto& tile = noise_tile();
  std::uniform_int_distribution<int> off(0, kNoiseTile - 1);
  for (int c = 0; c < frame.channels; ++c) {
    const int ox = off(rng);
    const int oy = off(rng);
    for (int y = 0; y < frame.height; ++y) {
      const float* row = &tile[static_cast<std::size_t>((y + oy) % kNoiseTile) * kNoiseTile];
      float* dst = &frame.at(c, y, 0);
      int x = 0;
      while (x < frame.width) {
        const int start = (x + ox) % kNoiseTile;
        const int run = std::min(frame.width - x, kNoiseTile - start);
        for (int i = 0; i < run; ++i) dst[x + i] += sigma * row[start + i];
        x += run;
      }
    }
  }
}

BBox random_box(const SynthSpec& spec, Rng& rng) {
  const double side = std::uniform_real_distribution<double>(spec.object_min, spec.object_max)(rng);
  const double aspect = std::exp(std::uniform_real_distribution<double>(
      std::log(spec.aspect_min), std::log(spec.aspect_max))(rng));
  // shorter side is `side`
  const double w = aspect >= 1 ? side : side / aspect;
  const double h = aspect >= 1 ? side * aspect : side;
  const double cx = std::uniform_real_distribution<double>(w / 2, spec.canvas_width - w / 2)(rng);
  const double cy = std::uniform_real_distribution<double>(h / 2, spec.canvas_height - h / 2)(rng);
  return BBox{cx, cy, w, h};
}

// Reflects a coordinate into [lo, hi], flipping the velocity on a bounce.
void reflect(double& p, double& v, double lo, double hi) {
  if (hi <= lo) {
    p = (lo + hi) / 2;
    return;
  }
  for (int guard = 0; guard < 8 && (p < lo || p > hi); ++guard) {
    if (p < lo) {
      p = 2 * lo - p;
      v = -v;
    } else if (p > hi) {
      p = 2 * hi - p;
      v = -v;
    }
  }
  p = std::clamp(p, lo, hi);
}

void step(Mover& m, const SynthSpec& spec, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double dx = m.vx;
  double dy = m.vy;
  if (spec.step_sigma > 0) {
    dx += spec.step_sigma * n(rng);
    dy += spec.step_sigma * n(rng);
  }
  m.box.cx += dx;
  m.box.cy += dy;
  reflect(m.box.cx, m.vx, m.box.w / 2, spec.canvas_width - m.box.w / 2);
  reflect(m.box.cy, m.vy, m.box.h / 2, spec.canvas_height - m.box.h / 2);
}

}  // namespace

Sequence synth_sequence(const SynthSpec& spec, int length, std::uint64_t seed) {
  spec.validate();
  if (length < 1) throw UsageError("sequence length must be positive");
  Rng rng(seed);
  Rng tex_rng(spec.texture_seed != 0 ? spec.texture_seed : rng());
  Image bg = make_background(spec, tex_rng);

  auto make_mover = [&]() {
    Mover m{Texture(tex_rng), random_box(spec, rng), 0, 0};
    const double angle = std::uniform_real_distribution<double>(0, 2 * std::numbers::pi)(rng);
    m.vx = spec.velocity * std::cos(angle);
    m.vy = spec.velocity * std::sin(angle);
    return m;
  };
  Mover target = make_mover();
  std::vector<Mover> distractors;
  for (int i = 0; i < spec.distractors; ++i) distractors.push_back(make_mover());

  Sequence seq;
  seq.name = "synth_" + std::to_string(seed);
  for (int t = 0; t < length; ++t) {
    Image frame = bg;
    if (spec.noise > 0) add_noise(frame, static_cast<float>(spec.noise), rng);
    for (const auto& d : distractors) draw(frame, d);
    draw(frame, target);
    // integral values make the PNG round trip lossless
    for (auto& v : frame.data) v = std::nearbyint(std::clamp(v, 0.f, 255.f));
    seq.frames.push_back(std::move(frame));
    seq.gt.push_back(target.box);
    step(target, spec, rng);
    for (auto& d : distractors) step(d, spec, rng);
  }
  return seq;
}

double context_side(const BBox& box, double context) {
  const double c = context * (box.w + box.h);
  return std::sqrt((box.w + c) * (box.h + c));
}

TrainSample sample_pair(const Sequence& source, const SamplingConfig& cfg, Rng& rng) {
  if (source.frames.empty() || source.frames.size() != source.gt.size()) {
    throw DatasetError("sequence frames and ground truth disagree");
  }
  if (cfg.shift_range < 0) throw ConfigError("shift_range must be non-negative");
  if (cfg.shift_range >= cfg.search_size / 2.0) {
    throw ConfigError("shift_range exceeds the search patch");
  }
  const int n = static_cast<int>(source.frames.size());
  const int tz = std::uniform_int_distribution<int>(0, n - 1)(rng);
  const int gap = std::uniform_int_distribution<int>(0, std::max(0, cfg.frame_gap))(rng);
  const int tx = std::min(n - 1, tz + gap);

  TrainSample s;
  const BBox& bz = source.gt[tz];
  s.z = crop_and_resize(source.frames[tz], bz.cx, bz.cy, context_side(bz, cfg.context),
                        cfg.template_size);

  const BBox& bx = source.gt[tx];
  double jitter = 1.0;
  if (cfg.scale_jitter > 0) {
    const double r = std::log1p(cfg.scale_jitter);
    jitter = std::exp(std::uniform_real_distribution<double>(-r, r)(rng));
  }
  const double side = context_side(bx, cfg.context) * cfg.search_size / cfg.template_size * jitter;
  const double scale = cfg.search_size / side;
  if (cfg.shift_range > 0) {
    std::uniform_real_distribution<double> u(-cfg.shift_range, cfg.shift_range);
    s.shift_x = u(rng);
    s.shift_y = u(rng);
  }
  const double half = cfg.search_size / 2.0;
  s.gt = BBox{half + s.shift_x, half + s.shift_y, bx.w * scale, bx.h * scale};
  if (s.gt.x0() < 0 || s.gt.y0() < 0 || s.gt.x1() > cfg.search_size ||
      s.gt.y1() > cfg.search_size) {
    throw ConfigError("shift_range too large: target leaves the search patch");
  }
  s.x = crop_and_resize(source.frames[tx], bx.cx - s.shift_x / scale, bx.cy - s.shift_y / scale,
                        side, cfg.search_size);
  return s;
}

TrainSample sample_pair(const SynthSpec& source, const SamplingConfig& cfg, Rng& rng) {
  const Sequence seq = synth_sequence(source, std::max(1, cfg.frame_gap + 1), rng());
  SamplingConfig c = cfg;
  // template from the first frame, search from the last
  Sequence two;
  two.frames = {seq.frames.front(), seq.frames.back()};
  two.gt = {seq.gt.front(), seq.gt.back()};
  TrainSample s;
  {
    const BBox& bz = two.gt[0];
    s.z = crop_and_resize(two.frames[0], bz.cx, bz.cy, context_side(bz, c.context), c.template_size);
  }
  c.frame_gap = 0;
  Sequence search_only;
  search_only.frames = {two.frames[1]};
  search_only.gt = {two.gt[1]};
  TrainSample x = sample_pair(search_only, c, rng);
  s.x = std::move(x.x);
  s.gt = x.gt;
  s.shift_x = x.shift_x;
  s.shift_y = x.shift_y;
  return s;
}

void LabelConfig::validate() const {
  if (!(pos_threshold > neg_threshold)) throw ConfigError("pos_threshold must exceed neg_threshold");
  if (max_positives < 1 || neg_per_pos < 1) throw ConfigError("sampling counts must be positive");
}

LabelAssignment assign_labels(const AnchorSet& anchors, const BBox& gt, const LabelConfig& cfg,
                              Rng& rng) {
  cfg.validate();
  const std::size_t n = anchors.size();
  LabelAssignment out;
  out.labels.assign(n, AnchorLabel::ignore);
  out.cls_mask.assign(n, 0);
  out.reg_mask.assign(n, 0);
  out.deltas.assign(n, RegressionDelta{});
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < n; ++i) {
    const double o = iou(anchors.boxes[i], gt);
    if (o >= cfg.pos_threshold) {
      out.labels[i] = AnchorLabel::positive;
      out.deltas[i] = encode_regression(anchors.boxes[i], gt);
      pos.push_back(i);
    } else if (o <= cfg.neg_threshold) {
      out.labels[i] = AnchorLabel::negative;
      neg.push_back(i);
    }
  }
  auto take = [&](std::vector<std::size_t>& idx, std::size_t count) {
    if (idx.size() > count) {
      // partial Fisher-Yates keeps the selection a function of the rng only
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng);
        std::swap(idx[i], idx[j]);
      }
      idx.resize(count);
      std::sort(idx.begin(), idx.end());
    }
  };
  take(pos, static_cast<std::size_t>(cfg.max_positives));
  out.no_positive = pos.empty();
  const std::size_t neg_count =
      static_cast<std::size_t>(cfg.neg_per_pos) * (pos.empty() ? cfg.max_positives : pos.size());
  take(neg, neg_count);
  for (std::size_t i : pos) {
    out.cls_mask[i] = 1;
    out.reg_mask[i] = 1;
  }
  for (std::size_t i : neg) out.cls_mask[i] = 1;
  out.num_positive = static_cast<int>(pos.size());
  out.num_negative = static_cast<int>(neg.size());
  return out;
}

void write_sequence(const std::filesystem::path& dir, const Sequence& seq) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "%08zu.png", t + 1);
    write_png(dir / name, seq.frames[t]);
  }
  write_boxes(dir / "groundtruth.txt", seq.gt);
}

}  // namespace siamtrack
