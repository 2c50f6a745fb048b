#include "siamtrack/ope.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace siamtrack {

namespace fs = std::filesystem;

DiskDataset::Entry scan_sequence(const fs::path& dir) {
  DiskDataset::Entry e;
  e.name = dir.filename().string();
  const fs::path gt = dir / "groundtruth.txt";
  if (!fs::exists(gt)) throw DatasetError("sequence " + e.name + " has no groundtruth.txt");
  e.gt = read_boxes(gt);
  for (const auto& f : fs::directory_iterator(dir)) {
    if (f.is_regular_file() && f.path().extension() == ".png") e.frames.push_back(f.path());
  }
  std::sort(e.frames.begin(), e.frames.end());
  if (e.frames.size() != e.gt.size()) {
    throw DatasetError("sequence " + e.name + ": " + std::to_string(e.frames.size()) + " frames but " +
                       std::to_string(e.gt.size()) + " ground-truth boxes");
  }
  if (e.frames.empty()) throw DatasetError("sequence " + e.name + " is empty");
  return e;
}

DiskDataset::DiskDataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("dataset directory " + root.string() + " not found");
  name_ = root.filename().string();
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory()) dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) entries_.push_back(scan_sequence(d));
  if (entries_.empty()) throw DatasetError("dataset " + root.string() + " has no sequences");
}

Sequence DiskDataset::load(std::size_t i) const {
  const Entry& e = entries_.at(i);
  Sequence s;
  s.name = e.name;
  s.gt = e.gt;
  for (const auto& f : e.frames) s.frames.push_back(read_png(f));
  return s;
}

SynthDataset::SynthDataset(const SynthSpec& spec, int count, int length, std::uint64_t base_seed)
    : spec_(spec), count_(count), length_(length), base_seed_(base_seed) {
  spec_.validate();
  if (count < 1 || length < 2) throw ConfigError("synthetic dataset needs sequences of 2+ frames");
}

Sequence SynthDataset::load(std::size_t i) const {
  return synth_sequence(spec_, length_, base_seed_ + i);
}

void ModelTracker::init(const Image& frame, const BBox& box) {
  state_ = tracker_init(frame, box, model_, cfg_);
  score_ = 1;
}

BBox ModelTracker::update(const Image& frame) {
  const TrackOutput out = track_step(state_, model_, frame);
  score_ = out.score;
  return out.box;
}

BBox OracleTracker::update(const Image&) {
  ++frame_;
  if (frame_ >= gt_.size()) throw UsageError("oracle tracker ran past its ground truth");
  return gt_[frame_];
}

void RandomTracker::init(const Image&, const BBox& box) { init_ = box; }

BBox RandomTracker::update(const Image& frame) {
  std::uniform_real_distribution<double> ux(0, frame.width), uy(0, frame.height);
  return BBox{ux(rng_), uy(rng_), init_.w, init_.h};
}

std::vector<double> overlap_thresholds() {
  std::vector<double> t(21);
  for (int i = 0; i <= 20; ++i) t[i] = i / 20.0;
  return t;
}

std::vector<double> success_curve(std::span<const double> ious) {
  const auto t = overlap_thresholds();
  std::vector<double> s(t.size(), 0.0);
  if (ious.empty()) return s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::size_t n = 0;
    for (double v : ious) n += v >= t[i];
    s[i] = static_cast<double>(n) / static_cast<double>(ious.size());
  }
  return s;
}

double success_auc(std::span<const double> success) {
  if (success.size() < 2) throw UsageError("success curve needs at least two points");
  double sum = 0;
  for (std::size_t i = 1; i < success.size(); ++i) sum += success[i];
  return sum / static_cast<double>(success.size() - 1);
}

double trapezoid_auc(std::span<const double> success) {
  if (success.size() < 2) throw UsageError("success curve needs at least two points");
  double sum = 0;
  for (std::size_t i = 1; i < success.size(); ++i) sum += 0.5 * (success[i - 1] + success[i]);
  return sum / static_cast<double>(success.size() - 1);
}

double precision_threshold_for(int search_size) { return 20.0 * search_size / 255.0; }

SequenceResult run_sequence(const Sequence& seq, SequenceTracker& tracker) {
  if (seq.frames.size() != seq.gt.size() || seq.frames.empty()) {
    throw DatasetError("sequence " + seq.name + " has mismatched frames and ground truth");
  }
  SequenceResult r;
  r.name = seq.name;
  tracker.init(seq.frames[0], seq.gt[0]);
  for (std::size_t f = 0; f < seq.frames.size(); ++f) {
    const BBox pred = f == 0 ? seq.gt[0] : tracker.update(seq.frames[f]);
    r.predictions.push_back(pred);
    r.iou.push_back(iou(pred, seq.gt[f]));
    r.center_error.push_back(std::hypot(pred.cx - seq.gt[f].cx, pred.cy - seq.gt[f].cy));
    r.scores.push_back(f == 0 ? 1.0 : tracker.last_score());
  }
  return r;
}

std::vector<SequenceResult> run_ope(const SequenceSource& data, const TrackerFactory& factory,
                                    int threads) {
  const std::size_t n = data.size();
  std::vector<SequenceResult> results(n);
  auto work = [&](std::size_t i) {
    const Sequence seq = data.load(i);
    auto tracker = factory(i, seq);
    results[i] = run_sequence(seq, *tracker);
  };
  const int workers = std::clamp(threads, 1, static_cast<int>(std::max<std::size_t>(n, 1)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) work(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

OPEResult summarize(std::span<const SequenceResult> results, double precision_threshold) {
  OPEResult out;
  out.thresholds = overlap_thresholds();
  out.precision_threshold = precision_threshold;
  std::vector<std::size_t> hits(out.thresholds.size(), 0);
  std::size_t precise = 0;
  // integer counts, and a sorted sum for the mean, so nothing depends on the
  // order sequences are presented in
  std::vector<double> all_iou;
  for (const auto& r : results) {
    for (std::size_t f = 0; f < r.iou.size(); ++f) {
      for (std::size_t i = 0; i < out.thresholds.size(); ++i) hits[i] += r.iou[f] >= out.thresholds[i];
      precise += r.center_error[f] <= precision_threshold;
      all_iou.push_back(r.iou[f]);
    }
  }
  out.frames = all_iou.size();
  out.success.assign(out.thresholds.size(), 0.0);
  if (out.frames == 0) {
    out.auc = 0;
    return out;
  }
  const double n = static_cast<double>(out.frames);
  for (std::size_t i = 0; i < hits.size(); ++i) out.success[i] = static_cast<double>(hits[i]) / n;
  out.auc = success_auc(out.success);
  out.precision = static_cast<double>(precise) / n;
  std::sort(all_iou.begin(), all_iou.end());
  double sum = 0;
  for (double v : all_iou) sum += v;
  out.mean_iou = sum / n;
  return out;
}

int worker_count_from_env() {
  const char* v = std::getenv("SIAMTRACK_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (end == v || *end != '\0' || n < 1) return 1;
  return static_cast<int>(std::min<long>(n, 64));
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void write_ope_report(const fs::path& dir, std::span<const SequenceResult> results,
                      const OPEResult& summary, std::uint64_t config_hash) {
  fs::create_directories(dir / "predictions");
  for (const auto& r : results) write_boxes(dir / "predictions" / (r.name + ".txt"), r.predictions);
  {
    std::ofstream out(dir / "ope_report.csv");
    if (!out) throw IoError("cannot write " + (dir / "ope_report.csv").string());
    out << "threshold,success\n" << std::fixed;
    for (std::size_t i = 0; i < summary.thresholds.size(); ++i) {
      out << std::setprecision(2) << summary.thresholds[i] << ',' << std::setprecision(6)
          << summary.success[i] << '\n';
    }
  }
  std::ofstream out(dir / "summary.txt");
  if (!out) throw IoError("cannot write " + (dir / "summary.txt").string());
  out << "# precision threshold " << std::fixed << std::setprecision(2) << summary.precision_threshold
      << " px (20 px at a 255 px search region, scaled)\n";
  out << std::setprecision(6);
  out << "auc " << summary.auc << '\n';
  out << "precision " << summary.precision << '\n';
  out << "mean_iou " << summary.mean_iou << '\n';
  out << "frames " << summary.frames << '\n';
  out << "sequences " << results.size() << '\n';
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << config_hash;
  out << "config_hash " << hash.str() << '\n';
}

}  // namespace siamtrack
