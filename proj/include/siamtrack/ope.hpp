#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "siamtrack/sampling.hpp"
#include "siamtrack/tracker.hpp"

namespace siamtrack {

// Sequences are loaded one at a time so a dataset never has to fit in memory.
class SequenceSource {
 public:
  virtual ~SequenceSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sequence load(std::size_t i) const = 0;
};

// Directory of sequence subdirectories (sorted by name), each holding numbered
// PNG frames and groundtruth.txt. Validated completely on construction.
class DiskDataset : public SequenceSource {
 public:
  explicit DiskDataset(const std::filesystem::path& root);
  std::size_t size() const override { return entries_.size(); }
  Sequence load(std::size_t i) const override;
  const std::string& name() const { return name_; }

  struct Entry {
    std::string name;
    std::vector<std::filesystem::path> frames;
    std::vector<BBox> gt;
  };
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::string name_;
  std::vector<Entry> entries_;
};

// Loads one sequence directory (frames + groundtruth.txt).
DiskDataset::Entry scan_sequence(const std::filesystem::path& dir);

// Sequence i is synth_sequence(spec, length, base_seed + i).
class SynthDataset : public SequenceSource {
 public:
  SynthDataset(const SynthSpec& spec, int count, int length, std::uint64_t base_seed);
  std::size_t size() const override { return static_cast<std::size_t>(count_); }
  Sequence load(std::size_t i) const override;

 private:
  SynthSpec spec_;
  int count_;
  int length_;
  std::uint64_t base_seed_;
};

class SequenceTracker {
 public:
  virtual ~SequenceTracker() = default;
  virtual void init(const Image& frame, const BBox& box) = 0;
  virtual BBox update(const Image& frame) = 0;
  virtual double last_score() const { return 0; }
};

using TrackerFactory =
    std::function<std::unique_ptr<SequenceTracker>(std::size_t index, const Sequence& seq)>;

class ModelTracker : public SequenceTracker {
 public:
  ModelTracker(SiamModel& model, const TrackerConfig& cfg) : model_(model), cfg_(cfg) {}
  void init(const Image& frame, const BBox& box) override;
  BBox update(const Image& frame) override;
  double last_score() const override { return score_; }
  const TrackerState& state() const { return state_; }

 private:
  SiamModel& model_;
  TrackerConfig cfg_;
  TrackerState state_;
  double score_ = 0;
};

class OracleTracker : public SequenceTracker {
 public:
  explicit OracleTracker(std::vector<BBox> gt) : gt_(std::move(gt)) {}
  void init(const Image&, const BBox&) override { frame_ = 0; }
  BBox update(const Image&) override;

 private:
  std::vector<BBox> gt_;
  std::size_t frame_ = 0;
};

// Uniformly random boxes inside the frame, sized like the initial box.
class RandomTracker : public SequenceTracker {
 public:
  explicit RandomTracker(std::uint64_t seed) : rng_(seed) {}
  void init(const Image& frame, const BBox& box) override;
  BBox update(const Image& frame) override;

 private:
  Rng rng_;
  BBox init_;
};

struct SequenceResult {
  std::string name;
  std::vector<BBox> predictions;  // frame 1 holds the initialization box
  std::vector<double> iou;
  std::vector<double> center_error;
  std::vector<double> scores;
};

struct OPEResult {
  std::vector<double> thresholds;  // 0.00 .. 1.00 step 0.05
  std::vector<double> success;
  double auc = 0;
  double precision = 0;
  double precision_threshold = 20;  // pixels
  std::size_t frames = 0;
  double mean_iou = 0;
};

std::vector<double> overlap_thresholds();
// Fraction of frames with IoU >= t for each threshold, from integer counts.
std::vector<double> success_curve(std::span<const double> ious);
// Mean success over the grid points above zero: the area under the step
// curve where each interval takes the success of its right end.
double success_auc(std::span<const double> success);
double trapezoid_auc(std::span<const double> success);

// Center-error threshold scaled from the conventional 20 px at a 255 px search region.
double precision_threshold_for(int search_size);

SequenceResult run_sequence(const Sequence& seq, SequenceTracker& tracker);
// Runs every sequence, using up to `threads` workers; results keep dataset order.
std::vector<SequenceResult> run_ope(const SequenceSource& data, const TrackerFactory& factory,
                                    int threads = 1);
OPEResult summarize(std::span<const SequenceResult> results, double precision_threshold);

// SIAMTRACK_THREADS, or 1 when unset or invalid.
int worker_count_from_env();

std::uint64_t fnv1a(std::string_view text);

// predictions/<seq>.txt, ope_report.csv, summary.txt.
void write_ope_report(const std::filesystem::path& dir, std::span<const SequenceResult> results,
                      const OPEResult& summary, std::uint64_t config_hash);

}  // namespace siamtrack
