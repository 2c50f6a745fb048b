#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <vector>

#include "siamtrack/loss.hpp"
#include "siamtrack/model.hpp"
#include "siamtrack/sampling.hpp"

namespace siamtrack {

struct TrainConfig {
  int epochs = 20;
  int warmup_epochs = 5;
  double warmup_lr = 0.001;
  double peak_lr = 0.005;
  double final_lr = 0.0005;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double backbone_lr_scale = 0.1;
  int freeze_backbone_epochs = 5;
  int batch_size = 8;
  int steps_per_epoch = 50;
  double reg_weight = 1.0;
  double clip_norm = 10.0;  // used only after repeated divergence
  std::uint64_t seed = 1;

  void validate() const;
  // Shorter, hotter schedule for training from scratch on synthetic data.
  static TrainConfig desk();
};

// Constant warmup_lr through warmup_epochs, then log-space decay from peak_lr
// (first post-warmup epoch) to final_lr (last epoch). Epochs are 1-based.
double lr_schedule(int epoch, const TrainConfig& cfg);

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double backbone_lr_scale = 0.1;
};

// v = momentum * v + (grad + decay * w); w -= lr * v. Frozen backbone
// parameters are left untouched, velocity included.
void sgd_step(SiamModel& model, double lr, const SgdConfig& cfg, bool freeze_backbone);
// Rescales all gradients to a global L2 norm of at most max_norm; returns the norm before.
double clip_gradients(SiamModel& model, double max_norm);

struct Batch {
  Tensor<float> z;
  Tensor<float> x;
  std::vector<LabelAssignment> labels;
  std::vector<BBox> gt;
};

// Endless stream of labelled synthetic pairs, deterministic per seed.
class PairSampler {
 public:
  PairSampler(const SynthSpec& synth, const SamplingConfig& sampling, const LabelConfig& labels,
              const AnchorSet& anchors, std::uint64_t seed);
  Batch next(int batch_size);

 private:
  SynthSpec synth_;
  SamplingConfig sampling_;
  LabelConfig labels_;
  AnchorSet anchors_;
  Rng rng_;
};

struct StepLog {
  int epoch = 0;
  int step = 0;
  LossBreakdown loss;
  double lr = 0;
};

struct EpochOptions {
  int epoch = 1;
  double lr = 0;
  bool freeze_backbone = false;
  bool clip = false;
  double clip_norm = 10.0;
  int steps = 1;
  int batch_size = 1;
  double reg_weight = 1.0;
  SgdConfig sgd;
};

// One epoch; stops early and reports false on a non-finite loss.
bool train_epoch(SiamModel& model, PairSampler& sampler, const EpochOptions& opt,
                 std::vector<StepLog>& log);

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<double> epoch_loss;  // mean total loss per epoch
  int divergences = 0;
  bool clipping_enabled = false;
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::filesystem::path dump_dir;  // diagnostics on abort; empty: current directory
};

// Divergent epochs are rolled back and retried; a second divergence turns on
// gradient clipping, a third aborts with a NumericError after writing a dump.
TrainResult train(SiamModel& model, const TrainConfig& cfg, const SynthSpec& synth,
                  const SamplingConfig& sampling, const LabelConfig& labels,
                  const TrainHooks& hooks = {});

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const StepLog& s);

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates at a kink
};

// Central differences of f around x against the analytic gradient, on
// `samples` random coordinates (all when samples == 0 or >= x.size()).
// Coordinates flagged by near_kink, or whose one-sided slopes disagree, are
// skipped and counted. Errors are relative to max(|analytic|, |numeric|),
// floored at 1e-4 of the largest analytic component.
GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& x, const std::vector<double>& analytic,
                           std::size_t samples = 0, double eps = 1e-4, std::uint64_t seed = 0,
                           const std::function<bool(std::size_t)>& near_kink = {});

}  // namespace siamtrack
