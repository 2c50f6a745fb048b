#include "siamtrack/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace siamtrack {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw ConfigError("warmup_epochs must lie in [0, epochs]");
  }
  if (!(warmup_lr > 0) || !(peak_lr > 0) || !(final_lr > 0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (warmup_lr > peak_lr) throw ConfigError("warmup_lr above peak_lr breaks schedule continuity");
  if (final_lr > peak_lr) throw ConfigError("final_lr above peak_lr makes the decay increase");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (!(backbone_lr_scale > 0) || backbone_lr_scale > 1) {
    throw ConfigError("backbone_lr_scale must lie in (0, 1]");
  }
  if (freeze_backbone_epochs < 0) throw ConfigError("freeze_backbone_epochs must be non-negative");
  if (batch_size < 1 || steps_per_epoch < 1) throw ConfigError("batch_size and steps_per_epoch must be positive");
  if (reg_weight < 0) throw ConfigError("reg_weight must be non-negative");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
}

TrainConfig TrainConfig::desk() {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.warmup_epochs = 5;
  cfg.peak_lr = 0.02;
  cfg.warmup_lr = cfg.peak_lr / 5;
  cfg.final_lr = cfg.peak_lr / 10;
  cfg.backbone_lr_scale = 1.0;
  cfg.freeze_backbone_epochs = 0;
  return cfg;
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw UsageError("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
  }
  if (epoch <= cfg.warmup_epochs) return cfg.warmup_lr;
  const int span = cfg.epochs - cfg.warmup_epochs - 1;
  if (span <= 0) return cfg.peak_lr;
  if (epoch == cfg.epochs) return cfg.final_lr;
  const double t = static_cast<double>(epoch - cfg.warmup_epochs - 1) / span;
  return cfg.peak_lr * std::pow(cfg.final_lr / cfg.peak_lr, t);
}

void sgd_step(SiamModel& model, double lr, const SgdConfig& cfg, bool freeze_backbone) {
  const float mu = static_cast<float>(cfg.momentum);
  const float decay = static_cast<float>(cfg.weight_decay);
  model.visit(Visitor<float>{
      [&](const std::string&, Parameter<float>& p) {
        const bool bb = p.group == ParamGroup::backbone;
        if (bb && freeze_backbone) return;
        const float step = static_cast<float>(bb ? lr * cfg.backbone_lr_scale : lr);
        float* w = p.value.data();
        const float* g = p.grad.data();
        float* v = p.velocity.data();
        for (std::size_t i = 0; i < p.count(); ++i) {
          v[i] = mu * v[i] + (g[i] + decay * w[i]);
          w[i] -= step * v[i];
        }
      },
      nullptr});
}

double clip_gradients(SiamModel& model, double max_norm) {
  double sq = 0;
  model.visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) {
                               for (float g : p.grad.values()) sq += static_cast<double>(g) * g;
                             },
                             nullptr});
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    model.visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) { p.grad *= s; }, nullptr});
  }
  return norm;
}

PairSampler::PairSampler(const SynthSpec& synth, const SamplingConfig& sampling,
                         const LabelConfig& labels, const AnchorSet& anchors, std::uint64_t seed)
    : synth_(synth), sampling_(sampling), labels_(labels), anchors_(anchors), rng_(seed) {
  synth_.validate();
  labels_.validate();
}

Batch PairSampler::next(int batch_size) {
  std::vector<Image> zs, xs;
  Batch b;
  for (int i = 0; i < batch_size; ++i) {
    TrainSample s = sample_pair(synth_, sampling_, rng_);
    b.labels.push_back(assign_labels(anchors_, s.gt, labels_, rng_));
    b.gt.push_back(s.gt);
    zs.push_back(std::move(s.z));
    xs.push_back(std::move(s.x));
  }
  b.z = to_tensor(zs);
  b.x = to_tensor(xs);
  return b;
}

bool train_epoch(SiamModel& model, PairSampler& sampler, const EpochOptions& opt,
                 std::vector<StepLog>& log) {
  for (int step = 1; step <= opt.steps; ++step) {
    Batch batch = sampler.next(opt.batch_size);
    SiamModel::Cache cache;
    ResponsePair<float> out = model.forward(batch.z, batch.x, Mode::train, &cache);
    LossResult<float> loss = total_loss(out, batch.labels, opt.reg_weight);
    log.push_back(StepLog{opt.epoch, step, loss.loss, opt.lr});
    if (!std::isfinite(loss.loss.total)) return false;
    model.zero_grad();
    model.backward(ResponsePair<float>{std::move(loss.dcls), std::move(loss.dreg), 0}, cache,
                   !opt.freeze_backbone);
    if (opt.clip) clip_gradients(model, opt.clip_norm);
    sgd_step(model, opt.lr, opt.sgd, opt.freeze_backbone);
  }
  return true;
}

namespace {

std::vector<Tensor<float>> snapshot(SiamModel& model) {
  std::vector<Tensor<float>> out;
  model.visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) {
                               out.push_back(p.value);
                               out.push_back(p.velocity);
                             },
                             [&](const std::string&, Tensor<float>& t) { out.push_back(t); }});
  return out;
}

void restore(SiamModel& model, const std::vector<Tensor<float>>& saved) {
  std::size_t i = 0;
  model.visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) {
                               p.value = saved[i++];
                               p.velocity = saved[i++];
                             },
                             [&](const std::string&, Tensor<float>& t) { t = saved[i++]; }});
}

void write_dump(const std::filesystem::path& dir, SiamModel& model, const std::vector<StepLog>& log) {
  const auto path = (dir.empty() ? std::filesystem::path(".") : dir) / "divergence_dump.txt";
  std::ofstream out(path);
  if (!out) return;
  out << "last steps\n";
  write_metrics_header(out);
  const std::size_t from = log.size() > 20 ? log.size() - 20 : 0;
  for (std::size_t i = from; i < log.size(); ++i) write_metrics_row(out, log[i]);
  out << "\nparameter norms (value, grad)\n";
  model.visit(Visitor<float>{[&](const std::string& name, Parameter<float>& p) {
                               double v = 0, g = 0;
                               for (float x : p.value.values()) v += double(x) * x;
                               for (float x : p.grad.values()) g += double(x) * x;
                               out << name << ',' << std::sqrt(v) << ',' << std::sqrt(g) << '\n';
                             },
                             nullptr});
}

}  // namespace

TrainResult train(SiamModel& model, const TrainConfig& cfg, const SynthSpec& synth,
                  const SamplingConfig& sampling, const LabelConfig& labels,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (sampling.template_size != model.config().template_size ||
      sampling.search_size != model.config().search_size) {
    throw ConfigError("sampling patch sizes differ from the model's");
  }
  PairSampler sampler(synth, sampling, labels, model.anchors(), cfg.seed);
  TrainResult result;
  EpochOptions opt;
  opt.steps = cfg.steps_per_epoch;
  opt.batch_size = cfg.batch_size;
  opt.reg_weight = cfg.reg_weight;
  opt.clip_norm = cfg.clip_norm;
  opt.sgd = SgdConfig{cfg.momentum, cfg.weight_decay, cfg.backbone_lr_scale};
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    opt.epoch = epoch;
    opt.lr = lr_schedule(epoch, cfg);
    opt.freeze_backbone = epoch <= cfg.freeze_backbone_epochs;
    const auto saved = snapshot(model);
    const PairSampler sampler_saved = sampler;
    std::vector<StepLog> log;
    while (!train_epoch(model, sampler, opt, log)) {
      ++result.divergences;
      if (result.divergences >= 3 || (result.divergences >= 2 && result.clipping_enabled)) {
        write_dump(hooks.dump_dir, model, log);
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(log.back().step) + " (loss not finite)");
      }
      if (result.divergences == 2) {
        result.clipping_enabled = true;
        opt.clip = true;
      }
      restore(model, saved);
      sampler = sampler_saved;
      log.clear();
    }
    double sum = 0;
    for (const auto& s : log) {
      sum += s.loss.total;
      if (hooks.on_step) hooks.on_step(s);
    }
    result.epoch_loss.push_back(sum / static_cast<double>(log.size()));
    result.steps.insert(result.steps.end(), log.begin(), log.end());
  }
  return result;
}

void write_metrics_header(std::ostream& out) { out << "epoch,step,cls_loss,reg_loss,total,lr\n"; }

void write_metrics_row(std::ostream& out, const StepLog& s) {
  std::ostringstream line;
  line << std::setprecision(9) << s.epoch << ',' << s.step << ',' << s.loss.cls_loss << ','
       << s.loss.reg_loss << ',' << s.loss.total << ',' << s.lr << '\n';
  out << line.str();
}

GradCheckResult grad_check(const std::function<double(const std::vector<double>&)>& f,
                           const std::vector<double>& x, const std::vector<double>& analytic,
                           std::size_t samples, double eps, std::uint64_t seed,
                           const std::function<bool(std::size_t)>& near_kink) {
  if (analytic.size() != x.size()) throw ShapeError("gradient and input sizes differ");
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (samples > 0 && samples < coords.size()) {
    Rng rng(seed);
    for (std::size_t i = 0; i < samples; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
      std::swap(coords[i], coords[pick(rng)]);
    }
    coords.resize(samples);
  }
  GradCheckResult r;
  // coordinates with gradients far below the overall scale would otherwise
  // measure rounding noise of f, not gradient error
  double scale = 0;
  for (double a : analytic) scale = std::max(scale, std::abs(a));
  const double floor = std::max(1e-4 * scale, 1e-12);
  const double f0 = f(x);
  std::vector<double> p = x;
  for (std::size_t i : coords) {
    if (near_kink && near_kink(i)) {
      ++r.skipped;
      continue;
    }
    p[i] = x[i] + eps;
    const double fp = f(p);
    p[i] = x[i] - eps;
    const double fm = f(p);
    p[i] = x[i];
    // a kink shows up as one-sided slopes that disagree at first order
    const double right = (fp - f0) / eps;
    const double left = (f0 - fm) / eps;
    if (std::abs(right - left) > 1e-3 + 0.1 * std::max(std::abs(right), std::abs(left))) {
      ++r.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2 * eps);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(numeric - analytic[i]) / denom);
    ++r.checked;
  }
  return r;
}

}  // namespace siamtrack
