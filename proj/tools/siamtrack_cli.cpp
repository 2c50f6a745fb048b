#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "siamtrack/bias_lab.hpp"
#include "siamtrack/config.hpp"
#include "siamtrack/grad_suite.hpp"
#include "siamtrack/ope.hpp"

namespace fs = std::filesystem;
using namespace siamtrack;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "configuration file")->required();
  sub->add_option("--seed", c.seed, "override every seed in the config");
}

AppConfig load(const Common& c) { return load_config(c.config, c.seed); }

fs::path output_dir(const AppConfig& cfg) {
  fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  return dir;
}

int cmd_synth_data(const AppConfig& cfg) {
  const fs::path root(cfg.data.dir);
  fs::create_directories(root);
  for (int i = 0; i < cfg.data.sequences; ++i) {
    Sequence seq = synth_sequence(cfg.synth, cfg.data.length, cfg.data.seed + i);
    char name[32];
    std::snprintf(name, sizeof(name), "seq%03d", i);
    seq.name = name;
    write_sequence(root / name, seq);
  }
  std::cout << "wrote " << cfg.data.sequences << " sequences of " << cfg.data.length << " frames to "
            << root.string() << '\n';
  return 0;
}

void print_fusion(SiamModel& model) {
  const auto a = model.fusion.alpha_normalized();
  const auto b = model.fusion.beta_normalized();
  std::cout << "fusion weights (level: alpha, beta)\n" << std::fixed << std::setprecision(4);
  for (int i = 0; i < model.num_levels(); ++i) {
    std::cout << "  conv" << model.config().levels[i] << ": " << a[i] << ", " << b[i] << '\n';
  }
  std::cout.unsetf(std::ios::fixed);
}

int cmd_train(const AppConfig& cfg) {
  const fs::path out = output_dir(cfg);
  const fs::path metrics = cfg.metrics.empty() ? out / "metrics.csv" : fs::path(cfg.metrics);
  std::ofstream log(metrics);
  if (!log) throw IoError("cannot write " + metrics.string());
  write_metrics_header(log);
  SiamModel model(cfg.model, cfg.train.seed);
  std::cout << "model parameters: " << model.param_count() << '\n';
  TrainHooks hooks;
  hooks.dump_dir = out;
  hooks.on_step = [&](const StepLog& s) { write_metrics_row(log, s); };
  const auto start = std::chrono::steady_clock::now();
  const TrainResult r = train(model, cfg.train, cfg.synth, cfg.sampling, cfg.labels, hooks);
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::cout << "epoch " << e + 1 << " lr " << lr_schedule(static_cast<int>(e) + 1, cfg.train)
              << " loss " << r.epoch_loss[e] << '\n';
  }
  if (r.divergences > 0) {
    std::cout << "divergences: " << r.divergences << (r.clipping_enabled ? " (clipping enabled)" : "")
              << '\n';
  }
  save_checkpoint(cfg.checkpoint, model);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "saved " << cfg.checkpoint << " after " << std::fixed << std::setprecision(1) << secs
            << " s\n";
  std::cout.unsetf(std::ios::fixed);
  print_fusion(model);
  return 0;
}

void draw_box(Image& img, const BBox& b, const float color[3]) {
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    for (int c = 0; c < std::min(3, img.channels); ++c) img.at(c, y, x) = color[c];
  };
  const int x0 = static_cast<int>(std::floor(b.x0())), x1 = static_cast<int>(std::floor(b.x1()));
  const int y0 = static_cast<int>(std::floor(b.y0())), y1 = static_cast<int>(std::floor(b.y1()));
  for (int x = x0; x <= x1; ++x) {
    put(x, y0);
    put(x, y1);
  }
  for (int y = y0; y <= y1; ++y) {
    put(x0, y);
    put(x1, y);
  }
}

int cmd_track(const AppConfig& cfg, const std::string& sequence, const std::string& init,
              const std::string& output, const std::string& scores, const std::string& overlay) {
  SiamModel model = load_checkpoint(cfg.checkpoint);
  const fs::path dir(sequence);
  std::vector<fs::path> frames;
  if (!fs::is_directory(dir)) throw DatasetError("sequence directory " + dir.string() + " not found");
  for (const auto& f : fs::directory_iterator(dir)) {
    if (f.is_regular_file() && f.path().extension() == ".png") frames.push_back(f.path());
  }
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) throw DatasetError("no frames in " + dir.string());
  BBox box;
  if (!init.empty()) {
    std::istringstream in(init);
    std::vector<BBox> boxes;
    try {
      boxes = parse_boxes(in);
    } catch (const DatasetError&) {
      throw UsageError("--init takes one box x,y,w,h");
    }
    if (boxes.size() != 1) throw UsageError("--init takes one box x,y,w,h");
    box = boxes[0];
  } else {
    const auto gt = read_boxes(dir / "groundtruth.txt");
    if (gt.empty()) throw DatasetError("groundtruth.txt is empty");
    box = gt[0];
  }
  TrackerConfig tc = cfg.tracker;
  tc.template_size = model.config().template_size;
  tc.search_size = model.config().search_size;
  ModelTracker tracker(model, tc);
  std::vector<BBox> preds;
  std::vector<double> frame_scores;
  if (!overlay.empty()) fs::create_directories(overlay);
  const float color[3] = {255.f, 40.f, 40.f};
  for (std::size_t f = 0; f < frames.size(); ++f) {
    Image img = read_png(frames[f]);
    if (f == 0) {
      tracker.init(img, box);
      preds.push_back(box);
      frame_scores.push_back(1.0);
    } else {
      preds.push_back(tracker.update(img));
      frame_scores.push_back(tracker.last_score());
    }
    if (!overlay.empty()) {
      draw_box(img, preds.back(), color);
      write_png(fs::path(overlay) / frames[f].filename(), img);
    }
  }
  const fs::path out = output.empty() ? output_dir(cfg) / "predictions.txt" : fs::path(output);
  write_boxes(out, preds);
  if (!scores.empty()) {
    std::ofstream s(scores);
    if (!s) throw IoError("cannot write " + scores);
    s << "frame,score\n" << std::setprecision(9);
    for (std::size_t f = 0; f < frame_scores.size(); ++f) s << f + 1 << ',' << frame_scores[f] << '\n';
  }
  std::cout << "tracked " << frames.size() << " frames; predictions in " << out.string() << '\n';
  return 0;
}

int cmd_eval_ope(const AppConfig& cfg) {
  std::unique_ptr<SequenceSource> data;
  if (!cfg.eval.dataset.empty()) {
    data = std::make_unique<DiskDataset>(cfg.eval.dataset);
  } else {
    data = std::make_unique<SynthDataset>(cfg.synth, cfg.eval.sequences, cfg.eval.length, cfg.eval.seed);
  }
  std::optional<SiamModel> model;
  TrackerConfig tc = cfg.tracker;
  if (cfg.eval.tracker == "model") {
    model.emplace(load_checkpoint(cfg.checkpoint));
    tc.template_size = model->config().template_size;
    tc.search_size = model->config().search_size;
  }
  TrackerFactory factory = [&](std::size_t i, const Sequence& seq) -> std::unique_ptr<SequenceTracker> {
    if (cfg.eval.tracker == "oracle") return std::make_unique<OracleTracker>(seq.gt);
    if (cfg.eval.tracker == "random") return std::make_unique<RandomTracker>(cfg.eval.random_seed + i);
    return std::make_unique<ModelTracker>(*model, tc);
  };
  const auto results = run_ope(*data, factory, worker_count_from_env());
  const OPEResult summary = summarize(results, precision_threshold_for(tc.search_size));
  const fs::path out = output_dir(cfg);
  write_ope_report(out, results, summary, fnv1a(cfg.canonical));
  std::cout << std::fixed << std::setprecision(4) << "AUC " << summary.auc << "\nprecision "
            << summary.precision << "\nframes " << summary.frames << '\n';
  return 0;
}

int cmd_bias_sim(const AppConfig& cfg) {
  const fs::path out = output_dir(cfg);
  std::vector<BiasRunResult> runs;
  for (double shift : cfg.bias_sweep.shifts) {
    for (int s = 0; s < cfg.bias_sweep.seeds; ++s) {
      BiasRunConfig rc = cfg.bias;
      rc.shift_range = shift;
      rc.seed = cfg.bias_sweep.first_seed + static_cast<std::uint64_t>(s);
      BiasRunResult r = run_simulation(rc);
      std::ostringstream name;
      name << "heatmap_shift" << shift << "_seed" << rc.seed << ".png";
      write_heatmap_png(out / name.str(), r.stats.map);
      std::cout << "shift " << shift << " seed " << rc.seed << ": central_mass "
                << r.stats.central_mass_fraction << " chi_square " << r.stats.chi_square << " entropy "
                << r.stats.entropy << " track_mean_iou " << r.track_mean_iou << std::endl;
      runs.push_back(std::move(r));
    }
  }
  std::ofstream per_run(out / "bias_runs.csv");
  write_bias_runs_csv(per_run, runs);
  std::ofstream summary(out / "bias_summary.csv");
  write_bias_summary_csv(summary, runs);
  write_bias_summary_csv(std::cout, runs);
  return 0;
}

int cmd_corr_bench(const AppConfig& cfg) {
  const int k = cfg.model.k();
  const int hz = cfg.corr.template_size;
  const int hx = cfg.corr.search_size;
  std::ostringstream csv;
  csv << "variant,D,k,params,flops,wall_time_ms\n";
  Rng rng(1);
  std::normal_distribution<float> n(0.f, 1.f);
  for (int D : cfg.corr.channels) {
    Tensor<float> z(1, D, hz, hz), x(1, D, hx, hx);
    for (auto& v : z.values()) v = n(rng);
    for (auto& v : x.values()) v = n(rng);
    for (CorrVariant v : {CorrVariant::xcorr, CorrVariant::up_xcorr, CorrVariant::dw_xcorr}) {
      CorrConfig cc;
      cc.variant = v;
      cc.channels = D;
      const auto t0 = std::chrono::steady_clock::now();
      for (int r = 0; r < cfg.corr.repeats; ++r) {
        if (v == CorrVariant::xcorr) {
          (void)xcorr(z, x, 0.f);
        } else if (v == CorrVariant::up_xcorr) {
          UpXCorrHead<float> head(cc, k);
          head.init(rng);
          (void)head.forward(z, x);
        } else {
          RpnBlock<float> block(D, k, 3, cc.adjust_kernel);
          block.init(rng);
          (void)block.forward(z, x, Mode::eval);
        }
      }
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() /
                        cfg.corr.repeats;
      csv << to_string(v) << ',' << D << ',' << k << ',' << count_params(cc, k).total() << ','
          << 2 * count_macs(cc, k, hz, hx) << ',' << std::fixed << std::setprecision(3) << ms << '\n';
      csv.unsetf(std::ios::fixed);
    }
  }
  std::ofstream(output_dir(cfg) / "corr_bench.csv") << csv.str();
  std::cout << csv.str();
  return 0;
}

int cmd_grad_check(const AppConfig& cfg) {
  GradSuiteConfig gc;
  gc.epsilon = cfg.grad.epsilon;
  gc.seed = cfg.grad.seed;
  bool ok = true;
  for (const auto& c : run_grad_suite(gc)) {
    const bool pass = c.result.max_rel_error < cfg.grad.tolerance;
    ok = ok && pass;
    std::cout << std::left << std::setw(12) << c.op << " max_rel_error " << std::scientific
              << std::setprecision(3) << c.result.max_rel_error << " checked " << c.result.checked
              << " skipped " << c.result.skipped << (pass ? "" : "  FAIL") << '\n';
  }
  return ok ? 0 : 1;
}

int cmd_inspect(const AppConfig& cfg, const std::string& checkpoint) {
  SiamModel model = load_checkpoint(checkpoint.empty() ? cfg.checkpoint : checkpoint);
  const auto& mc = model.config();
  std::cout << "backbone " << to_string(mc.backbone.variant) << ", levels";
  for (int l : mc.levels) std::cout << " conv" << l;
  std::cout << ", template " << mc.template_size << ", search " << mc.search_size << ", response "
            << mc.response_size() << "x" << mc.response_size() << ", anchors/cell " << mc.k() << '\n';
  std::cout << "parameters " << model.param_count() << '\n';
  print_fusion(model);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese region-proposal tracker: training, tracking and evaluation"};
  app.require_subcommand(1);
  Common common;
  std::string sequence, init, output, scores, overlay, checkpoint;

  auto* synth = app.add_subcommand("synth-data", "write a synthetic sequence dataset");
  auto* train_cmd = app.add_subcommand("train", "train a model and save a checkpoint");
  auto* track = app.add_subcommand("track", "track one sequence directory");
  auto* eval = app.add_subcommand("eval-ope", "one-pass evaluation over a dataset");
  auto* bias = app.add_subcommand("bias-sim", "center-bias simulation over shift ranges");
  auto* bench = app.add_subcommand("corr-bench", "parameter, MAC and timing table of correlation heads");
  auto* grad = app.add_subcommand("grad-check", "finite-difference gradient checks");
  auto* inspect = app.add_subcommand("inspect-weights", "print model summary and fusion weights");
  for (auto* sub : {synth, train_cmd, track, eval, bias, bench, grad, inspect}) add_common(sub, common);
  track->add_option("--sequence", sequence, "directory of numbered PNG frames")->required();
  track->add_option("--init", init, "initial box x,y,w,h (default: first groundtruth line)");
  track->add_option("--output", output, "predictions file");
  track->add_option("--scores", scores, "per-frame score CSV");
  track->add_option("--overlay", overlay, "directory for frames with the box drawn");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint (default: model.checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    const AppConfig cfg = load(common);
    if (synth->parsed()) return cmd_synth_data(cfg);
    if (train_cmd->parsed()) return cmd_train(cfg);
    if (track->parsed()) return cmd_track(cfg, sequence, init, output, scores, overlay);
    if (eval->parsed()) return cmd_eval_ope(cfg);
    if (bias->parsed()) return cmd_bias_sim(cfg);
    if (bench->parsed()) return cmd_corr_bench(cfg);
    if (grad->parsed()) return cmd_grad_check(cfg);
    if (inspect->parsed()) return cmd_inspect(cfg, checkpoint);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
