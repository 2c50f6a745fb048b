#include <doctest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "siamtrack/geometry.hpp"
#include "siamtrack/model.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SIAMTRACK_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "siamtrack_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "c.cfg") << "output.dir = " << (d / "out").string() << "\n"
                               << "data.dir = " << (d / "data").string() << "\n"
                               << "data.sequences = 2\n"
                               << "data.length = 6\n"
                               << "train.epochs = 2\n"
                               << "train.warmup_epochs = 1\n"
                               << "train.steps_per_epoch = 2\n"
                               << "train.batch_size = 2\n"
                               << "model.checkpoint = " << (d / "m.ckpt").string() << "\n"
                               << "eval.dataset = " << (d / "data").string() << "\n"
                               << "eval.tracker = oracle\n"
                               << "corr.channels = 16,32\n"
                               << "corr.repeats = 1\n"
                               << "bias.shifts = 0\n"
                               << "bias.seeds = 1\n"
                               << "bias.eval_samples = 2\n"
                               << "bias.track_sequences = 1\n"
                               << "bias.track_length = 3\n";
    return d;
  }();
  return dir;
}

std::string cfg() { return "--config " + (workdir() / "c.cfg").string(); }

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("").code == 2);
  CHECK(run("levitate " + cfg()).code == 2);
  CHECK(run("grad-check " + cfg() + " --frobnicate").code == 2);
  CHECK(run("grad-check").code == 2);
  const fs::path bad = workdir() / "bad.cfg";
  std::ofstream(bad) << "train.epochs = lots\n";
  const Run r = run("grad-check --config " + bad.string());
  CHECK(r.code == 2);
  CHECK(r.out.find("train.epochs") != std::string::npos);
  std::ofstream(workdir() / "unknown.cfg") << "no.such.key = 1\n";
  CHECK(run("grad-check --config " + (workdir() / "unknown.cfg").string()).code == 2);
  CHECK(run("grad-check --config " + (workdir() / "absent.cfg").string()).code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("pipeline") {
  const fs::path d = workdir();

  Run r = run("synth-data " + cfg());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(d / "data" / "seq000" / "groundtruth.txt"));
  CHECK(fs::exists(d / "data" / "seq001"));

  r = run("eval-ope " + cfg());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("AUC 1.0000") != std::string::npos);
  CHECK(slurp(d / "out" / "summary.txt").find("auc 1.000000") != std::string::npos);
  CHECK(fs::exists(d / "out" / "ope_report.csv"));

  r = run("train " + cfg() + " --seed 5");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(d / "m.ckpt"));
  const std::string metrics = slurp(d / "out" / "metrics.csv");
  // header plus one row per step
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 5);

  r = run("inspect-weights " + cfg());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("alpha") != std::string::npos);

  r = run("track " + cfg() + " --sequence " + (d / "data" / "seq001").string() + " --init 10,12,30,28 --output " +
          (d / "pred.txt").string() + " --scores " + (d / "scores.csv").string() + " --overlay " +
          (d / "overlay").string());
  REQUIRE(r.code == 0);
  const auto boxes = siamtrack::read_boxes(d / "pred.txt");
  REQUIRE(boxes.size() == 6);
  CHECK(boxes[0].x0() == doctest::Approx(10));
  CHECK(boxes[0].w == doctest::Approx(30));
  const std::string scores = slurp(d / "scores.csv");
  CHECK(std::count(scores.begin(), scores.end(), '\n') >= 6);
  CHECK(std::distance(fs::directory_iterator(d / "overlay"), fs::directory_iterator{}) == 6);

  CHECK(run("track " + cfg() + " --sequence " + (d / "data" / "seq001").string() + " --init 1,2,3").code == 2);
  CHECK(run("track " + cfg() + " --sequence " + (d / "nowhere").string()).code != 0);
}

TEST_CASE("benchmarks and checks") {
  Run r = run("corr-bench " + cfg());
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("variant,D,k,params,flops,wall_time_ms\n", 0) == 0);
  CHECK(r.out.find("dw_xcorr,16,5,") != std::string::npos);
  CHECK(r.out.find("up_xcorr,32,5,") != std::string::npos);

  r = run("grad-check " + cfg());
  CHECK(r.code == 0);
  for (const char* op : {"dw_xcorr", "up_xcorr", "fusion", "smooth_l1", "total_loss"}) {
    CHECK(r.out.find(op) != std::string::npos);
  }

  r = run("bias-sim " + cfg());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(workdir() / "out" / "bias_summary.csv"));
  CHECK(fs::exists(workdir() / "out" / "bias_runs.csv"));
  CHECK(fs::exists(workdir() / "out" / "heatmap_shift0_seed1.png"));
}
