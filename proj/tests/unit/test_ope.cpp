#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "siamtrack/error.hpp"
#include "siamtrack/ope.hpp"
#include "support.hpp"

using namespace siamtrack;
using namespace siamtrack::testing;
namespace fs = std::filesystem;

namespace {

SequenceResult fake_result(const std::string& name, std::vector<double> ious, double err = 0) {
  SequenceResult r;
  r.name = name;
  r.iou = std::move(ious);
  r.center_error.assign(r.iou.size(), err);
  r.predictions.assign(r.iou.size(), BBox{10, 10, 5, 5});
  return r;
}

// Every prediction is the ground truth box shifted right so the IoU is 0.5.
class HalfTracker : public SequenceTracker {
 public:
  explicit HalfTracker(std::vector<BBox> gt) : gt_(std::move(gt)) {}
  void init(const Image&, const BBox&) override { f_ = 0; }
  BBox update(const Image&) override {
    BBox b = gt_[++f_];
    b.cx += b.w / 3.0;
    return b;
  }

 private:
  std::vector<BBox> gt_;
  std::size_t f_ = 0;
};

class FarTracker : public SequenceTracker {
 public:
  void init(const Image&, const BBox& b) override { b_ = b; }
  BBox update(const Image&) override { return BBox{b_.cx + 1000, b_.cy + 1000, b_.w, b_.h}; }

 private:
  BBox b_;
};

SynthDataset small_data() {
  SynthSpec spec;
  spec.velocity = 2;
  return SynthDataset(spec, 3, 5, 500);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("success curve and auc") {
  CHECK(overlap_thresholds().size() == 21);
  CHECK(overlap_thresholds().back() == 1.0);
  const std::vector<double> ious{0.0, 0.3, 0.5, 1.0};
  const auto s = success_curve(ious);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 0.75);   // 0.05
  CHECK(s[6] == 0.75);   // 0.30
  CHECK(s[7] == 0.5);    // 0.35
  CHECK(s[10] == 0.5);   // 0.50
  CHECK(s[11] == 0.25);
  CHECK(s[20] == 0.25);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i] <= s[i - 1]);

  // right-end step rule: the mean over the 20 points above zero
  double sum = 0;
  for (std::size_t i = 1; i < s.size(); ++i) sum += s[i];
  CHECK(success_auc(s) == doctest::Approx(sum / 20));
  // the trapezoid differs by half the end-point gap divided by the interval count
  CHECK(trapezoid_auc(s) - success_auc(s) == doctest::Approx((s.front() - s.back()) / 40));
  CHECK_THROWS_AS(success_auc(std::vector<double>{1.0}), UsageError);

  CHECK(success_auc(success_curve(std::vector<double>(7, 1.0))) == 1.0);
  CHECK(success_auc(success_curve(std::vector<double>(7, 0.0))) == 0.0);
  // a constant 0.5 overlap clears exactly the ten thresholds up to 0.5
  CHECK(success_auc(success_curve(std::vector<double>(7, 0.5))) == doctest::Approx(0.5));
}

TEST_CASE("summary over sequences") {
  std::vector<SequenceResult> rs{fake_result("a", {1, 0.5, 0.2}, 3), fake_result("b", {0.9, 0.0}, 50),
                                 fake_result("c", {0.7}, 10)};
  const OPEResult s = summarize(rs, 20);
  CHECK(s.frames == 6);
  CHECK(s.precision == doctest::Approx(4.0 / 6));
  CHECK(s.mean_iou == doctest::Approx((1 + 0.5 + 0.2 + 0.9 + 0.0 + 0.7) / 6));
  std::vector<double> pooled{1, 0.5, 0.2, 0.9, 0.0, 0.7};
  CHECK(s.auc == doctest::Approx(success_auc(success_curve(pooled))));

  std::vector<SequenceResult> shuffled{rs[2], rs[0], rs[1]};
  const OPEResult t = summarize(shuffled, 20);
  CHECK(t.auc == s.auc);
  CHECK(t.precision == s.precision);
  CHECK(t.mean_iou == s.mean_iou);
  CHECK(t.success == s.success);

  CHECK(summarize(std::vector<SequenceResult>{}, 20).frames == 0);
  CHECK(precision_threshold_for(255) == doctest::Approx(20));
  CHECK(precision_threshold_for(127) == doctest::Approx(20.0 * 127 / 255));
}

TEST_CASE("reference trackers") {
  const SynthDataset data = small_data();
  SUBCASE("oracle") {
    const auto rs = run_ope(data, [](std::size_t, const Sequence& s) { return std::make_unique<OracleTracker>(s.gt); });
    const OPEResult s = summarize(rs, 20);
    CHECK(s.auc == 1.0);
    CHECK(s.precision == 1.0);
    CHECK(s.frames == 15);
  }
  SUBCASE("constant half overlap") {
    const auto rs = run_ope(data, [](std::size_t, const Sequence& s) { return std::make_unique<HalfTracker>(s.gt); });
    std::vector<SequenceResult> later;
    for (auto r : rs) {
      // the first frame is the given box; score only the tracked frames
      for (std::size_t f = 1; f < r.iou.size(); ++f) CHECK(r.iou[f] == doctest::Approx(0.5));
      r.iou.erase(r.iou.begin());
      r.center_error.erase(r.center_error.begin());
      later.push_back(r);
    }
    const OPEResult s = summarize(later, 20);
    CHECK(s.auc == doctest::Approx(0.5).epsilon(0.02));
  }
  SUBCASE("far away") {
    const auto rs = run_ope(data, [](std::size_t, const Sequence&) { return std::make_unique<FarTracker>(); });
    std::vector<SequenceResult> later;
    for (auto r : rs) {
      r.iou.erase(r.iou.begin());
      r.center_error.erase(r.center_error.begin());
      later.push_back(r);
    }
    const OPEResult s = summarize(later, 20);
    CHECK(s.auc == 0.0);
    CHECK(s.precision == 0.0);
  }
  SUBCASE("threads keep order and results") {
    auto factory = [](std::size_t i, const Sequence&) { return std::make_unique<RandomTracker>(i + 1); };
    const auto one = run_ope(data, factory, 1);
    const auto three = run_ope(data, factory, 3);
    REQUIRE(one.size() == three.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
      CHECK(one[i].name == three[i].name);
      CHECK(one[i].iou == three[i].iou);
    }
  }
}

TEST_CASE("disk dataset") {
  const fs::path root = fs::temp_directory_path() / "siamtrack_ope_data";
  fs::remove_all(root);
  const SynthDataset data = small_data();
  for (std::size_t i = 0; i < 2; ++i) {
    const Sequence s = data.load(i);
    write_sequence(root / ("seq" + std::to_string(i)), s);
  }
  const DiskDataset disk(root);
  CHECK(disk.size() == 2);
  CHECK(disk.entries()[0].name == "seq0");
  const Sequence back = disk.load(1);
  CHECK(back.frames.size() == 5);
  CHECK(back.gt.size() == 5);
  CHECK(back.gt[2].cx == doctest::Approx(data.load(1).gt[2].cx).epsilon(1e-6));

  SUBCASE("report files are stable") {
    const auto rs = run_ope(disk, [](std::size_t, const Sequence& s) { return std::make_unique<OracleTracker>(s.gt); });
    const OPEResult s = summarize(rs, 20);
    const fs::path out = root.parent_path() / "siamtrack_ope_report";
    fs::remove_all(out);
    write_ope_report(out, rs, s, fnv1a("a = 1\n"));
    const std::string first = slurp(out / "summary.txt") + slurp(out / "ope_report.csv");
    write_ope_report(out, rs, s, fnv1a("a = 1\n"));
    CHECK(first == slurp(out / "summary.txt") + slurp(out / "ope_report.csv"));
    CHECK(fs::exists(out / "predictions" / "seq0.txt"));
    CHECK(slurp(out / "summary.txt").find("auc 1.000000") != std::string::npos);
    fs::remove_all(out);
  }
  SUBCASE("missing frame") {
    fs::remove(root / "seq1" / disk.entries()[1].frames.back().filename());
    CHECK_THROWS_AS(DiskDataset{root}, DatasetError);
  }
  SUBCASE("missing ground truth") {
    fs::remove(root / "seq0" / "groundtruth.txt");
    CHECK_THROWS_AS(DiskDataset{root}, DatasetError);
  }
  CHECK_THROWS_AS(DiskDataset{root / "nope"}, DatasetError);
  fs::remove_all(root);
}

TEST_CASE("hashing and worker count") {
  CHECK(fnv1a("") == 14695981039346656037ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("ab") != fnv1a("ba"));
  setenv("SIAMTRACK_THREADS", "3", 1);
  CHECK(worker_count_from_env() == 3);
  setenv("SIAMTRACK_THREADS", "zero", 1);
  CHECK(worker_count_from_env() == 1);
  unsetenv("SIAMTRACK_THREADS");
  CHECK(worker_count_from_env() == 1);
}
