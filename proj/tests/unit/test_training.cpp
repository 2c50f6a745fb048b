#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "siamtrack/error.hpp"
#include "siamtrack/loss.hpp"
#include "siamtrack/training.hpp"
#include "support.hpp"

using namespace siamtrack;
using namespace siamtrack::testing;

namespace {

TrainConfig default_schedule() { return TrainConfig{}; }

std::map<std::string, std::vector<float>> params_by_name(SiamModel& m) {
  std::map<std::string, std::vector<float>> out;
  m.visit(Visitor<float>{[&](const std::string& name, Parameter<float>& p) {
                           out[name].assign(p.value.values().begin(), p.value.values().end());
                         },
                         nullptr});
  return out;
}

struct Fixture {
  ModelConfig mc = ModelConfig::desk(BackboneVariant::padded_residual);
  SynthSpec synth;
  SamplingConfig sampling;
  LabelConfig labels;
  TrainConfig train;

  Fixture() {
    train.epochs = 3;
    train.warmup_epochs = 1;
    train.steps_per_epoch = 2;
    train.batch_size = 2;
    train.freeze_backbone_epochs = 0;
  }
};

}  // namespace

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg = default_schedule();
  for (int e = 1; e <= 5; ++e) CHECK(lr_schedule(e, cfg) == 0.001);
  CHECK(lr_schedule(6, cfg) == 0.005);
  CHECK(lr_schedule(20, cfg) == 0.0005);
  CHECK(lr_schedule(13, cfg) == doctest::Approx(0.005 * std::pow(10.0, -7.0 / 14.0)).epsilon(1e-12));
  CHECK(lr_schedule(13, cfg) == doctest::Approx(1.581e-3).epsilon(1e-3));
  for (int e = 6; e < 20; ++e) CHECK(lr_schedule(e + 1, cfg) <= lr_schedule(e, cfg));
  CHECK_THROWS_AS(lr_schedule(0, cfg), UsageError);
  CHECK_THROWS_AS(lr_schedule(21, cfg), UsageError);

  TrainConfig bad = cfg;
  bad.warmup_lr = 0.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.backbone_lr_scale = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.final_lr = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sgd step") {
  Fixture f;
  SiamModel model(f.mc, 1);
  Rng rng(2);
  model.visit(Visitor<float>{[&](const std::string&, Parameter<float>& p) {
                               p.grad = random_tensor<float>(p.value.shape(), rng);
                             },
                             nullptr});
  SUBCASE("plain gradient step with layer-wise rates") {
    SiamModel before = model;
    const double lr = 0.01;
    sgd_step(model, lr, SgdConfig{0.0, 0.0, 0.1}, false);
    auto a = params_by_name(before);
    std::size_t checked = 0;
    model.visit(Visitor<float>{[&](const std::string& name, Parameter<float>& p) {
                                 const float step = static_cast<float>(p.group == ParamGroup::backbone ? lr * 0.1 : lr);
                                 for (std::size_t i = 0; i < p.count(); ++i) {
                                   const float want = a[name][i] - step * p.grad.data()[i];
                                   CHECK(rel_error(p.value.data()[i], want) <= 1e-9);
                                   ++checked;
                                 }
                               },
                               nullptr});
    CHECK(checked == model.param_count());
  }
  SUBCASE("weight decay contracts parameters") {
    model.zero_grad();
    auto a = params_by_name(model);
    const double lr = 0.1, decay = 0.01;
    sgd_step(model, lr, SgdConfig{0.0, decay, 1.0}, false);
    model.visit(Visitor<float>{[&](const std::string& name, Parameter<float>& p) {
                                 for (std::size_t i = 0; i < p.count(); ++i) {
                                   const double want = a[name][i] * (1 - lr * decay);
                                   CHECK(std::abs(p.value.data()[i] - want) <= 1e-6 * std::abs(want) + 1e-30);
                                 }
                               },
                               nullptr});
  }
  SUBCASE("frozen backbone is untouched") {
    auto a = params_by_name(model);
    sgd_step(model, 0.5, SgdConfig{}, true);
    auto b = params_by_name(model);
    model.visit(Visitor<float>{[&](const std::string& name, Parameter<float>& p) {
                                 if (p.group == ParamGroup::backbone) {
                                   CHECK(a[name] == b[name]);
                                   for (float v : p.velocity.values()) CHECK(v == 0.0f);
                                 } else {
                                   CHECK(a[name] != b[name]);
                                 }
                               },
                               nullptr});
  }
  SUBCASE("momentum accumulates") {
    const std::string name = "fusion.alpha";
    auto a = params_by_name(model);
    float g0 = 0;
    model.visit(Visitor<float>{[&](const std::string& n, Parameter<float>& p) {
                                 if (n == name) g0 = p.grad.data()[0];
                               },
                               nullptr});
    sgd_step(model, 1.0, SgdConfig{0.5, 0.0, 1.0}, false);
    sgd_step(model, 1.0, SgdConfig{0.5, 0.0, 1.0}, false);
    auto b = params_by_name(model);
    CHECK(b[name][0] == doctest::Approx(a[name][0] - g0 - 1.5f * g0).epsilon(1e-6));
  }
  SUBCASE("clipping bounds the global norm") {
    const double before = clip_gradients(model, 1.0);
    CHECK(before > 1.0);
    CHECK(clip_gradients(model, 1e9) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("gradients reach every level and both fusion groups") {
  Fixture f;
  SiamModel model(f.mc, 3);
  PairSampler sampler(f.synth, f.sampling, f.labels, model.anchors(), 4);
  Batch b = sampler.next(2);
  SiamModel::Cache cache;
  auto out = model.forward(b.z, b.x, Mode::train, &cache);
  auto loss = total_loss(out, b.labels);
  model.zero_grad();
  model.backward(ResponsePair<float>{loss.dcls, loss.dreg, 0}, cache, true);
  std::map<std::string, double> norm;
  model.visit(Visitor<float>{[&](const std::string& name, Parameter<float>& p) {
                               const std::string group = name.substr(0, name.find('.', name.find('.') + 1));
                               for (float g : p.grad.values()) norm[group] += double(g) * g;
                             },
                             nullptr});
  for (const char* g : {"head.l3", "head.l4", "head.l5", "fusion.alpha", "fusion.beta"}) {
    CAPTURE(g);
    CHECK(norm[g] > 0);
  }
  double backbone = 0;
  for (const auto& [name, v] : norm) {
    if (name.starts_with("backbone")) backbone += v;
  }
  CHECK(backbone > 0);
}

TEST_CASE("training loop contracts") {
  Fixture f;
  SUBCASE("zero learning rate leaves parameters unchanged") {
    SiamModel model(f.mc, 5);
    const auto before = params_by_name(model);
    PairSampler sampler(f.synth, f.sampling, f.labels, model.anchors(), 6);
    EpochOptions opt;
    opt.lr = 0;
    opt.steps = 2;
    opt.batch_size = 2;
    std::vector<StepLog> log;
    CHECK(train_epoch(model, sampler, opt, log));
    CHECK(log.size() == 2u);
    CHECK(params_by_name(model) == before);
  }
  SUBCASE("frozen backbone epochs") {
    f.train.epochs = 3;
    f.train.warmup_epochs = 2;
    f.train.freeze_backbone_epochs = 2;
    SiamModel model(f.mc, 7), frozen_check(f.mc, 7);
    auto initial = params_by_name(model);
    TrainConfig two = f.train;
    two.epochs = 2;
    two.warmup_epochs = 1;
    train(frozen_check, two, f.synth, f.sampling, f.labels);
    auto after_two = params_by_name(frozen_check);
    train(model, f.train, f.synth, f.sampling, f.labels);
    auto after_three = params_by_name(model);
    for (const auto& [name, v] : initial) {
      if (!name.starts_with("backbone")) continue;
      CHECK(after_two[name] == v);
      CHECK(after_three[name] != v);
    }
    CHECK(after_two["fusion.alpha"] != initial["fusion.alpha"]);
  }
  SUBCASE("fixed seed gives a bit-identical loss trajectory") {
    SiamModel a(f.mc, 8), b(f.mc, 8);
    const TrainResult ra = train(a, f.train, f.synth, f.sampling, f.labels);
    const TrainResult rb = train(b, f.train, f.synth, f.sampling, f.labels);
    REQUIRE(ra.steps.size() == 6u);
    for (std::size_t i = 0; i < ra.steps.size(); ++i) {
      CHECK(ra.steps[i].loss.total == rb.steps[i].loss.total);
      CHECK(ra.steps[i].lr == lr_schedule(ra.steps[i].epoch, f.train));
    }
    CHECK(params_by_name(a) == params_by_name(b));
    CHECK(ra.divergences == 0);
  }
  SUBCASE("non-finite loss stops the epoch") {
    SiamModel model(f.mc, 9);
    model.fusion.alpha.value.data()[0] = std::nanf("");
    PairSampler sampler(f.synth, f.sampling, f.labels, model.anchors(), 6);
    EpochOptions opt;
    opt.lr = 0.01;
    opt.steps = 3;
    std::vector<StepLog> log;
    CHECK_FALSE(train_epoch(model, sampler, opt, log));
    CHECK(log.size() == 1u);
  }
  SUBCASE("persistent divergence aborts with a dump") {
    const auto dir = std::filesystem::temp_directory_path() / "siamtrack_divergence_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    SiamModel model(f.mc, 10);
    f.train.warmup_lr = f.train.peak_lr = 1e12;
    f.train.final_lr = 1e11;
    f.train.backbone_lr_scale = 1;
    TrainHooks hooks;
    hooks.dump_dir = dir;
    CHECK_THROWS_AS(train(model, f.train, f.synth, f.sampling, f.labels, hooks), NumericError);
    CHECK(std::filesystem::exists(dir / "divergence_dump.txt"));
    std::filesystem::remove_all(dir);
  }
  SUBCASE("mismatched patch sizes are rejected") {
    SiamModel model(f.mc, 11);
    f.sampling.search_size = 255;
    CHECK_THROWS_AS(train(model, f.train, f.synth, f.sampling, f.labels), ConfigError);
  }
}

TEST_CASE("metrics log format") {
  std::ostringstream out;
  write_metrics_header(out);
  write_metrics_row(out, StepLog{2, 7, LossBreakdown{0.5, 0.25, 0.75, false}, 0.005});
  CHECK(out.str() == "epoch,step,cls_loss,reg_loss,total,lr\n2,7,0.5,0.25,0.75,0.005\n");
}

TEST_CASE("finite-difference checker") {
  SUBCASE("linear map is exact") {
    // dyadic values keep every evaluation free of rounding
    const std::vector<double> w{0.5, -2.0, 3.25, 0.125};
    auto f = [&](const std::vector<double>& x) {
      double s = 0;
      for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * x[i];
      return s;
    };
    const auto r = grad_check(f, {1, 2, 3, 4}, w, 0, 1.0 / 128);
    CHECK(r.max_rel_error < 1e-10);
    CHECK(r.checked == 4u);
  }
  SUBCASE("smooth_l1 away from the kink and at it") {
    const std::vector<double> x{0.3, -0.7, 2.5, -4.0, 1.0, -1.0};
    auto f = [](const std::vector<double>& v) {
      double s = 0;
      for (double e : v) s += smooth_l1(e);
      return s;
    };
    std::vector<double> g;
    for (double e : x) g.push_back(smooth_l1_grad(e));
    const double eps = 1e-5;
    const auto r = grad_check(f, x, g, 0, eps, 0,
                              [&](std::size_t i) { return std::abs(std::abs(x[i]) - 1.0) < 10 * eps; });
    CHECK(r.max_rel_error < 1e-8);
    CHECK(r.skipped == 2u);
    CHECK(r.checked == 4u);
  }
  SUBCASE("a wrong gradient is caught") {
    auto f = [](const std::vector<double>& v) { return v[0] * v[0]; };
    CHECK(grad_check(f, {3.0}, {5.0}).max_rel_error > 0.1);
  }
  SUBCASE("sampled coordinates") {
    std::vector<double> x(100, 1.0), g(100, 2.0);
    auto f = [](const std::vector<double>& v) {
      double s = 0;
      for (double e : v) s += 2 * e;
      return s;
    };
    CHECK(grad_check(f, x, g, 10, 1e-4, 3).checked == 10u);
  }
}
