#include "siamtrack/grad_suite.hpp"

#include <cmath>

namespace siamtrack {

namespace {

using TD = Tensor<double>;

struct Slots {
  std::vector<TD*> tensors;

  std::vector<double> get() const {
    std::vector<double> out;
    for (const TD* t : tensors) out.insert(out.end(), t->data(), t->data() + t->size());
    return out;
  }
  void set(const std::vector<double>& v) const {
    std::size_t i = 0;
    for (TD* t : tensors) {
      for (std::size_t j = 0; j < t->size(); ++j) t->data()[j] = v[i++];
    }
  }
};

std::vector<double> flatten(const std::vector<const TD*>& grads) {
  std::vector<double> out;
  for (const TD* g : grads) out.insert(out.end(), g->data(), g->data() + g->size());
  return out;
}

TD random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  TD t(s);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

double dot(const TD& a, const TD& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

GradCheckResult check(const Slots& slots, const std::function<double()>& loss,
                      const std::vector<double>& analytic, const GradSuiteConfig& cfg,
                      const std::function<bool(std::size_t)>& kink = {}) {
  const std::vector<double> x0 = slots.get();
  auto f = [&](const std::vector<double>& x) {
    slots.set(x);
    return loss();
  };
  GradCheckResult r = grad_check(f, x0, analytic, cfg.samples, cfg.epsilon, cfg.seed, kink);
  slots.set(x0);
  return r;
}

GradCheckResult check_dw_xcorr(const GradSuiteConfig& cfg, Rng& rng) {
  TD z = random_tensor({2, 2, 4, 4}, rng);
  TD x = random_tensor({2, 2, 8, 8}, rng);
  const TD r = random_tensor({2, 2, 5, 5}, rng);
  auto [dz, dx] = dw_xcorr_backward(r, z, x);
  return check(Slots{{&z, &x}}, [&] { return dot(r, dw_xcorr(z, x)); }, flatten({&dz, &dx}), cfg);
}

GradCheckResult check_up_xcorr(const GradSuiteConfig& cfg, Rng& rng) {
  UpXCorr<double> up(2, 3, 3);
  up.init(rng);
  for (auto& b : up.raise.bias.value.values()) b = std::normal_distribution<double>(0, 0.1)(rng);
  TD z = random_tensor({1, 2, 5, 5}, rng);
  TD x = random_tensor({1, 2, 7, 7}, rng);
  typename UpXCorr<double>::Cache cache;
  const TD out = up.forward(z, x, &cache);
  const TD r = random_tensor(out.shape(), rng);
  auto [dz, dx] = up.backward(r, cache);
  return check(Slots{{&z, &x, &up.raise.weight.value, &up.raise.bias.value}},
               [&] { return dot(r, up.forward(z, x)); },
               flatten({&dz, &dx, &up.raise.weight.grad, &up.raise.bias.grad}), cfg);
}

GradCheckResult check_fusion(const GradSuiteConfig& cfg, Rng& rng) {
  Fusion<double> fusion(3);
  fusion.alpha.value = random_tensor({1, 3, 1, 1}, rng);
  fusion.beta.value = random_tensor({1, 3, 1, 1}, rng);
  std::vector<ResponsePair<double>> in;
  for (int l = 0; l < 3; ++l) {
    in.push_back({random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 4, 3, 3}, rng), 3 + l});
  }
  const ResponsePair<double> out = fusion.forward(in);
  const TD rc = random_tensor(out.cls.shape(), rng);
  const TD rr = random_tensor(out.reg.shape(), rng);
  const auto grads = fusion.backward({rc, rr, 0}, in);
  Slots slots{{&fusion.alpha.value, &fusion.beta.value}};
  std::vector<const TD*> g{&fusion.alpha.grad, &fusion.beta.grad};
  for (int l = 0; l < 3; ++l) {
    slots.tensors.push_back(&in[l].cls);
    slots.tensors.push_back(&in[l].reg);
    g.push_back(&grads[l].cls);
    g.push_back(&grads[l].reg);
  }
  return check(slots, [&] {
    const auto o = fusion.forward(in);
    return dot(rc, o.cls) + dot(rr, o.reg);
  }, flatten(g), cfg);
}

GradCheckResult check_smooth_l1(const GradSuiteConfig& cfg, Rng& rng) {
  TD x(Shape{1, 1, 8, 8});
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (auto& v : x.values()) v = u(rng);
  const TD r = random_tensor(x.shape(), rng);
  TD g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g.data()[i] = r.data()[i] * smooth_l1_grad(x.data()[i]);
  const double margin = 10 * cfg.epsilon;
  return check(Slots{{&x}}, [&] { return dot(r, smooth_l1(x)); }, flatten({&g}), cfg,
               [&](std::size_t i) { return std::abs(std::abs(x.data()[i]) - 1.0) < margin; });
}

GradCheckResult check_total_loss(const GradSuiteConfig& cfg, Rng& rng) {
  AnchorConfig ac;
  ac.ratios = {0.5, 1.0, 2.0};
  ac.scales = {16};
  ac.stride = 4;
  const int R = 5;
  const double o = centered_origin(31, R, ac.stride);
  const AnchorSet anchors = make_anchors(ac, R, R, o, o);
  LabelConfig lc;
  lc.max_positives = 4;
  std::vector<LabelAssignment> labels;
  labels.push_back(assign_labels(anchors, BBox{15.5, 15.5, 16, 16}, lc, rng));
  labels.push_back(assign_labels(anchors, BBox{19.0, 13.0, 12, 22}, lc, rng));
  ResponsePair<double> fused{random_tensor({2, 2 * ac.k(), R, R}, rng),
                             random_tensor({2, 4 * ac.k(), R, R}, rng, 0.5), 0};
  const LossResult<double> lr = total_loss(fused, labels, 1.0);
  const std::size_t ncls = fused.cls.size();
  const double margin = 10 * cfg.epsilon;
  auto kink = [&](std::size_t i) {
    if (i < ncls) return false;
    // regression coordinate: at a kink when its residual sits on |d| = 1
    std::size_t r = i - ncls;
    const int W = R, H = R, k = ac.k();
    const int j = static_cast<int>(r % W);
    r /= W;
    const int y = static_cast<int>(r % H);
    r /= H;
    const int ch = static_cast<int>(r % (4 * k));
    const int n = static_cast<int>(r / (4 * k));
    const int c = ch / k, a = ch % k;
    const std::size_t idx = anchors.index(y, j, a);
    if (!labels[n].reg_mask[idx]) return false;
    const auto& d = labels[n].deltas[idx];
    const double t[4] = {d.dx, d.dy, d.dw, d.dh};
    return std::abs(std::abs(fused.reg.at(n, ch, y, j) - t[c]) - 1.0) < margin;
  };
  return check(Slots{{&fused.cls, &fused.reg}}, [&] { return total_loss(fused, labels, 1.0).loss.total; },
               flatten({&lr.dcls, &lr.dreg}), cfg, kink);
}

GradCheckResult check_conv(const GradSuiteConfig& cfg, Rng& rng) {
  Conv2d<double> conv(ConvSpec{3, 4, 3, 2, 1, 1, true});
  conv.init(rng);
  for (auto& b : conv.bias.value.values()) b = std::normal_distribution<double>(0, 0.1)(rng);
  TD x = random_tensor({2, 3, 7, 7}, rng);
  typename Conv2d<double>::Cache cache;
  const TD out = conv.forward(x, &cache);
  const TD r = random_tensor(out.shape(), rng);
  const TD dx = conv.backward(r, cache);
  return check(Slots{{&x, &conv.weight.value, &conv.bias.value}},
               [&] { return dot(r, conv.forward(x)); },
               flatten({&dx, &conv.weight.grad, &conv.bias.grad}), cfg);
}

GradCheckResult check_batchnorm(const GradSuiteConfig& cfg, Rng& rng) {
  BatchNorm2d<double> bn(3);
  bn.gamma.value = random_tensor({1, 3, 1, 1}, rng);
  bn.beta.value = random_tensor({1, 3, 1, 1}, rng);
  TD x = random_tensor({2, 3, 4, 4}, rng);
  typename BatchNorm2d<double>::Cache cache;
  const TD out = bn.forward(x, Mode::train, &cache);
  const TD r = random_tensor(out.shape(), rng);
  const TD dx = bn.backward(r, cache);
  return check(Slots{{&x, &bn.gamma.value, &bn.beta.value}},
               [&] { return dot(r, bn.forward(x, Mode::train)); },
               flatten({&dx, &bn.gamma.grad, &bn.beta.grad}), cfg);
}

}  // namespace

std::vector<NamedGradCheck> run_grad_suite(const GradSuiteConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<NamedGradCheck> out;
  out.push_back({"dw_xcorr", check_dw_xcorr(cfg, rng)});
  out.push_back({"up_xcorr", check_up_xcorr(cfg, rng)});
  out.push_back({"fusion", check_fusion(cfg, rng)});
  out.push_back({"smooth_l1", check_smooth_l1(cfg, rng)});
  out.push_back({"total_loss", check_total_loss(cfg, rng)});
  out.push_back({"conv2d", check_conv(cfg, rng)});
  out.push_back({"batchnorm", check_batchnorm(cfg, rng)});
  return out;
}

}  // namespace siamtrack
