#include "siamtrack/correlation.hpp"

#include <algorithm>

namespace siamtrack {

std::string to_string(CorrVariant v) {
  switch (v) {
    case CorrVariant::xcorr:
      return "xcorr";
    case CorrVariant::up_xcorr:
      return "up_xcorr";
    case CorrVariant::dw_xcorr:
      return "dw_xcorr";
  }
  return "?";
}

CorrVariant corr_variant_from_string(const std::string& s) {
  if (s == "xcorr") return CorrVariant::xcorr;
  if (s == "up_xcorr" || s == "up") return CorrVariant::up_xcorr;
  if (s == "dw_xcorr" || s == "dw") return CorrVariant::dw_xcorr;
  throw ConfigError("unknown correlation variant '" + s + "'");
}

void CorrConfig::validate() const {
  if (channels < 1) throw ConfigError("correlation channels must be positive");
  if (variant == CorrVariant::up_xcorr && out_channels < 0) {
    throw ConfigError("UP out_channels must be positive");
  }
  for (int kk : {adjust_kernel, raise_kernel, fusion_kernel, output_kernel}) {
    if (kk < 1) throw ConfigError("kernel sizes must be positive");
  }
}

ParamCount count_params(const CorrConfig& cfg, int k) {
  cfg.validate();
  const std::int64_t D = cfg.channels;
  const std::int64_t ka = std::int64_t(cfg.adjust_kernel) * cfg.adjust_kernel;
  const std::int64_t kr = std::int64_t(cfg.raise_kernel) * cfg.raise_kernel;
  const std::int64_t kf = std::int64_t(cfg.fusion_kernel) * cfg.fusion_kernel;
  const std::int64_t ko = std::int64_t(cfg.output_kernel) * cfg.output_kernel;
  ParamCount p;
  switch (cfg.variant) {
    case CorrVariant::xcorr:
      p.output = 1;
      break;
    case CorrVariant::up_xcorr: {
      const std::int64_t cls_out = cfg.out_channels > 0 ? cfg.out_channels : 2 * k;
      const std::int64_t reg_out = 4 * k;
      // search convs carry a bias, raise convs too
      p.adjust_conv = 2 * (ka * D * D + D);
      p.corr_side = kr * D * (cls_out * D) + cls_out * D + kr * D * (reg_out * D) + reg_out * D;
      p.output = reg_out * reg_out + reg_out;
      break;
    }
    case CorrVariant::dw_xcorr:
      // bias-free convs ahead of normalization
      p.adjust_conv = 2 * ka * D * D;
      p.adjust_norm = 2 * 2 * D;
      p.fusion = 2 * (kf * D * D + 2 * D);
      p.output = ko * D * (2 * k) + 2 * k + ko * D * (4 * k) + 4 * k;
      break;
  }
  return p;
}

std::int64_t count_macs(const CorrConfig& cfg, int k, int hz, int hx) {
  const std::int64_t D = cfg.channels;
  auto conv = [](std::int64_t in, std::int64_t out, int kern, int size) {
    const std::int64_t o = size - kern + 1;
    return o * o * in * out * kern * kern;
  };
  switch (cfg.variant) {
    case CorrVariant::xcorr: {
      const std::int64_t o = hx - hz + 1;
      return o * o * D * hz * hz;
    }
    case CorrVariant::up_xcorr: {
      const std::int64_t cls_out = cfg.out_channels > 0 ? cfg.out_channels : 2 * k;
      const int zr = hz - cfg.raise_kernel + 1;
      const int xs = hx - cfg.adjust_kernel + 1;
      const std::int64_t o = xs - zr + 1;
      std::int64_t macs = conv(D, cls_out * D, cfg.raise_kernel, hz) +
                          conv(D, 4 * k * D, cfg.raise_kernel, hz) +
                          2 * conv(D, D, cfg.adjust_kernel, hx);
      macs += o * o * (cls_out + 4 * k) * D * zr * zr;
      macs += o * o * 4 * k * 4 * k;
      return macs;
    }
    case CorrVariant::dw_xcorr: {
      const int za = hz - cfg.adjust_kernel + 1;
      const int xa = hx - cfg.adjust_kernel + 1;
      const std::int64_t o = xa - za + 1;
      std::int64_t macs = conv(D, D, cfg.adjust_kernel, hz) + conv(D, D, cfg.adjust_kernel, hx);
      macs += o * o * D * za * za;
      macs += 2 * o * o * D * D * cfg.fusion_kernel * cfg.fusion_kernel;
      macs += o * o * D * 6 * k * cfg.output_kernel * cfg.output_kernel;
      return macs;
    }
  }
  return 0;
}

namespace {

template <typename T>
void check_pair(const Tensor<T>& zf, const Tensor<T>& xf, int z_channels) {
  if (zf.c() != z_channels) throw ShapeError("template/search channel mismatch");
  if (zf.n() != 1 && zf.n() != xf.n()) throw ShapeError("template batch must be 1 or match search");
  if (zf.h() > xf.h() || zf.w() > xf.w()) throw ShapeError("template larger than search map");
}

// out += corr(z, x) for a single channel, tap-major accumulation.
template <typename T>
void corr_accumulate(const T* z, int hz, int wz, const T* x, int wx, T* out, int ho, int wo) {
  for (int u = 0; u < hz; ++u) {
    for (int v = 0; v < wz; ++v) {
      const T zv = z[u * wz + v];
      for (int i = 0; i < ho; ++i) {
        const T* xr = x + static_cast<std::size_t>(i + u) * wx + v;
        T* orow = out + static_cast<std::size_t>(i) * wo;
        for (int j = 0; j < wo; ++j) orow[j] += zv * xr[j];
      }
    }
  }
}

// dz += corr(dy, x); dx += full-conv(dy, z).
template <typename T>
void corr_backward_accumulate(const T* dy, int ho, int wo, const T* z, int hz, int wz, const T* x,
                              int wx, T* dz, T* dx) {
  for (int u = 0; u < hz; ++u) {
    for (int v = 0; v < wz; ++v) {
      const T zv = z[u * wz + v];
      T acc = 0;
      for (int i = 0; i < ho; ++i) {
        const T* xr = x + static_cast<std::size_t>(i + u) * wx + v;
        T* dxr = dx + static_cast<std::size_t>(i + u) * wx + v;
        const T* dyr = dy + static_cast<std::size_t>(i) * wo;
        for (int j = 0; j < wo; ++j) {
          acc += dyr[j] * xr[j];
          dxr[j] += dyr[j] * zv;
        }
      }
      dz[u * wz + v] += acc;
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> grouped_xcorr(const Tensor<T>& zf, const Tensor<T>& xf) {
  const int C = xf.c();
  if (C < 1 || zf.c() % C != 0) throw ShapeError("grouped correlation channel mismatch");
  const int G = zf.c() / C;
  check_pair(zf, xf, G * C);
  const int ho = xf.h() - zf.h() + 1;
  const int wo = xf.w() - zf.w() + 1;
  Tensor<T> out(Shape{xf.n(), G, ho, wo});
  for (int n = 0; n < xf.n(); ++n) {
    const int zn = zf.n() == 1 ? 0 : n;
    for (int g = 0; g < G; ++g) {
      for (int c = 0; c < C; ++c) {
        corr_accumulate(zf.plane(zn, g * C + c), zf.h(), zf.w(), xf.plane(n, c), xf.w(),
                        out.plane(n, g), ho, wo);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> grouped_xcorr_reference(const Tensor<T>& zf, const Tensor<T>& xf) {
  const int C = xf.c();
  if (C < 1 || zf.c() % C != 0) throw ShapeError("grouped correlation channel mismatch");
  const int G = zf.c() / C;
  check_pair(zf, xf, G * C);
  const int ho = xf.h() - zf.h() + 1;
  const int wo = xf.w() - zf.w() + 1;
  Tensor<T> out(Shape{xf.n(), G, ho, wo});
  for (int n = 0; n < xf.n(); ++n) {
    const int zn = zf.n() == 1 ? 0 : n;
    for (int g = 0; g < G; ++g) {
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          T s = 0;
          for (int c = 0; c < C; ++c) {
            for (int u = 0; u < zf.h(); ++u) {
              for (int v = 0; v < zf.w(); ++v) {
                s += zf.at(zn, g * C + c, u, v) * xf.at(n, c, i + u, j + v);
              }
            }
          }
          out.at(n, g, i, j) = s;
        }
      }
    }
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> grouped_xcorr_backward(const Tensor<T>& dy, const Tensor<T>& zf,
                                                       const Tensor<T>& xf) {
  const int C = xf.c();
  const int G = zf.c() / C;
  Tensor<T> dz(zf.shape());
  Tensor<T> dx(xf.shape());
  for (int n = 0; n < xf.n(); ++n) {
    const int zn = zf.n() == 1 ? 0 : n;
    for (int g = 0; g < G; ++g) {
      for (int c = 0; c < C; ++c) {
        corr_backward_accumulate(dy.plane(n, g), dy.h(), dy.w(), zf.plane(zn, g * C + c), zf.h(),
                                 zf.w(), xf.plane(n, c), xf.w(), dz.plane(zn, g * C + c),
                                 dx.plane(n, c));
      }
    }
  }
  return {std::move(dz), std::move(dx)};
}

template <typename T>
Tensor<T> xcorr(const Tensor<T>& zf, const Tensor<T>& xf, T b) {
  check_pair(zf, xf, xf.c());
  Tensor<T> out = grouped_xcorr(zf, xf);
  for (auto& v : out.values()) v += b;
  return out;
}

template <typename T>
Tensor<T> xcorr_reference(const Tensor<T>& zf, const Tensor<T>& xf, T b) {
  check_pair(zf, xf, xf.c());
  Tensor<T> out = grouped_xcorr_reference(zf, xf);
  for (auto& v : out.values()) v += b;
  return out;
}

template <typename T>
Tensor<T> dw_xcorr(const Tensor<T>& zf, const Tensor<T>& xf) {
  check_pair(zf, xf, xf.c());
  const int ho = xf.h() - zf.h() + 1;
  const int wo = xf.w() - zf.w() + 1;
  Tensor<T> out(Shape{xf.n(), xf.c(), ho, wo});
  for (int n = 0; n < xf.n(); ++n) {
    const int zn = zf.n() == 1 ? 0 : n;
    for (int c = 0; c < xf.c(); ++c) {
      corr_accumulate(zf.plane(zn, c), zf.h(), zf.w(), xf.plane(n, c), xf.w(), out.plane(n, c), ho,
                      wo);
    }
  }
  return out;
}

template <typename T>
Tensor<T> dw_xcorr_reference(const Tensor<T>& zf, const Tensor<T>& xf) {
  check_pair(zf, xf, xf.c());
  const int ho = xf.h() - zf.h() + 1;
  const int wo = xf.w() - zf.w() + 1;
  Tensor<T> out(Shape{xf.n(), xf.c(), ho, wo});
  for (int n = 0; n < xf.n(); ++n) {
    const int zn = zf.n() == 1 ? 0 : n;
    for (int c = 0; c < xf.c(); ++c) {
      for (int i = 0; i < ho; ++i) {
        for (int j = 0; j < wo; ++j) {
          T s = 0;
          for (int u = 0; u < zf.h(); ++u) {
            for (int v = 0; v < zf.w(); ++v) s += zf.at(zn, c, u, v) * xf.at(n, c, i + u, j + v);
          }
          out.at(n, c, i, j) = s;
        }
      }
    }
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> dw_xcorr_backward(const Tensor<T>& dy, const Tensor<T>& zf,
                                                  const Tensor<T>& xf) {
  Tensor<T> dz(zf.shape());
  Tensor<T> dx(xf.shape());
  for (int n = 0; n < xf.n(); ++n) {
    const int zn = zf.n() == 1 ? 0 : n;
    for (int c = 0; c < xf.c(); ++c) {
      corr_backward_accumulate(dy.plane(n, c), dy.h(), dy.w(), zf.plane(zn, c), zf.h(), zf.w(),
                               xf.plane(n, c), xf.w(), dz.plane(zn, c), dx.plane(n, c));
    }
  }
  return {std::move(dz), std::move(dx)};
}

template <typename T>
UpXCorr<T>::UpXCorr(int channels, int out_channels, int raise_kernel)
    : raise(ConvSpec{channels, channels * out_channels, raise_kernel, 1, 0, 1, true}),
      out_channels_(out_channels) {
  if (out_channels < 1) throw ConfigError("UP out_channels must be positive");
}

template <typename T>
Tensor<T> UpXCorr<T>::forward(const Tensor<T>& zf, const Tensor<T>& xf, Cache* cache) const {
  if (zf.c() != xf.c()) throw ShapeError("template/search channel mismatch");
  Tensor<T> raised = raise.forward(zf, cache ? &cache->raise : nullptr);
  Tensor<T> out = grouped_xcorr(raised, xf);
  if (cache) {
    cache->raised = std::move(raised);
    cache->xf = xf;
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> UpXCorr<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  auto [draised, dx] = grouped_xcorr_backward(dy, cache.raised, cache.xf);
  Tensor<T> dz = raise.backward(draised, cache.raise);
  return {std::move(dz), std::move(dx)};
}

template <typename T>
UpXCorrHead<T>::UpXCorrHead(const CorrConfig& cfg, int k)
    : search_cls(ConvSpec{cfg.channels, cfg.channels, cfg.adjust_kernel, 1, 0, 1, true}),
      search_reg(ConvSpec{cfg.channels, cfg.channels, cfg.adjust_kernel, 1, 0, 1, true}),
      corr_cls(cfg.channels, cfg.out_channels > 0 ? cfg.out_channels : 2 * k, cfg.raise_kernel),
      corr_reg(cfg.channels, 4 * k, cfg.raise_kernel),
      reg_adjust(ConvSpec{4 * k, 4 * k, 1, 1, 0, 1, true}) {}

template <typename T>
void UpXCorrHead<T>::init(Rng& rng) {
  search_cls.init(rng);
  search_reg.init(rng);
  corr_cls.init(rng);
  corr_reg.init(rng);
  reg_adjust.init(rng);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> UpXCorrHead<T>::forward(const Tensor<T>& zf, const Tensor<T>& xf,
                                                        Cache* cache) const {
  Tensor<T> xc = search_cls.forward(xf, cache ? &cache->search_cls : nullptr);
  Tensor<T> xr = search_reg.forward(xf, cache ? &cache->search_reg : nullptr);
  Tensor<T> cls = corr_cls.forward(zf, xc, cache ? &cache->corr_cls : nullptr);
  Tensor<T> reg = corr_reg.forward(zf, xr, cache ? &cache->corr_reg : nullptr);
  reg = reg_adjust.forward(reg, cache ? &cache->reg_adjust : nullptr);
  return {std::move(cls), std::move(reg)};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> UpXCorrHead<T>::backward(const Tensor<T>& dcls,
                                                         const Tensor<T>& dreg,
                                                         const Cache& cache) {
  Tensor<T> dr = reg_adjust.backward(dreg, cache.reg_adjust);
  auto [dz_cls, dxc] = corr_cls.backward(dcls, cache.corr_cls);
  auto [dz_reg, dxr] = corr_reg.backward(dr, cache.corr_reg);
  Tensor<T> dx = search_cls.backward(dxc, cache.search_cls);
  dx += search_reg.backward(dxr, cache.search_reg);
  dz_cls += dz_reg;
  return {std::move(dz_cls), std::move(dx)};
}

template <typename T>
void UpXCorrHead<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  search_cls.visit(v, prefix + ".search_cls");
  search_reg.visit(v, prefix + ".search_reg");
  corr_cls.visit(v, prefix + ".template_cls");
  corr_reg.visit(v, prefix + ".template_reg");
  reg_adjust.visit(v, prefix + ".reg_adjust");
}

template <typename T>
std::size_t UpXCorrHead<T>::param_count() const {
  return search_cls.param_count() + search_reg.param_count() + corr_cls.param_count() +
         corr_reg.param_count() + reg_adjust.param_count();
}

template <typename T>
DwXCorr<T>::DwXCorr(int channels, int adjust_kernel)
    : z_adjust(ConvSpec{channels, channels, adjust_kernel, 1, 0, 1, false}, false),
      x_adjust(ConvSpec{channels, channels, adjust_kernel, 1, 0, 1, false}, false) {}

template <typename T>
void DwXCorr<T>::init(Rng& rng) {
  z_adjust.init(rng);
  x_adjust.init(rng);
}

template <typename T>
Tensor<T> DwXCorr<T>::forward(const Tensor<T>& zf, const Tensor<T>& xf, Mode mode, Cache* cache) {
  Tensor<T> z = z_adjust.forward(zf, mode, cache ? &cache->z_adjust : nullptr);
  Tensor<T> x = x_adjust.forward(xf, mode, cache ? &cache->x_adjust : nullptr);
  Tensor<T> out = dw_xcorr(z, x);
  if (cache) {
    cache->zf = std::move(z);
    cache->xf = std::move(x);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> DwXCorr<T>::backward(const Tensor<T>& dy, const Cache& cache) {
  auto [dz, dx] = dw_xcorr_backward(dy, cache.zf, cache.xf);
  return {z_adjust.backward(dz, cache.z_adjust), x_adjust.backward(dx, cache.x_adjust)};
}

template <typename T>
void DwXCorr<T>::visit(const Visitor<T>& v, const std::string& prefix) {
  z_adjust.visit(v, prefix + ".template_adjust");
  x_adjust.visit(v, prefix + ".search_adjust");
}

#define SIAMTRACK_CORR_INSTANTIATE(T)                                                           \
  template Tensor<T> xcorr(const Tensor<T>&, const Tensor<T>&, T);                             \
  template Tensor<T> xcorr_reference(const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> dw_xcorr(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> dw_xcorr_reference(const Tensor<T>&, const Tensor<T>&);                   \
  template std::pair<Tensor<T>, Tensor<T>> dw_xcorr_backward(const Tensor<T>&,                 \
                                                             const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> grouped_xcorr(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> grouped_xcorr_reference(const Tensor<T>&, const Tensor<T>&);              \
  template std::pair<Tensor<T>, Tensor<T>> grouped_xcorr_backward(                             \
      const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                                   \
  template class UpXCorr<T>;                                                                   \
  template class UpXCorrHead<T>;                                                               \
  template class DwXCorr<T>;

SIAMTRACK_CORR_INSTANTIATE(float)
SIAMTRACK_CORR_INSTANTIATE(double)

}  // namespace siamtrack
