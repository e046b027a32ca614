#include "tamseg/batch_norm.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "op_support.hpp"

namespace tamseg {

using detail::grad_target;

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool training, BatchNormOptions options) {
  if (x.dim() < 2) throw ShapeError("batch_norm: expected [C x ...], got " + shape_str(x.shape()));
  const std::size_t channels = x.extent(0);
  const std::size_t per = x.numel() / channels;
  const Tensor* per_channel[] = {&gamma, &beta, &running_mean, &running_var};
  for (const Tensor* t : per_channel) {
    if (t->dim() != 1 || t->extent(0) != channels) {
      throw ShapeError("batch_norm: per-channel tensor " + shape_str(t->shape()) +
                       " does not match " + std::to_string(channels) + " channels");
    }
    detail::require_same_dtype(x, *t, "batch_norm");
  }
  if (training && per < 1) throw ShapeError("batch_norm: empty channel");

  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  // Per-channel inverse std and centre used by the forward pass.
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  auto centre = std::make_shared<std::vector<double>>(channels);

  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto pg = gamma.data<T>();
    auto pb = beta.data<T>();
    auto rm = running_mean.mutable_data<T>();
    auto rv = running_var.mutable_data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xc = px.data() + c * per;
      double mu = 0.0;
      double var = 0.0;
      if (training) {
        for (std::size_t i = 0; i < per; ++i) mu += xc[i];
        mu /= static_cast<double>(per);
        for (std::size_t i = 0; i < per; ++i) {
          const double d = xc[i] - mu;
          var += d * d;
        }
        const double biased = var / static_cast<double>(per);
        const double unbiased = per > 1 ? var / static_cast<double>(per - 1) : biased;
        rm[c] = static_cast<T>((1.0 - options.momentum) * rm[c] + options.momentum * mu);
        rv[c] = static_cast<T>((1.0 - options.momentum) * rv[c] + options.momentum * unbiased);
        var = biased;
      } else {
        mu = rm[c];
        var = rv[c];
      }
      const double inv = 1.0 / std::sqrt(var + options.eps);
      (*inv_std)[c] = inv;
      (*centre)[c] = mu;
      T* oc = po.data() + c * per;
      for (std::size_t i = 0; i < per; ++i) {
        oc[i] = static_cast<T>(pg[c] * ((xc[i] - mu) * inv) + pb[c]);
      }
    }
  });

  detail::maybe_record(
      {x, gamma, beta}, out,
      [x, gamma, beta, inv_std, centre, training, channels, per](const Tensor& g) {
        dispatch(g.dtype(), [&](auto tag) {
          using T = decltype(tag);
          auto pg = g.data<T>();
          auto px = x.data<T>();
          auto gam = gamma.data<T>();
          auto gx = grad_target<T>(x);
          auto ggamma = grad_target<T>(gamma);
          auto gbeta = grad_target<T>(beta);
          for (std::size_t c = 0; c < channels; ++c) {
            const T* gc = pg.data() + c * per;
            const T* xc = px.data() + c * per;
            const double inv = (*inv_std)[c];
            const double mu = (*centre)[c];
            double sum_g = 0.0;
            double sum_g_xhat = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
              sum_g += gc[i];
              sum_g_xhat += gc[i] * ((xc[i] - mu) * inv);
            }
            if (!ggamma.empty()) ggamma[c] += static_cast<T>(sum_g_xhat);
            if (!gbeta.empty()) gbeta[c] += static_cast<T>(sum_g);
            if (gx.empty()) continue;
            T* gxc = gx.data() + c * per;
            const double gm = gam[c];
            if (!training) {
              for (std::size_t i = 0; i < per; ++i) gxc[i] += static_cast<T>(gc[i] * gm * inv);
              continue;
            }
            const double m = static_cast<double>(per);
            for (std::size_t i = 0; i < per; ++i) {
              const double xhat = (xc[i] - mu) * inv;
              gxc[i] += static_cast<T>(gm * inv / m * (m * gc[i] - sum_g - xhat * sum_g_xhat));
            }
          }
        });
      });
  return out;
}

}  // namespace tamseg
