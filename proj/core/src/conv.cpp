#include "tamseg/conv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "op_support.hpp"

namespace tamseg {

using detail::grad_target;
using detail::maybe_record;

namespace {

// 2-D layouts are handled as 3-D with a unit leading axis.
struct Extent3 {
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t count() const { return d * h * w; }
};

Extent3 spatial_of(const Shape& shape, std::size_t first) {
  Extent3 e;
  const std::size_t rank = shape.size() - first;
  if (rank == 3) {
    e = {shape[first], shape[first + 1], shape[first + 2]};
  } else {
    e = {1, shape[first], shape[first + 1]};
  }
  return e;
}

std::size_t spatial_rank_of(const Tensor& x, const char* op) {
  if (x.dim() != 3 && x.dim() != 4) {
    throw ShapeError(std::string(op) + ": expected [C x H x W] or [C x D x H x W], got " +
                     shape_str(x.shape()));
  }
  return x.dim() - 1;
}

struct ConvGeometry {
  std::size_t c_in = 0, c_out = 0;
  Extent3 in, kernel, out;
  std::ptrdiff_t pad_d = 0, pad_h = 0, pad_w = 0;
  std::size_t stride = 1;
};

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, Padding padding) {
  if (padding == Padding::kSame) return (in + stride - 1) / stride;
  return (in - k) / stride + 1;
}

std::ptrdiff_t pad_before(std::size_t k, Padding padding) {
  return padding == Padding::kSame ? static_cast<std::ptrdiff_t>((k - 1) / 2) : 0;
}

/// [lo, hi) range of output indices whose tap lands inside [0, in).
void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::ptrdiff_t offset,
                 std::size_t& lo, std::size_t& hi) {
  // input index = o * stride + offset
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t first = 0;
  if (offset < 0) first = (-offset + s - 1) / s;
  std::ptrdiff_t last = (static_cast<std::ptrdiff_t>(in) - 1 - offset);
  last = last < 0 ? -1 : last / s;
  lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(first, 0));
  hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(last + 1, 0, static_cast<std::ptrdiff_t>(out)));
  if (hi < lo) hi = lo;
}

// Visits every (co, ci, tap, output row) with a contiguous span of valid
// output columns: fn(weight_index, out_row, in_row, ox_lo, ox_hi, col_offset)
// where input column = ox * stride + col_offset.
template <typename Fn>
void for_each_row(const ConvGeometry& g, Fn&& fn) {
  const std::size_t taps = g.kernel.count();
  for (std::size_t co = 0; co < g.c_out; ++co) {
    for (std::size_t ci = 0; ci < g.c_in; ++ci) {
      for (std::size_t a = 0; a < g.kernel.d; ++a) {
        for (std::size_t b = 0; b < g.kernel.h; ++b) {
          for (std::size_t c = 0; c < g.kernel.w; ++c) {
            const std::size_t widx = (co * g.c_in + ci) * taps + (a * g.kernel.h + b) * g.kernel.w + c;
            const std::ptrdiff_t off_w = static_cast<std::ptrdiff_t>(c) - g.pad_w;
            std::size_t ox_lo = 0, ox_hi = 0;
            valid_range(g.out.w, g.in.w, g.stride, off_w, ox_lo, ox_hi);
            if (ox_lo >= ox_hi) continue;
            for (std::size_t oz = 0; oz < g.out.d; ++oz) {
              const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(oz * g.stride + a) - g.pad_d;
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(g.in.d)) continue;
              for (std::size_t oy = 0; oy < g.out.h; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + b) - g.pad_h;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in.h)) continue;
                const std::size_t out_row = ((co * g.out.d + oz) * g.out.h + oy) * g.out.w;
                const std::size_t in_row =
                    ((ci * g.in.d + static_cast<std::size_t>(iz)) * g.in.h + static_cast<std::size_t>(iy)) *
                    g.in.w;
                fn(widx, out_row, in_row, ox_lo, ox_hi, off_w);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& kernel, const Tensor& bias, ConvOptions options) {
  detail::require_same_dtype(input, kernel, "conv");
  const std::size_t rank = spatial_rank_of(input, "conv");
  if (kernel.dim() != rank + 2) {
    throw ShapeError("conv: kernel " + shape_str(kernel.shape()) + " has spatial rank " +
                     std::to_string(kernel.dim() >= 2 ? kernel.dim() - 2 : 0) + ", input " +
                     shape_str(input.shape()) + " has " + std::to_string(rank));
  }
  if (kernel.extent(1) != input.extent(0)) {
    throw ShapeError("conv: kernel " + shape_str(kernel.shape()) + " expects " +
                     std::to_string(kernel.extent(1)) + " input channels, input " +
                     shape_str(input.shape()) + " has " + std::to_string(input.extent(0)));
  }
  if (options.stride == 0) throw ValidationError("conv: stride must be positive");
  ConvGeometry g;
  g.c_in = input.extent(0);
  g.c_out = kernel.extent(0);
  g.in = spatial_of(input.shape(), 1);
  g.kernel = spatial_of(kernel.shape(), 2);
  g.stride = options.stride;
  if (bias.defined()) {
    detail::require_same_dtype(input, bias, "conv");
    if (bias.dim() != 1 || bias.extent(0) != g.c_out) {
      throw ShapeError("conv: bias " + shape_str(bias.shape()) + " does not match " +
                       std::to_string(g.c_out) + " output channels");
    }
  }
  if (options.padding == Padding::kValid &&
      (g.kernel.d > g.in.d || g.kernel.h > g.in.h || g.kernel.w > g.in.w)) {
    throw ShapeError("conv: kernel " + shape_str(kernel.shape()) + " larger than input " +
                     shape_str(input.shape()) + " with valid padding");
  }
  g.out = {out_extent(g.in.d, g.kernel.d, g.stride, options.padding),
           out_extent(g.in.h, g.kernel.h, g.stride, options.padding),
           out_extent(g.in.w, g.kernel.w, g.stride, options.padding)};
  g.pad_d = pad_before(g.kernel.d, options.padding);
  g.pad_h = pad_before(g.kernel.h, options.padding);
  g.pad_w = pad_before(g.kernel.w, options.padding);

  Shape out_shape{g.c_out};
  if (rank == 3) out_shape.push_back(g.out.d);
  out_shape.push_back(g.out.h);
  out_shape.push_back(g.out.w);
  Tensor out = Tensor::zeros(out_shape, input.dtype());
  MacCounterScope::add(static_cast<std::uint64_t>(g.c_out) * g.c_in * g.kernel.count() *
                       g.out.count());

  const std::size_t stride = g.stride;
  dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pin = input.data<T>().data();
    const T* pk = kernel.data<T>().data();
    T* po = out.mutable_data<T>().data();
    if (bias.defined()) {
      auto pb = bias.data<T>();
      const std::size_t per = g.out.count();
      for (std::size_t co = 0; co < g.c_out; ++co) std::fill_n(po + co * per, per, pb[co]);
    }
    for_each_row(g, [&](std::size_t widx, std::size_t out_row, std::size_t in_row, std::size_t lo,
                        std::size_t hi, std::ptrdiff_t off_w) {
      const T w = pk[widx];
      T* orow = po + out_row;
      const T* irow = pin + in_row;
      if (stride == 1) {
        const T* src = irow + off_w;
        for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += w * src[ox];
      } else {
        for (std::size_t ox = lo; ox < hi; ++ox)
          orow[ox] += w * irow[static_cast<std::ptrdiff_t>(ox * stride) + off_w];
      }
    });
  });

  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  maybe_record(std::move(inputs), out, [input, kernel, bias, g](const Tensor& grad) {
    dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = grad.data<T>().data();
      const T* pin = input.data<T>().data();
      const T* pk = kernel.data<T>().data();
      auto gin = grad_target<T>(input);
      auto gk = grad_target<T>(kernel);
      const std::size_t s = g.stride;
      for_each_row(g, [&](std::size_t widx, std::size_t out_row, std::size_t in_row, std::size_t lo,
                          std::size_t hi, std::ptrdiff_t off_w) {
        const T* grow = pg + out_row;
        if (!gin.empty()) {
          const T w = pk[widx];
          T* dst = gin.data() + in_row;
          for (std::size_t ox = lo; ox < hi; ++ox)
            dst[static_cast<std::ptrdiff_t>(ox * s) + off_w] += w * grow[ox];
        }
        if (!gk.empty()) {
          const T* irow = pin + in_row;
          T acc = 0;
          for (std::size_t ox = lo; ox < hi; ++ox)
            acc += grow[ox] * irow[static_cast<std::ptrdiff_t>(ox * s) + off_w];
          gk[widx] += acc;
        }
      });
      if (bias.defined()) {
        auto gb = grad_target<T>(bias);
        if (!gb.empty()) {
          const std::size_t per = g.out.count();
          for (std::size_t co = 0; co < g.c_out; ++co) {
            T acc = 0;
            for (std::size_t i = 0; i < per; ++i) acc += pg[co * per + i];
            gb[co] += acc;
          }
        }
      }
    });
  });
  return out;
}

Tensor max_pool(const Tensor& input, const std::vector<std::size_t>& factors) {
  const std::size_t rank = spatial_rank_of(input, "max_pool");
  if (factors.size() != rank) {
    throw ShapeError("max_pool: " + std::to_string(factors.size()) + " factors for spatial rank " +
                     std::to_string(rank));
  }
  Shape out_shape{input.extent(0)};
  for (std::size_t a = 0; a < rank; ++a) {
    const std::size_t f = factors[a];
    if (f == 0 || input.extent(a + 1) % f != 0) {
      throw ShapeError("max_pool: extent " + std::to_string(input.extent(a + 1)) +
                       " not divisible by factor " + std::to_string(f));
    }
    out_shape.push_back(input.extent(a + 1) / f);
  }
  const Extent3 in = spatial_of(input.shape(), 1);
  const Extent3 out_e = spatial_of(out_shape, 1);
  const Extent3 f = rank == 3 ? Extent3{factors[0], factors[1], factors[2]}
                              : Extent3{1, factors[0], factors[1]};
  const std::size_t channels = input.extent(0);
  Tensor out = Tensor::zeros(out_shape, input.dtype());
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());

  dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pin = input.data<T>().data();
    T* po = out.mutable_data<T>().data();
    std::size_t o = 0;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t z = 0; z < out_e.d; ++z)
        for (std::size_t y = 0; y < out_e.h; ++y)
          for (std::size_t x = 0; x < out_e.w; ++x, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_i = 0;
            for (std::size_t a = 0; a < f.d; ++a)
              for (std::size_t b = 0; b < f.h; ++b)
                for (std::size_t e = 0; e < f.w; ++e) {
                  const std::size_t i =
                      ((c * in.d + z * f.d + a) * in.h + y * f.h + b) * in.w + x * f.w + e;
                  // NaN wins and sticks so that bad inputs surface downstream.
                  if ((a == 0 && b == 0 && e == 0) || (!std::isnan(best) && !(pin[i] <= best))) {
                    best = pin[i];
                    best_i = i;
                  }
                }
            po[o] = best;
            (*argmax)[o] = best_i;
          }
  });

  maybe_record({input}, out, [input, argmax](const Tensor& grad) {
    dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = grad.data<T>();
      auto gin = grad_target<T>(input);
      if (gin.empty()) return;
      for (std::size_t o = 0; o < pg.size(); ++o) gin[(*argmax)[o]] += pg[o];
    });
  });
  return out;
}

Tensor upsample_nearest(const Tensor& input, const std::vector<std::size_t>& factors) {
  const std::size_t rank = spatial_rank_of(input, "upsample_nearest");
  if (factors.size() != rank) {
    throw ShapeError("upsample_nearest: " + std::to_string(factors.size()) +
                     " factors for spatial rank " + std::to_string(rank));
  }
  Shape out_shape{input.extent(0)};
  for (std::size_t a = 0; a < rank; ++a) {
    if (factors[a] == 0) throw ShapeError("upsample_nearest: zero factor");
    out_shape.push_back(input.extent(a + 1) * factors[a]);
  }
  const Extent3 in = spatial_of(input.shape(), 1);
  const Extent3 oe = spatial_of(out_shape, 1);
  const Extent3 f = rank == 3 ? Extent3{factors[0], factors[1], factors[2]}
                              : Extent3{1, factors[0], factors[1]};
  const std::size_t channels = input.extent(0);
  Tensor out = Tensor::zeros(out_shape, input.dtype());

  auto source_index = [in, f](std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return ((c * in.d + z / f.d) * in.h + y / f.h) * in.w + x / f.w;
  };

  dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pin = input.data<T>().data();
    T* po = out.mutable_data<T>().data();
    std::size_t o = 0;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t z = 0; z < oe.d; ++z)
        for (std::size_t y = 0; y < oe.h; ++y)
          for (std::size_t x = 0; x < oe.w; ++x, ++o) po[o] = pin[source_index(c, z, y, x)];
  });

  maybe_record({input}, out, [input, oe, channels, source_index](const Tensor& grad) {
    dispatch(grad.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = grad.data<T>();
      auto gin = grad_target<T>(input);
      if (gin.empty()) return;
      std::size_t o = 0;
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t z = 0; z < oe.d; ++z)
          for (std::size_t y = 0; y < oe.h; ++y)
            for (std::size_t x = 0; x < oe.w; ++x, ++o) gin[source_index(c, z, y, x)] += pg[o];
    });
  });
  return out;
}

}  // namespace tamseg
