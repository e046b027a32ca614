#include "tamseg/ops.hpp"

#include <algorithm>
#include <cmath>

#include "op_support.hpp"

namespace tamseg {

using detail::grad_target;
using detail::maybe_record;
using detail::require_same_dtype;

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.dim()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(x.shape()));
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op) {
  require_same_dtype(a, b, op);
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()) + " (no implicit broadcasting)");
  }
  const Shape out_shape = (a_scalar && !b_scalar) ? b.shape() : a.shape();
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  const std::size_t n = out.numel();

  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto pa = a.data<T>();
    auto pb = b.data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t i = 0; i < n; ++i) {
      const T x = pa[a_scalar ? 0 : i];
      const T y = pb[b_scalar ? 0 : i];
      switch (kind) {
        case BinaryKind::kAdd: po[i] = x + y; break;
        case BinaryKind::kSub: po[i] = x - y; break;
        case BinaryKind::kMul: po[i] = x * y; break;
        case BinaryKind::kDiv: po[i] = x / y; break;
      }
    }
  });

  maybe_record({a, b}, out, [a, b, kind, a_scalar, b_scalar, n](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto pa = a.data<T>();
      auto pb = b.data<T>();
      auto ga = grad_target<T>(a);
      auto gb = grad_target<T>(b);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_scalar ? 0 : i;
        const std::size_t ib = b_scalar ? 0 : i;
        const T gi = pg[i];
        switch (kind) {
          case BinaryKind::kAdd:
            if (!ga.empty()) ga[ia] += gi;
            if (!gb.empty()) gb[ib] += gi;
            break;
          case BinaryKind::kSub:
            if (!ga.empty()) ga[ia] += gi;
            if (!gb.empty()) gb[ib] -= gi;
            break;
          case BinaryKind::kMul:
            if (!ga.empty()) ga[ia] += gi * pb[ib];
            if (!gb.empty()) gb[ib] += gi * pa[ia];
            break;
          case BinaryKind::kDiv:
            if (!ga.empty()) ga[ia] += gi / pb[ib];
            if (!gb.empty()) gb[ib] -= gi * pa[ia] / (pb[ib] * pb[ib]);
            break;
        }
      }
    });
  });
  return out;
}

/// Elementwise unary op; `deriv(x, y)` gives dy/dx.
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t i = 0; i < px.size(); ++i) po[i] = static_cast<T>(fwd(px[i]));
  });
  maybe_record({x}, out, [x, deriv, out](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto px = x.data<T>();
      auto py = out.data<T>();
      auto gx = grad_target<T>(x);
      if (gx.empty()) return;
      for (std::size_t i = 0; i < pg.size(); ++i) {
        gx[i] += pg[i] * static_cast<T>(deriv(px[i], py[i]));
      }
    });
  });
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  if (a.dim() != 2 || b.dim() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.extent(0);
  const std::size_t k = a.extent(1);
  const std::size_t n = b.extent(1);
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  MacCounterScope::add(static_cast<std::uint64_t>(m) * k * n);

  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>().data();
    const T* pb = b.data<T>().data();
    T* po = out.mutable_data<T>().data();
    for (std::size_t i = 0; i < m; ++i) {
      T* row = po + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = pa[i * k + p];
        const T* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      }
    }
  });

  maybe_record({a, b}, out, [a, b, m, k, n](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* pg = g.data<T>().data();
      const T* pa = a.data<T>().data();
      const T* pb = b.data<T>().data();
      auto ga = grad_target<T>(a);
      auto gb = grad_target<T>(b);
      if (!ga.empty()) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += pg[i * n + j] * pb[p * n + j];
            ga[i * k + p] += acc;
          }
        }
      }
      if (!gb.empty()) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            T* grow = gb.data() + p * n;
            const T* grad_row = pg + i * n;
            for (std::size_t j = 0; j < n; ++j) grow[j] += av * grad_row[j];
          }
        }
      }
    });
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.dim() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(x.shape()));
  const std::size_t r = x.extent(0);
  const std::size_t c = x.extent(1);
  Tensor out = Tensor::zeros({c, r}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) po[j * r + i] = px[i * c + j];
  });
  maybe_record({x}, out, [x, r, c](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto gx = grad_target<T>(x);
      if (gx.empty()) return;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += pg[j * r + i];
    });
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::zeros(std::move(shape), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::ranges::copy(x.data<T>(), out.mutable_data<T>().begin());
  });
  maybe_record({x}, out, [x](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto gx = grad_target<T>(x);
      if (gx.empty()) return;
      for (std::size_t i = 0; i < pg.size(); ++i) gx[i] += pg[i];
    });
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts.front();
  check_axis(first, axis, "concat");
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require_same_dtype(first, p, "concat");
    bool ok = p.dim() == first.dim();
    for (std::size_t d = 0; ok && d < p.dim(); ++d) {
      if (d != axis && p.extent(d) != first.extent(d)) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                       shape_str(first.shape()) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += p.extent(axis);
  }
  Tensor out = Tensor::zeros(out_shape, first.dtype());
  const AxisSplit os = split_at(out_shape, axis);

  dispatch(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto po = out.mutable_data<T>();
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.extent(axis);
      auto pp = p.data<T>();
      for (std::size_t o = 0; o < os.outer; ++o) {
        const T* src = pp.data() + o * len * os.inner;
        T* dst = po.data() + (o * os.extent + offset) * os.inner;
        std::copy(src, src + len * os.inner, dst);
      }
      offset += len;
    }
  });

  maybe_record(parts, out, [parts, axis, os](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      std::size_t offset = 0;
      for (const auto& p : parts) {
        const std::size_t len = p.extent(axis);
        auto gp = grad_target<T>(p);
        if (!gp.empty()) {
          for (std::size_t o = 0; o < os.outer; ++o) {
            const T* src = pg.data() + (o * os.extent + offset) * os.inner;
            T* dst = gp.data() + o * len * os.inner;
            for (std::size_t i = 0; i < len * os.inner; ++i) dst[i] += src[i];
          }
        }
        offset += len;
      }
    });
  });
  return out;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(x, axis, "slice");
  if (start + length > x.extent(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " + std::to_string(axis) +
                     " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  const AxisSplit xs = split_at(x.shape(), axis);

  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t o = 0; o < xs.outer; ++o) {
      const T* src = px.data() + (o * xs.extent + start) * xs.inner;
      std::copy(src, src + length * xs.inner, po.data() + o * length * xs.inner);
    }
  });

  maybe_record({x}, out, [x, xs, start, length](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto gx = grad_target<T>(x);
      if (gx.empty()) return;
      for (std::size_t o = 0; o < xs.outer; ++o) {
        T* dst = gx.data() + (o * xs.extent + start) * xs.inner;
        const T* src = pg.data() + o * length * xs.inner;
        for (std::size_t i = 0; i < length * xs.inner; ++i) dst[i] += src[i];
      }
    });
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kDiv, "div"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, [factor](auto v) { return v * factor; },
               [factor](auto, auto) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, [value](auto v) { return v + value; }, [](auto, auto) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](auto v) { return v < 0 ? decltype(v)(0) : v; },  // NaN passes through
               [](auto v, auto) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](auto v) {
        using T = decltype(v);
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](auto, auto y) { return y * (1 - y); });
}

Tensor log(const Tensor& x) {
  return unary(x, [](auto v) { return std::log(v); }, [](auto v, auto) { return 1 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ValidationError("clamp: lo must not exceed hi");
  return unary(
      x,
      [lo, hi](auto v) {
        using T = decltype(v);
        return std::clamp(v, static_cast<T>(lo), static_cast<T>(hi));
      },
      [lo, hi](auto v, auto) {
        using T = decltype(v);
        return (v >= static_cast<T>(lo) && v <= static_cast<T>(hi)) ? 1.0 : 0.0;
      });
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T acc = 0;
    for (T v : x.data<T>()) acc += v;
    out.mutable_data<T>()[0] = acc;
  });
  maybe_record({x}, out, [x](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T gv = g.data<T>()[0];
      for (auto& v : grad_target<T>(x)) v += gv;
    });
  });
  return out;
}

Tensor sum(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "sum");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  const AxisSplit xs = split_at(x.shape(), axis);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t o = 0; o < xs.outer; ++o)
      for (std::size_t e = 0; e < xs.extent; ++e)
        for (std::size_t i = 0; i < xs.inner; ++i)
          po[o * xs.inner + i] += px[(o * xs.extent + e) * xs.inner + i];
  });
  maybe_record({x}, out, [x, xs](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto gx = grad_target<T>(x);
      if (gx.empty()) return;
      for (std::size_t o = 0; o < xs.outer; ++o)
        for (std::size_t e = 0; e < xs.extent; ++e)
          for (std::size_t i = 0; i < xs.inner; ++i)
            gx[(o * xs.extent + e) * xs.inner + i] += pg[o * xs.inner + i];
    });
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "mean");
  if (x.extent(axis) == 0) throw ShapeError("mean over an empty axis");
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.extent(axis)));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const AxisSplit xs = split_at(x.shape(), axis);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto px = x.data<T>();
    auto po = out.mutable_data<T>();
    for (std::size_t o = 0; o < xs.outer; ++o) {
      for (std::size_t i = 0; i < xs.inner; ++i) {
        const std::size_t base = o * xs.extent * xs.inner + i;
        T peak = px[base];
        for (std::size_t e = 1; e < xs.extent; ++e) peak = std::max(peak, px[base + e * xs.inner]);
        T total = 0;
        for (std::size_t e = 0; e < xs.extent; ++e) {
          const T v = std::exp(px[base + e * xs.inner] - peak);
          po[base + e * xs.inner] = v;
          total += v;
        }
        for (std::size_t e = 0; e < xs.extent; ++e) po[base + e * xs.inner] /= total;
      }
    }
  });
  maybe_record({x}, out, [x, out, xs](const Tensor& g) {
    dispatch(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pg = g.data<T>();
      auto py = out.data<T>();
      auto gx = grad_target<T>(x);
      if (gx.empty()) return;
      for (std::size_t o = 0; o < xs.outer; ++o) {
        for (std::size_t i = 0; i < xs.inner; ++i) {
          const std::size_t base = o * xs.extent * xs.inner + i;
          T dot = 0;
          for (std::size_t e = 0; e < xs.extent; ++e) {
            dot += pg[base + e * xs.inner] * py[base + e * xs.inner];
          }
          for (std::size_t e = 0; e < xs.extent; ++e) {
            const std::size_t idx = base + e * xs.inner;
            gx[idx] += py[idx] * (pg[idx] - dot);
          }
        }
      }
    });
  });
  return out;
}

}  // namespace tamseg
