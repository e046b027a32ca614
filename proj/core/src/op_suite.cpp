#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "tamseg/batch_norm.hpp"
#include "tamseg/conv.hpp"
#include "tamseg/gradcheck.hpp"
#include "tamseg/ops.hpp"

namespace tamseg {
namespace {

constexpr DType kF64 = DType::kFloat64;

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), v, kF64);
}

// Values at least `margin` away from zero, so piecewise ops stay on one branch
// under a finite-difference step.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng, double margin) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double u = dist(rng);
    x = std::copysign(margin + std::abs(u), u);
  }
  return Tensor::from_values(std::move(shape), v, kF64);
}

// A shuffled ramp with spacing 0.1: no ties for max pooling.
Tensor distinct(Shape shape, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& x : v) x *= 0.1;
  return Tensor::from_values(std::move(shape), v, kF64);
}

struct OpCase {
  std::string name;
  // Builds inputs (first) and a loss over them for one seed.
  std::function<std::pair<std::vector<Tensor>, std::function<Tensor(const std::vector<Tensor>&)>>(
      std::mt19937_64&)>
      make;
};

using Inputs = std::vector<Tensor>;

// Loss = sum(f(inputs) * w) with a fixed random weight tensor w.
template <typename F>
auto weighted(F f, const Shape& out_shape, std::mt19937_64& rng) {
  Tensor w = uniform(out_shape, rng);
  return [f, w](const Inputs& in) { return sum(mul(f(in), w)); };
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, auto make) { cases.push_back({std::move(name), make}); };

  add_case("matmul", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4}, rng), uniform({4, 2}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return matmul(x[0], x[1]); }, {3, 2}, rng))};
  });
  add_case("transpose", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return transpose(x[0]); }, {4, 3}, rng))};
  });
  add_case("reshape", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 6}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return reshape(x[0], {3, 2, 2}); }, {3, 2, 2},
                             rng))};
  });
  add_case("concat", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 3}, rng), uniform({2, 2}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return concat({x[0], x[1]}, 1); }, {2, 5}, rng))};
  });
  add_case("slice", [](std::mt19937_64& rng) {
    Inputs in{uniform({4, 3}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return slice(x[0], 0, 1, 2); }, {2, 3}, rng))};
  });
  add_case("add", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 3}, rng), uniform({2, 3}, rng), uniform({1}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return add(add(x[0], x[1]), x[2]); }, {2, 3},
                             rng))};
  });
  add_case("sub", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 3}, rng), uniform({2, 3}, rng), uniform({1}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return sub(x[2], sub(x[0], x[1])); }, {2, 3},
                             rng))};
  });
  add_case("mul", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 3}, rng), uniform({2, 3}, rng), uniform({1}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return mul(mul(x[0], x[1]), x[2]); }, {2, 3},
                             rng))};
  });
  add_case("div", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 3}, rng), away_from_zero({2, 3}, rng, 0.5)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return div(x[0], x[1]); }, {2, 3}, rng))};
  });
  add_case("scale", [](std::mt19937_64& rng) {
    Inputs in{uniform({5}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return add_scalar(scale(x[0], -1.7), 0.3); },
                             {5}, rng))};
  });
  add_case("relu", [](std::mt19937_64& rng) {
    Inputs in{away_from_zero({2, 4}, rng, 0.05)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return relu(x[0]); }, {2, 4}, rng))};
  });
  add_case("sigmoid", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 4}, rng, -4, 4)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return sigmoid(x[0]); }, {2, 4}, rng))};
  });
  add_case("log", [](std::mt19937_64& rng) {
    Inputs in{uniform({6}, rng, 0.2, 3.0)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return log(x[0]); }, {6}, rng))};
  });
  add_case("clamp", [](std::mt19937_64& rng) {
    // Keep every element 0.05 away from the bounds at +-0.5.
    Inputs in{uniform({8}, rng)};
    for (std::size_t i = 0; i < 8; ++i) {
      double v = in[0].at(i);
      if (std::abs(std::abs(v) - 0.5) < 0.05) in[0].set(i, v * 1.3);
    }
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return clamp(x[0], -0.5, 0.5); }, {8}, rng))};
  });
  add_case("sum", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return mul(sum(x[0]), sum(x[0])); }, {}, rng))};
  });
  add_case("sum_axis", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4, 2}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return sum(x[0], 1); }, {3, 2}, rng))};
  });
  add_case("mean", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return mul(mean(x[0]), mean(x[0])); }, {},
                             rng))};
  });
  add_case("mean_axis", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return mean(x[0], 0); }, {4}, rng))};
  });
  add_case("softmax", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 4}, rng, -2, 2)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return softmax(x[0], 1); }, {3, 4}, rng))};
  });
  add_case("conv2d", [](std::mt19937_64& rng) {
    Inputs in{uniform({1, 5, 5}, rng), uniform({2, 1, 3, 3}, rng), uniform({2}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return conv(x[0], x[1], x[2]); }, {2, 5, 5},
                             rng))};
  });
  add_case("conv2d_strided_valid", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 6, 5}, rng), uniform({3, 2, 3, 3}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) {
                               return conv(x[0], x[1], Tensor(), {2, Padding::kValid});
                             },
                             {3, 2, 2}, rng))};
  });
  add_case("conv3d", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 3, 4, 3}, rng), uniform({2, 2, 3, 3, 3}, rng), uniform({2}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return conv(x[0], x[1], x[2]); },
                             {2, 3, 4, 3}, rng))};
  });
  add_case("max_pool", [](std::mt19937_64& rng) {
    Inputs in{distinct({2, 4, 4}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return max_pool(x[0], {2, 2}); }, {2, 2, 2},
                             rng))};
  });
  add_case("upsample_nearest", [](std::mt19937_64& rng) {
    Inputs in{uniform({2, 2, 3}, rng)};
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(
                             [](const Inputs& x) { return upsample_nearest(x[0], {2, 2}); },
                             {2, 4, 6}, rng))};
  });
  add_case("batch_norm_train", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 2, 3}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)};
    auto f = [](const Inputs& x) {
      Tensor rm = Tensor::zeros({3}, kF64);
      Tensor rv = Tensor::full({3}, 1.0, kF64);
      return batch_norm(x[0], x[1], x[2], rm, rv, true);
    };
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(f, {3, 2, 3}, rng))};
  });
  add_case("batch_norm_eval", [](std::mt19937_64& rng) {
    Inputs in{uniform({3, 2, 3}, rng), uniform({3}, rng, 0.5, 1.5), uniform({3}, rng)};
    Tensor rm = uniform({3}, rng);
    Tensor rv = uniform({3}, rng, 0.5, 2.0);
    auto f = [rm, rv](const Inputs& x) {
      Tensor m = rm;
      Tensor v = rv;
      return batch_norm(x[0], x[1], x[2], m, v, false);
    };
    return std::pair{in, std::function<Tensor(const Inputs&)>(weighted(f, {3, 2, 3}, rng))};
  });
  return cases;
}

}  // namespace

std::vector<GradCheckResult> check_op_suite(std::size_t seeds, const GradCheckOptions& options) {
  std::vector<GradCheckResult> results;
  for (const auto& c : op_cases()) {
    GradCheckResult agg;
    agg.name = c.name;
    for (std::size_t seed = 0; seed < seeds; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto [inputs, loss] = c.make(rng);
      const Inputs held = inputs;
      auto r = check_gradients(c.name, [&] { return loss(held); }, inputs, options);
      agg.checked += r.checked;
      if (agg.worst.empty() || r.max_rel_error > agg.max_rel_error) {
        agg.max_rel_error = r.max_rel_error;
        agg.worst = "seed " + std::to_string(seed) + " input " + r.worst;
      }
    }
    agg.passed = agg.max_rel_error < options.tolerance;
    results.push_back(std::move(agg));
  }
  return results;
}

}  // namespace tamseg
