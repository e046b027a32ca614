#include "tamseg/grad_suites.hpp"

#include <cmath>
#include <random>

#include "tamseg/checkpoint.hpp"
#include "tamseg/loss.hpp"
#include "tamseg/metrics.hpp"
#include "tamseg/ops.hpp"
#include "tamseg/tam.hpp"
#include "tamseg/unet.hpp"

namespace tamseg {

namespace {

constexpr DType kF64 = DType::kFloat64;

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(shape, v, kF64);
}

bool is_affine(const std::string& name) {
  for (const char* suffix : {".b", "b_q", "b_k", "b_v", "b_g", "b_o", "beta", "bn_beta"}) {
    if (name.ends_with(suffix)) return true;
  }
  return false;
}

void randomize_affines(const ParameterSet& params, std::mt19937_64& rng) {
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (e.name.ends_with("gamma")) {
      copy_values(e.tensor, uniform(e.tensor.shape(), rng, 0.5, 1.5));
    } else if (is_affine(e.name)) {
      copy_values(e.tensor, uniform(e.tensor.shape(), rng, -0.5, 0.5));
    }
  }
}

GradCheckResult run(std::string name, const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                    const ParameterSet& params, const GradCheckOptions& options) {
  std::vector<Tensor> zero;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    (e.name.ends_with("b_k") ? zero : inputs).push_back(e.tensor);
  }
  GradCheckResult r = check_gradients(std::move(name), loss, inputs, options);
  for (Tensor z : zero) {
    z.zero_grad();
    z.requires_grad_();
  }
  {
    Tape tape;
    tape.backward(loss());
  }
  for (const Tensor& z : zero) {
    for (double g : z.grad().to_vector()) {
      if (!(std::abs(g) < 1e-12)) {
        r.passed = false;
        r.worst = "key bias gradient " + std::to_string(g) + " is not zero";
      }
    }
  }
  return r;
}

}  // namespace

GradCheckResult check_tam_suite(std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(seed);
  const TamConfig config{3, 4, 2, 2};
  TemporalAttention tam(config, rng, kF64);
  const ParameterSet params = tam.parameters();
  randomize_affines(params, rng);
  FeatureStack stack;
  for (int t = 0; t < 2; ++t) stack.frames.push_back(uniform({3, 4, 4}, rng, -1, 1));
  const Tensor w0 = uniform({3, 4, 4}, rng, -1, 1);
  const Tensor w1 = uniform({3, 4, 4}, rng, -1, 1);
  auto loss = [&] {
    FeatureStack out = tam.forward(stack, true);
    return add(sum(mul(out.frames[0], w0)), sum(mul(out.frames[1], w1)));
  };
  return run("tam", loss, stack.frames, params, options);
}

GradCheckResult check_end_to_end_suite(std::uint64_t seed, const GradCheckOptions& options) {
  BackboneConfig config;
  config.levels = 3;
  config.channels = {2, 3, 4};
  config.classes = 3;
  config.insertion = {Slot::kE3};
  SegmentationNet net(config, seed, kF64);
  std::mt19937_64 rng(seed);
  randomize_affines(net.parameters(), rng);
  std::vector<Tensor> frames;
  std::vector<Tensor> truth;
  for (int t = 0; t < 2; ++t) {
    frames.push_back(uniform({1, 16, 16}, rng, 0, 1));
    SegmentationMask m = SegmentationMask::zeros({16, 16});
    for (auto& l : m.labels) l = static_cast<std::uint8_t>(rng() % 3);
    truth.push_back(one_hot(m, 3, kF64));
  }
  auto loss = [&] {
    auto probs = class_probabilities(net.forward(frames, true));
    return add(compound_loss(truth[0], probs[0]), compound_loss(truth[1], probs[1]));
  };
  return run("end2end", loss, frames, net.parameters(), options);
}

}  // namespace tamseg
