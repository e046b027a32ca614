#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "tam_oracle.hpp"
#include "tamseg/conv.hpp"
#include "tamseg/gradcheck.hpp"
#include "test_util.hpp"

namespace tamseg {
namespace {

using testing::max_abs_diff;
using testing::random_tensor;

constexpr DType kF64 = DType::kFloat64;

FeatureStack random_stack(std::size_t t, Shape frame_shape, std::mt19937_64& rng,
                          DType dtype = kF64) {
  FeatureStack s;
  for (std::size_t i = 0; i < t; ++i) s.frames.push_back(random_tensor(frame_shape, rng, -1, 1, dtype));
  return s;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
  const auto va = a.to_vector();
  const auto vb = b.to_vector();
  double scale = 0.0;
  for (double v : vb) scale = std::max(scale, std::abs(v));
  double m = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(va[i] - vb[i]));
  return m / std::max(scale, 1e-30);
}

TEST(TamConfigTest, Validation) {
  EXPECT_NO_THROW((TamConfig{8, 8, 4, 2}.validate()));
  EXPECT_THROW((TamConfig{8, 6, 4, 2}.validate()), ValidationError);
  EXPECT_THROW((TamConfig{8, 8, 0, 2}.validate()), ValidationError);
  EXPECT_THROW((TamConfig{8, 8, 1, 1}.validate()), ValidationError);
}

TEST(ProjectTest, IdentityWeightsFlattenTheFrame) {
  const TamConfig cfg{3, 3, 1, 2};
  std::mt19937_64 rng(1);
  TamParams p = TamParams::init(cfg, rng, kF64);
  Tensor eye = Tensor::zeros({3, 3, 1, 1}, kF64);
  for (std::size_t c = 0; c < 3; ++c) eye.set(c * 3 + c, 1.0);
  copy_values(p.w_q, eye);
  Tensor f = random_tensor({3, 2, 4}, rng);
  Projections qkv = project_qkv(f, p, cfg);
  EXPECT_EQ(qkv.q.shape(), (Shape{3, 8}));
  EXPECT_EQ(qkv.q.to_vector(), f.to_vector());
}

TEST(ProjectTest, ShapeArithmetic) {
  const TamConfig cfg{8, 16, 1, 2};
  std::mt19937_64 rng(2);
  TamParams p = TamParams::init(cfg, rng);
  Projections qkv = project_qkv(Tensor::zeros({8, 4, 4}), p, cfg);
  EXPECT_EQ(qkv.q.shape(), (Shape{16, 16}));
  EXPECT_EQ(qkv.k.shape(), (Shape{16, 16}));
  EXPECT_EQ(qkv.v.shape(), (Shape{16, 16}));
  EXPECT_THROW(project_qkv(Tensor::zeros({7, 4, 4}), p, cfg), ShapeError);
}

TEST(ProjectTest, EachColumnIsAnAffineMapOfThatPosition) {
  const TamConfig cfg{4, 6, 1, 2};
  std::mt19937_64 rng(3);
  TamParams p = TamParams::init(cfg, rng, kF64);
  testing::randomize_tam(p, rng);
  Tensor f = random_tensor({4, 3, 3}, rng);
  Tensor q = project_qkv(f, p, cfg).q;
  for (std::size_t pos = 0; pos < 9; ++pos) {
    for (std::size_t e = 0; e < 6; ++e) {
      double expect = p.b_q.at(e);
      for (std::size_t c = 0; c < 4; ++c) expect += p.w_q.at(e * 4 + c) * f.at(c * 9 + pos);
      EXPECT_NEAR(q.at(e * 9 + pos), expect, 1e-12);
    }
  }
}

TEST(SplitHeadsTest, SingleHeadIsTheInput) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({4, 5}, rng);
  Tensor s = split_heads(x, 1);
  EXPECT_EQ(s.shape(), (Shape{1, 4, 5}));
  EXPECT_EQ(head(s, 0).to_vector(), x.to_vector());
}

TEST(SplitHeadsTest, ContiguousRowBlocksBecomeHeads) {
  Tensor x = Tensor::from_values({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
  Tensor s = split_heads(x, 2);
  EXPECT_EQ(head(s, 0).to_vector(), (std::vector<double>{0, 1, 10, 11}));
  EXPECT_EQ(head(s, 1).to_vector(), (std::vector<double>{20, 21, 30, 31}));
  EXPECT_EQ(merge_heads(s).to_vector(), x.to_vector());
  EXPECT_THROW(split_heads(x, 3), ValidationError);
}

TEST(CrossTimeAttentionTest, SingleKeyPositionCopiesTheValue) {
  std::mt19937_64 rng(5);
  Tensor q = random_tensor({3, 1}, rng);
  Tensor k = random_tensor({3, 1}, rng);
  Tensor v = random_tensor({3, 1}, rng);
  EXPECT_DOUBLE_EQ(attention_weights(q, k).item(), 1.0);
  EXPECT_EQ(cross_time_attention(q, k, v).to_vector(), v.to_vector());
}

TEST(CrossTimeAttentionTest, IdenticalKeysGiveTheRowMeanOfValues) {
  std::mt19937_64 rng(6);
  Tensor q = random_tensor({2, 5}, rng);
  Tensor k = Tensor::from_values({2, 5}, {1, 1, 1, 1, 1, -2, -2, -2, -2, -2}, kF64);
  Tensor v = random_tensor({2, 5}, rng);
  for (double w : attention_weights(q, k).to_vector()) EXPECT_NEAR(w, 0.2, 1e-15);
  Tensor out = cross_time_attention(q, k, v);
  for (std::size_t e = 0; e < 2; ++e) {
    double row_mean = 0.0;
    for (std::size_t n = 0; n < 5; ++n) row_mean += v.at(e * 5 + n) / 5.0;
    for (std::size_t p = 0; p < 5; ++p) EXPECT_NEAR(out.at(e * 5 + p), row_mean, 1e-14);
  }
}

TEST(CrossTimeAttentionTest, TwoPositionsByHand) {
  // d' = 2, N = 2.
  Tensor q = Tensor::from_values({2, 2}, {0.3, -1.0, 0.7, 0.5}, kF64);
  Tensor k = Tensor::from_values({2, 2}, {1.2, -0.4, 0.1, 0.9}, kF64);
  Tensor v = Tensor::from_values({2, 2}, {2.0, -1.0, 0.5, 3.0}, kF64);
  Tensor out = cross_time_attention(q, k, v);
  const double r = std::sqrt(2.0);
  for (std::size_t p = 0; p < 2; ++p) {
    const double s0 = (q.at(p) * k.at(0) + q.at(2 + p) * k.at(2)) / r;
    const double s1 = (q.at(p) * k.at(1) + q.at(2 + p) * k.at(3)) / r;
    const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    const double w1 = 1.0 - w0;
    EXPECT_NEAR(out.at(p), w0 * 2.0 + w1 * -1.0, 1e-14);
    EXPECT_NEAR(out.at(2 + p), w0 * 0.5 + w1 * 3.0, 1e-14);
  }
}

TEST(CrossTimeAttentionTest, WeightVectorsSumToOne) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor w = attention_weights(random_tensor({4, 16}, rng, -3, 3), random_tensor({4, 16}, rng, -3, 3));
    Tensor sums = sum(w, 1);
    for (double s : sums.to_vector()) EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CrossTimeAttentionTest, ScalingQueryAndKeyScalesLogitsBySquare) {
  std::mt19937_64 rng(8);
  Tensor q = random_tensor({4, 9}, rng);
  Tensor k = random_tensor({4, 9}, rng);
  for (double s : {0.5, 2.0, 3.0}) {
    const auto base = attention_logits(q, k).to_vector();
    const auto scaled = attention_logits(scale(q, s), scale(k, s)).to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(scaled[i], s * s * base[i], 1e-12);
  }
}

TEST(GateTest, SaturatedOpenGatePassesAttentionThrough) {
  const TamConfig cfg{2, 4, 1, 2};
  std::mt19937_64 rng(9);
  TamParams p = TamParams::init(cfg, rng, kF64);
  copy_values(p.w_g, Tensor::zeros(p.w_g.shape()));
  copy_values(p.b_g, Tensor::full({4}, 50.0));
  Tensor a = random_tensor({4, 3, 3}, rng);
  Tensor gated = mul(a, gate_values(a, p));
  EXPECT_LT(max_abs_diff(gated, a), 1e-15);
}

TEST(GateTest, ClosedGateLeavesOnlyTheFrame) {
  const TamConfig cfg{2, 4, 1, 2};
  std::mt19937_64 rng(10);
  TamParams p = TamParams::init(cfg, rng, kF64);
  testing::randomize_tam(p, rng);
  copy_values(p.b_g, Tensor::full({4}, -60.0));
  Tensor f = random_tensor({2, 3, 3}, rng);
  Tensor a1 = random_tensor({4, 3, 3}, rng);
  Tensor a2 = random_tensor({4, 3, 3}, rng, -5, 5);
  EXPECT_LT(max_abs_diff(gate_and_fuse(f, a1, p, true), gate_and_fuse(f, a2, p, true)), 1e-12);
}

TEST(GateTest, GateIsSigmoidOfThePointwiseConv) {
  const TamConfig cfg{2, 3, 1, 2};
  std::mt19937_64 rng(11);
  TamParams p = TamParams::init(cfg, rng, kF64);
  testing::randomize_tam(p, rng);
  Tensor a = random_tensor({3, 2, 2}, rng);
  Tensor g = gate_values(a, p);
  for (std::size_t e = 0; e < 3; ++e) {
    for (std::size_t pos = 0; pos < 4; ++pos) {
      double z = p.b_g.at(e);
      for (std::size_t e2 = 0; e2 < 3; ++e2) z += p.w_g.at(e * 3 + e2) * a.at(e2 * 4 + pos);
      EXPECT_NEAR(g.at(e * 4 + pos), 1.0 / (1.0 + std::exp(-z)), 1e-14);
    }
  }
  EXPECT_THROW(gate_and_fuse(Tensor::zeros({2, 3, 3}, kF64), a, p, true), ShapeError);
}

TEST(TamForwardTest, OutputShapesMatchInputs) {
  std::mt19937_64 rng(12);
  for (std::size_t t : {2, 3, 5}) {
    for (std::size_t c : {8, 16}) {
      for (std::size_t h : {1, 8}) {
        const TamConfig cfg{c, c, h, 2};
        TemporalAttention tam(cfg, rng);
        FeatureStack in = random_stack(t, {c, 4, 4}, rng, DType::kFloat32);
        FeatureStack out = tam.forward(in, true);
        ASSERT_EQ(out.size(), t);
        for (std::size_t i = 0; i < t; ++i) EXPECT_EQ(out.frames[i].shape(), in.frames[i].shape());
      }
    }
  }
}

TEST(TamForwardTest, ThreeDimensionalFrames) {
  std::mt19937_64 rng(13);
  const TamConfig cfg{4, 4, 2, 3};
  TemporalAttention tam(cfg, rng);
  FeatureStack in = random_stack(2, {4, 2, 3, 2}, rng, DType::kFloat32);
  FeatureStack out = tam.forward(in, false);
  EXPECT_EQ(out.frames[1].shape(), (Shape{4, 2, 3, 2}));
}

TEST(TamForwardTest, ContributingFrameOrderDoesNotMatter) {
  std::mt19937_64 rng(14);
  const TamConfig cfg{8, 8, 2, 2};
  TemporalAttention tam(cfg, rng);
  FeatureStack in = random_stack(3, {8, 4, 4}, rng, DType::kFloat32);
  FeatureStack swapped = in;
  std::swap(swapped.frames[1], swapped.frames[2]);
  const Tensor a = tam.forward(in, false).frames[0];
  const Tensor b = tam.forward(swapped, false).frames[0];
  EXPECT_LT(max_rel_diff(b, a), 1e-5);
}

TEST(TamForwardTest, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const std::size_t heads = seed % 2 == 0 ? 1 : 2;
    const TamConfig cfg{8, 8, heads, 2};
    TemporalAttention tam(cfg, rng, kF64);
    testing::randomize_tam(tam.params(), rng);
    FeatureStack in = random_stack(2, {8, 4, 4}, rng);
    FeatureStack out = tam.forward(in, true);
    std::vector<testing::Vec> frames;
    for (const auto& f : in.frames) frames.push_back(f.to_vector());
    const auto expect = testing::tam_oracle(frames, 8, 4, 4, tam.params(), 8, heads);
    for (std::size_t t = 0; t < 2; ++t) {
      const auto got = out.frames[t].to_vector();
      for (std::size_t i = 0; i < got.size(); ++i) {
        ASSERT_NEAR(got[i], expect[t][i], 1e-6) << "seed " << seed << " frame " << t;
      }
    }
  }
}

TEST(TamForwardTest, RejectsDegenerateStacks) {
  std::mt19937_64 rng(15);
  TemporalAttention tam(TamConfig{1, 1, 1, 2}, rng);
  FeatureStack one = random_stack(1, {1, 4, 4}, rng, DType::kFloat32);
  EXPECT_THROW(tam.forward(one, true), ValidationError);
  FeatureStack big{{Tensor::zeros({1, 65, 65}), Tensor::zeros({1, 65, 65})}, {}};
  EXPECT_THROW(tam.forward(big, true), ValidationError);
  FeatureStack ragged{{Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 4, 2})}, {}};
  EXPECT_THROW(tam.forward(ragged, true), ShapeError);
}

TEST(TamForwardTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  const TamConfig cfg{3, 4, 2, 2};
  TemporalAttention tam(cfg, rng, kF64);
  testing::randomize_tam(tam.params(), rng);
  FeatureStack in = random_stack(2, {3, 4, 4}, rng);
  Tensor w0 = random_tensor({3, 4, 4}, rng);
  Tensor w1 = random_tensor({3, 4, 4}, rng);
  std::vector<Tensor> inputs = in.frames;
  const ParameterSet params = tam.parameters();
  for (const auto& e : params.entries()) {
    if (e.trainable && e.name != "b_k") inputs.push_back(e.tensor);
  }
  auto loss = [&] {
    FeatureStack out = tam.forward(in, true);
    return add(sum(mul(out.frames[0], w0)), sum(mul(out.frames[1], w1)));
  };
  auto r = check_gradients("tam", loss, inputs);
  EXPECT_TRUE(r.passed) << r.max_rel_error << " at " << r.worst;

  // A key bias adds the same amount to every logit of a query row, which the
  // softmax cancels: its gradient is exactly zero.
  Tensor b_k = tam.params().b_k;
  b_k.zero_grad();
  {
    Tape tape;
    tape.backward(loss());
  }
  for (double g : b_k.grad().to_vector()) EXPECT_LT(std::abs(g), 1e-12);
}

TEST(TamCheckpointTest, SaveLoadRoundTrip) {
  std::mt19937_64 rng(17);
  TemporalAttention tam(TamConfig{4, 8, 2, 2}, rng);
  testing::randomize_tam(tam.params(), rng);
  const auto dir = std::filesystem::temp_directory_path() / "tamseg_tam_ckpt_test";
  std::filesystem::remove_all(dir);
  save_tam(dir, tam);
  TemporalAttention back = load_tam(dir);
  EXPECT_EQ(back.config().d_embed, 8u);
  EXPECT_EQ(back.config().heads, 2u);
  const ParameterSet saved = tam.parameters();
  const ParameterSet loaded = back.parameters();
  for (const auto& e : saved.entries()) {
    EXPECT_EQ(loaded.get(e.name).to_vector(), e.tensor.to_vector()) << e.name;
  }
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tamseg
