#include <gtest/gtest.h>

#include <filesystem>

#include "tamseg/checkpoint.hpp"
#include "tamseg/grad_suites.hpp"
#include "tamseg/unet.hpp"
#include "test_util.hpp"

namespace tamseg {
namespace {

using testing::random_tensor;

std::vector<Tensor> random_frames(std::size_t t, std::size_t size, std::mt19937_64& rng,
                                  DType dtype = DType::kFloat32) {
  std::vector<Tensor> frames;
  for (std::size_t i = 0; i < t; ++i) frames.push_back(random_tensor({1, size, size}, rng, 0, 1, dtype));
  return frames;
}

BackboneConfig small(const std::string& id) {
  BackboneConfig c;
  c.channels = {4, 4, 8, 8, 8};
  c.classes = 4;
  return apply_configuration(c, id);
}

TEST(ConfigurationTest, TableMatchesTheGrid) {
  using enum Slot;
  const auto& table = list_configurations();
  ASSERT_EQ(table.size(), 11u);
  EXPECT_TRUE(find_configuration("C1").insertion.empty());
  EXPECT_FALSE(find_configuration("C1").temporal_conv);
  EXPECT_TRUE(find_configuration("C2").temporal_conv);
  EXPECT_EQ(find_configuration("C3").insertion, (std::vector<Slot>{kE5}));
  EXPECT_EQ(find_configuration("C4").insertion, (std::vector<Slot>{kE4, kE5}));
  EXPECT_EQ(find_configuration("C5").insertion, (std::vector<Slot>{kE3, kE4, kE5}));
  EXPECT_EQ(find_configuration("C6").insertion, (std::vector<Slot>{kE5, kD4}));
  EXPECT_EQ(find_configuration("C7").insertion, (std::vector<Slot>{kE5, kD3, kD4}));
  EXPECT_EQ(find_configuration("C8").insertion, (std::vector<Slot>{kE4, kE5, kD4}));
  EXPECT_EQ(find_configuration("C9").insertion, (std::vector<Slot>{kE4, kE5, kD3, kD4}));
  EXPECT_EQ(find_configuration("C10").insertion, (std::vector<Slot>{kE3, kE4, kE5, kD4}));
  EXPECT_EQ(find_configuration("C11").insertion, (std::vector<Slot>{kE3, kE4, kE5, kD3, kD4}));
  EXPECT_THROW(find_configuration("C12"), ValidationError);
}

TEST(BackboneConfigTest, Validation) {
  BackboneConfig c;
  EXPECT_NO_THROW(c.validate());
  c.insertion = {Slot::kE5, Slot::kE5};
  EXPECT_THROW(c.validate(), ValidationError);
  c = BackboneConfig{};
  c.levels = 3;
  c.channels = {4, 8, 16};
  c.insertion = {Slot::kE4};
  EXPECT_THROW(c.validate(), ValidationError);
  c.insertion = {Slot::kD3};  // D_l needs l <= levels - 1
  EXPECT_THROW(c.validate(), ValidationError);
  c.insertion = {Slot::kE3};
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(parse_slot("E7"), ValidationError);
  EXPECT_EQ(backbone_config_to_json(backbone_config_from_json(backbone_config_to_json(small("C9")))),
            backbone_config_to_json(small("C9")));
}

TEST(BackboneTest, DefaultWidthShapeContract) {
  BackboneConfig c;
  c.classes = 4;
  SegmentationNet net(c, 1);
  std::mt19937_64 rng(1);
  auto logits = net.forward(random_frames(2, 64, rng), true);
  ASSERT_EQ(logits.size(), 2u);
  EXPECT_EQ(logits[0].shape(), (Shape{4, 64, 64}));
  for (const auto& p : class_probabilities(logits)) {
    Tensor s = sum(p, 0);
    for (double v : s.to_vector()) EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(BackboneTest, RejectsBadInputs) {
  SegmentationNet net(small("C1"), 1);
  std::mt19937_64 rng(2);
  EXPECT_THROW(net.forward(random_frames(2, 24, rng), true), ShapeError);
  EXPECT_THROW(net.forward(random_frames(1, 32, rng), true), ValidationError);
  EXPECT_THROW(net.forward(random_frames(6, 32, rng), true), ValidationError);
}

TEST(BackboneTest, BaselineFramesAreIndependent) {
  SegmentationNet net(small("C1"), 3);
  std::mt19937_64 rng(3);
  auto frames = random_frames(2, 32, rng);
  const auto before = net.forward(frames, true)[0].to_vector();
  frames[1] = random_tensor({1, 32, 32}, rng, 0, 1, DType::kFloat32);
  EXPECT_EQ(net.forward(frames, true)[0].to_vector(), before);
}

TEST(BackboneTest, TamSlotsCoupleFrames) {
  for (const char* id : {"C3", "C4", "C6", "C11"}) {
    SegmentationNet net(small(id), 4);
    std::mt19937_64 rng(4);
    auto frames = random_frames(2, 32, rng);
    const Tensor before = net.forward(frames, false)[0];
    frames[1] = random_tensor({1, 32, 32}, rng, 0, 1, DType::kFloat32);
    EXPECT_GT(testing::max_abs_diff(net.forward(frames, false)[0], before), 1e-6) << id;
  }
}

TEST(BackboneTest, ParameterCountGrowsWithSlots) {
  auto count = [](const std::string& id) { return SegmentationNet(small(id), 0).parameters().trainable_count(); };
  EXPECT_LT(count("C1"), count("C3"));
  EXPECT_LT(count("C3"), count("C4"));
  EXPECT_LT(count("C4"), count("C5"));
  EXPECT_GT(count("C2"), count("C1"));
}

TEST(TemporalConvTest, ShapeContract) {
  BackboneConfig c = small("C2");
  SegmentationNet net(c, 5);
  std::mt19937_64 rng(5);
  auto logits = net.forward(random_frames(2, 64, rng), true);
  ASSERT_EQ(logits.size(), 2u);
  EXPECT_EQ(logits[1].shape(), (Shape{4, 64, 64}));
}

TEST(TemporalConvTest, CentreSliceKernelsReduceToPerFrameNetwork) {
  SegmentationNet flat(small("C1"), 6, DType::kFloat64);
  SegmentationNet temporal(small("C2"), 7, DType::kFloat64);
  std::mt19937_64 rng(6);
  // Non-trivial running statistics so eval mode is not the identity.
  const ParameterSet& fp = flat.parameters();
  const ParameterSet& tp = temporal.parameters();
  for (const auto& e : fp.entries()) {
    Tensor src = e.tensor;
    if (e.name.ends_with(".mean")) copy_values(src, random_tensor(src.shape(), rng, -0.2, 0.2));
    if (e.name.ends_with(".var")) copy_values(src, random_tensor(src.shape(), rng, 0.5, 1.5));
    if (e.name.ends_with(".b")) copy_values(src, random_tensor(src.shape(), rng, -0.2, 0.2));
    const Tensor& dst = tp.get(e.name);
    if (dst.dim() == src.dim()) {
      copy_values(dst, src);
      continue;
    }
    // [Co x Ci x k x k] -> [Co x Ci x k x k x k], zero except the centre time tap.
    const std::size_t taps = dst.extent(2);
    const std::size_t plane = src.extent(2) * src.extent(3);
    const std::size_t pairs = src.extent(0) * src.extent(1);
    std::vector<double> w(dst.numel(), 0.0);
    for (std::size_t p = 0; p < pairs; ++p) {
      for (std::size_t i = 0; i < plane; ++i) {
        w[(p * taps + taps / 2) * plane + i] = src.at(p * plane + i);
      }
    }
    copy_values(dst, Tensor::from_values(dst.shape(), w, DType::kFloat64));
  }
  auto frames = random_frames(3, 32, rng, DType::kFloat64);
  auto a = flat.forward(frames, false);
  auto b = temporal.forward(frames, false);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_LT(testing::max_abs_diff(a[t], b[t]), 1e-10);
}

TEST(BackboneTest, EndToEndGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed : {9, 13}) {
    auto r = check_end_to_end_suite(seed);
    EXPECT_TRUE(r.passed) << seed << ": " << r.max_rel_error << " at " << r.worst;
  }
}

// With about a thousand perturbed elements some seeds put a ReLU or max-pool
// tie inside the +-1e-5 stencil; a narrower stencil checks those seeds too.
TEST(BackboneTest, EndToEndGradientsAcrossSeedsWithNarrowStencil) {
  GradCheckOptions options;
  options.step = 1e-6;
  for (std::uint64_t seed = 9; seed < 15; ++seed) {
    auto r = check_end_to_end_suite(seed, options);
    EXPECT_TRUE(r.passed) << seed << ": " << r.max_rel_error << " at " << r.worst;
  }
}

TEST(CheckpointTest, NetworkRoundTrip) {
  SegmentationNet net(small("C4"), 8);
  const auto dir = std::filesystem::temp_directory_path() / "tamseg_net_ckpt_test";
  std::filesystem::remove_all(dir);
  save_network(dir, net);
  SegmentationNet back = load_network(dir);
  EXPECT_EQ(backbone_config_to_json(back.config()), backbone_config_to_json(net.config()));
  std::mt19937_64 rng(8);
  auto frames = random_frames(2, 32, rng);
  EXPECT_EQ(back.forward(frames, false)[0].to_vector(), net.forward(frames, false)[0].to_vector());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tamseg
