#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "tamseg/synth.hpp"
#include "tamseg/tnsr.hpp"

namespace tamseg {
namespace {

SequenceSpec clean(std::uint64_t seed, Shape extents = {64, 64}, std::size_t frames = 3) {
  SequenceSpec s;
  s.seed = seed;
  s.extents = std::move(extents);
  s.frames = frames;
  return s;
}

TEST(SynthTest, PresetsAreOrdered) {
  EXPECT_EQ(quality_preset(QualityTier::kGood).noise, 0.05);
  EXPECT_EQ(quality_preset(QualityTier::kGood).dropout_patches, 0u);
  EXPECT_EQ(quality_preset(QualityTier::kMedium).noise, 0.15);
  EXPECT_EQ(quality_preset(QualityTier::kMedium).dropout_patches, 2u);
  EXPECT_EQ(quality_preset(QualityTier::kPoor).noise, 0.3);
  EXPECT_EQ(quality_preset(QualityTier::kPoor).dropout_patches, 4u);
  EXPECT_EQ(parse_tier(tier_name(QualityTier::kMedium)), QualityTier::kMedium);
  EXPECT_THROW(parse_tier("great"), ValidationError);
}

TEST(SynthTest, SameSeedSameBytes) {
  auto spec = SequenceSpec::with_tier(QualityTier::kPoor, 42, {48, 48}, 4);
  Sequence a = generate(spec);
  Sequence b = generate(spec);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(encode_tnsr(a.frames[t]), encode_tnsr(b.frames[t]));
    EXPECT_EQ(a.masks[t].labels, b.masks[t].labels);
  }
  spec.seed = 43;
  EXPECT_NE(encode_tnsr(generate(spec).frames[0]), encode_tnsr(a.frames[0]));
}

TEST(SynthTest, Validation) {
  EXPECT_THROW(generate(clean(1, {31, 64})), ValidationError);
  EXPECT_THROW(generate(clean(1, {64, 64}, 1)), ValidationError);
  EXPECT_THROW(generate(clean(1, {64, 64}, 17)), ValidationError);
  EXPECT_THROW(generate(clean(1, {64})), ValidationError);
}

TEST(SynthTest, CleanImagesThresholdToMasks) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Sequence s = generate(clean(seed));
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      const auto img = s.frames[t].to_vector();
      for (std::size_t i = 0; i < img.size(); ++i) {
        const std::uint8_t label = img[i] < 0.15 ? 1 : (img[i] > 0.55 ? 2 : 0);
        ASSERT_EQ(label, s.masks[t].labels[i]) << seed << " frame " << t << " pixel " << i;
      }
    }
  }
}

TEST(SynthTest, EndSystolicAreaFollowsContraction) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SequenceSpec spec = clean(seed, {64, 64}, 5);
    Sequence s = generate(spec);
    const double ed = static_cast<double>(s.masks.front().count(1));
    const double es = static_cast<double>(s.masks.back().count(1));
    EXPECT_NEAR(es / ed, 1.0 - spec.contraction, 0.05 * (1.0 - spec.contraction)) << seed;
  }
  SequenceSpec vol = clean(3, {32, 40, 40}, 2);
  Sequence s = generate(vol);
  EXPECT_NEAR(static_cast<double>(s.masks[1].count(1)) / static_cast<double>(s.masks[0].count(1)), 0.65,
              0.05 * 0.65);
}

TEST(SynthTest, CavityAreaMatchesEllipse) {
  // A circular cavity: every semi-axis equal, so area = pi r^2.
  SequenceSpec spec = clean(4, {96, 96}, 2);
  spec.cavity_radius_min = spec.cavity_radius_max = 0.25;
  Sequence s = generate(spec);
  const double r = 0.25 * 96;
  EXPECT_NEAR(static_cast<double>(s.masks[0].count(1)), std::numbers::pi * r * r, 0.05 * std::numbers::pi * r * r);
}

TEST(SynthTest, TopologyAndMonotonePhase) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const bool vol = seed % 4 == 3;
    SequenceSpec spec = vol ? clean(seed, {32, 32, 32}, 4) : clean(seed, {32 + seed % 3 * 16, 32 + seed % 5 * 8}, 6);
    Sequence s = generate(spec);
    std::size_t prev = SIZE_MAX;
    for (const auto& m : s.masks) {
      m.validate(kSynthClasses);
      const std::size_t rank = m.shape.size();
      std::vector<std::size_t> strides(rank, 1);
      for (std::size_t a = rank - 1; a-- > 0;) strides[a] = strides[a + 1] * m.shape[a + 1];
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.labels[i] != 1) continue;
        for (std::size_t a = 0; a < rank; ++a) {
          const std::size_t c = (i / strides[a]) % m.shape[a];
          ASSERT_GT(c, 0u);
          ASSERT_LT(c + 1, m.shape[a]);
          ASSERT_NE(m.labels[i - strides[a]], 0) << seed;
          ASSERT_NE(m.labels[i + strides[a]], 0) << seed;
        }
      }
      const std::size_t area = m.count(1);
      EXPECT_LE(area, prev) << seed;
      EXPECT_GT(m.count(2), 0u);
      prev = area;
    }
    EXPECT_EQ(s.annotated, (std::vector<std::size_t>{0, spec.frames - 1}));
  }
}

TEST(SynthTest, DropoutPolicy) {
  auto spec = SequenceSpec::with_tier(QualityTier::kPoor, 5, {64, 64}, 3);
  spec.noise = 0.0;
  auto zeros = [](const Tensor& t) {
    std::size_t n = 0;
    for (double v : t.to_vector()) n += v == 0.0;
    return n;
  };
  Sequence s = generate(spec);
  EXPECT_EQ(zeros(s.frames[0]), 0u);
  EXPECT_EQ(zeros(s.frames[2]), 0u);
  EXPECT_GT(zeros(s.frames[1]), 0u);
  spec.dropout_frames = DropoutFrames::kAll;
  Sequence all = generate(spec);
  EXPECT_GT(zeros(all.frames[0]), 0u);
  EXPECT_GT(zeros(all.frames[2]), 0u);
  EXPECT_EQ(all.masks[0].labels, s.masks[0].labels);
}

TEST(SynthTest, SpecJsonRoundTrip) {
  auto spec = SequenceSpec::with_tier(QualityTier::kMedium, 7, {32, 48}, 5);
  spec.dropout_frames = DropoutFrames::kAll;
  EXPECT_EQ(sequence_spec_to_json(sequence_spec_from_json(sequence_spec_to_json(spec))), sequence_spec_to_json(spec));
}

TEST(DatasetTest, SaveLoadAndChecksums) {
  auto spec = SequenceSpec::with_tier(QualityTier::kMedium, 11, {32, 32}, 3);
  auto cases = generate_dataset(spec, 3);
  const auto dir = std::filesystem::temp_directory_path() / "tamseg_dataset_test";
  std::filesystem::remove_all(dir);
  save_dataset(dir, spec, cases);
  const std::string manifest = read_file(dir / "manifest.json");
  LoadedDataset back = load_dataset(dir);
  ASSERT_EQ(back.cases.size(), 3u);
  EXPECT_EQ(back.cases[1].id, "case_001");
  EXPECT_EQ(back.cases[2].sequence.frames[1].to_vector(), cases[2].sequence.frames[1].to_vector());
  EXPECT_EQ(back.cases[2].sequence.masks[2].labels, cases[2].sequence.masks[2].labels);
  EXPECT_EQ(back.cases[0].sequence.annotated, (std::vector<std::size_t>{0, 2}));

  save_dataset(dir, spec, generate_dataset(spec, 3));
  EXPECT_EQ(read_file(dir / "manifest.json"), manifest);

  atomic_write(dir / "case_001" / "frame_0.tnsr", encode_tnsr(Tensor::zeros({1, 32, 32})));
  EXPECT_THROW(load_dataset(dir), FormatError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace tamseg
