#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tamseg/metrics.hpp"
#include "tamseg/tensor.hpp"

namespace tamseg {

enum class QualityTier { kGood, kMedium, kPoor };

std::string tier_name(QualityTier tier);
QualityTier parse_tier(const std::string& name);

struct QualityPreset {
  double noise = 0.0;
  std::size_t dropout_patches = 0;
};

/// good (0.05, none), medium (0.15, 2 patches), poor (0.3, 4 patches).
QualityPreset quality_preset(QualityTier tier);

enum class DropoutFrames {
  /// Every frame except ED and ES.
  kNonAnnotated,
  /// ED and ES only; intermediate frames stay intact.
  kAnnotated,
  /// Every frame, annotated ones included. Patch positions differ per frame.
  kAll,
};

/// Labels: 0 background, 1 cavity, 2 wall.
inline constexpr std::size_t kSynthClasses = 3;

/// Everything that determines a generated sequence. Shape constants are
/// fractions of the smallest spatial extent.
struct SequenceSpec {
  std::uint64_t seed = 0;
  /// H x W or D x H x W, each >= 32.
  Shape extents{64, 64};
  std::size_t frames = 3;
  /// Cavity area (volume in 3D) shrinks by this fraction from ED to ES.
  double contraction = 0.35;
  /// Speckle strength: intensity * (1 + noise * g), g ~ N(0,1) clamped to +-3.
  double noise = 0.0;
  std::size_t dropout_patches = 0;
  /// Patch edge as a fraction of the smallest extent.
  double dropout_size = 0.2;
  DropoutFrames dropout_frames = DropoutFrames::kNonAnnotated;
  /// ED cavity semi-axes are drawn from this range.
  double cavity_radius_min = 0.18;
  double cavity_radius_max = 0.26;
  double wall_thickness_min = 0.07;
  double wall_thickness_max = 0.1;
  /// Fraction of intensity lost from top to bottom row.
  double attenuation = 0.3;

  /// Spec with the tier's noise and dropout count.
  static SequenceSpec with_tier(QualityTier tier, std::uint64_t seed, Shape extents, std::size_t frames);

  /// Throws ValidationError on extents < 32, rank other than 2/3, T outside
  /// [2, 16] or out-of-range constants.
  void validate() const;
};

std::string dropout_frames_name(DropoutFrames frames);
DropoutFrames parse_dropout_frames(const std::string& name);

std::string sequence_spec_to_json(const SequenceSpec& spec);
SequenceSpec sequence_spec_from_json(const std::string& text);

inline constexpr double kBackgroundIntensity = 0.4;
inline constexpr double kCavityIntensity = 0.05;
inline constexpr double kWallIntensity = 0.9;

struct Sequence {
  /// [1 x spatial...] float32 images.
  std::vector<Tensor> frames;
  std::vector<SegmentationMask> masks;
  /// Defaults to {ED = 0, ES = T - 1}.
  std::vector<std::size_t> annotated;
};

/// Deterministic in `spec`: equal specs give bitwise-equal sequences.
Sequence generate(const SequenceSpec& spec);

/// Seed of case `index` in a dataset whose base seed is `base`.
std::uint64_t case_seed(std::uint64_t base, std::size_t index);

struct DatasetCase {
  std::string id;
  Sequence sequence;
};

/// `count` cases; case i uses the base spec with seed case_seed(spec.seed, i).
std::vector<DatasetCase> generate_dataset(const SequenceSpec& spec, std::size_t count);

/// Writes manifest.json plus case_XXX/frame_t.tnsr and mask_t.tnsr files.
/// The manifest records the spec, spacing, annotated indices and a checksum
/// per file.
void save_dataset(const std::filesystem::path& dir, const SequenceSpec& spec,
                  const std::vector<DatasetCase>& cases);

struct LoadedDataset {
  SequenceSpec spec;
  std::vector<DatasetCase> cases;
};

/// Verifies every checksum; FormatError names the offending file.
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace tamseg
