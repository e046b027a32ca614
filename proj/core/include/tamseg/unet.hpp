#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tamseg/params.hpp"
#include "tamseg/tam.hpp"
#include "tamseg/tensor.hpp"

namespace tamseg {

/// TAM insertion slots. E_l follows encoder level l (E5 is the bottleneck of a
/// five-level net); D_l follows the upsampling step into decoder level l.
enum class Slot { kE3, kE4, kE5, kD3, kD4 };

std::string slot_name(Slot slot);
Slot parse_slot(const std::string& name);

struct BackboneConfig {
  std::size_t spatial_rank = 2;
  std::size_t levels = 5;
  std::vector<std::size_t> channels{16, 32, 64, 128, 256};
  std::size_t in_channels = 1;
  std::size_t classes = 3;
  std::vector<Slot> insertion;
  std::size_t heads = 1;
  /// 0 means d_embed equals the channel count at each slot.
  std::size_t d_embed = 0;
  /// Configuration C2: frames stacked on an extra leading spatial axis and
  /// convolved jointly; time is never pooled.
  bool temporal_conv = false;

  /// Throws ValidationError for unknown/duplicate/unreachable slots, channel
  /// lists of the wrong length, or TAM slots on the temporal-conv variant.
  void validate() const;
  bool has_slot(Slot slot) const;
  /// Encoder/decoder level a slot sits on (E5 -> 5, D3 -> 3).
  static std::size_t slot_level(Slot slot);
  TamConfig tam_config(Slot slot) const;
  /// Required divisor of every spatial extent: 2^(levels-1).
  std::size_t extent_divisor() const;
};

std::string backbone_config_to_json(const BackboneConfig& config);
BackboneConfig backbone_config_from_json(const std::string& text);

struct NamedConfiguration {
  std::string id;
  std::string description;
  std::vector<Slot> insertion;
  bool temporal_conv = false;
};

/// The C1..C11 grid.
const std::vector<NamedConfiguration>& list_configurations();
const NamedConfiguration& find_configuration(const std::string& id);
/// `base` with the insertion set and temporal flag of configuration `id`.
BackboneConfig apply_configuration(BackboneConfig base, const std::string& id);

/// UNet over T frames with optional TAM slots (or, for C2, one network over
/// the time-stacked volume). Backbone weights are shared across frames.
/// Batch-norm statistics are per frame in training mode, so a TAM-free
/// network never mixes frames.
class SegmentationNet {
 public:
  SegmentationNet(BackboneConfig config, std::uint64_t seed, DType dtype = DType::kFloat32);

  /// frames: T tensors of [in_channels x spatial...], T in [2, 5]. Returns
  /// per-frame logits [classes x spatial...].
  std::vector<Tensor> forward(const std::vector<Tensor>& frames, bool training) const;

  const BackboneConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }
  /// All tensors in a fixed order, running BN statistics as non-trainable.
  const ParameterSet& parameters() const { return params_; }

 private:
  struct ConvBn {
    Tensor w, gamma, beta, mean, var;
  };
  struct Conv {
    Tensor w, b;
  };
  struct Block {
    ConvBn a, b;
  };
  struct Level {
    Block enc;
    Conv up;    // decoder levels only
    Block dec;  // decoder levels only
  };

  ConvBn make_conv_bn(const std::string& name, std::size_t cin, std::size_t cout, std::mt19937_64& rng);
  Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                 std::mt19937_64& rng);
  Tensor apply(const ConvBn& layer, const Tensor& x, bool training) const;
  Tensor apply(const Block& block, const Tensor& x, bool training) const;
  std::vector<Tensor> maybe_tam(Slot slot, std::vector<Tensor> feats, bool training) const;

  BackboneConfig config_;
  DType dtype_;
  std::size_t conv_rank_;
  std::vector<std::size_t> pool_;
  std::vector<Level> levels_;
  Conv head_;
  std::map<Slot, TemporalAttention> tams_;
  ParameterSet params_;
};

/// Softmax over the class axis of each logits tensor.
std::vector<Tensor> class_probabilities(const std::vector<Tensor>& logits);

void save_network(const std::filesystem::path& dir, const SegmentationNet& net);
SegmentationNet load_network(const std::filesystem::path& dir, DType dtype = DType::kFloat32);

}  // namespace tamseg
