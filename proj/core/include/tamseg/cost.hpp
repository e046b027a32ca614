#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tamseg/tam.hpp"
#include "tamseg/unet.hpp"

namespace tamseg {

struct LayerCost {
  std::string name;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
  /// Elements touched by pooling, normalisation, activation and softmax.
  /// Informational only; not part of MACs or FLOPs.
  std::uint64_t other_ops = 0;

  std::uint64_t flops() const { return 2 * macs; }
};

/// MACs = k^rank * c_in * c_out * prod(out_spatial); params add c_out when biased.
LayerCost conv_cost(std::size_t k, std::size_t c_in, std::size_t c_out, const Shape& out_spatial,
                    std::size_t rank, bool bias = true);

struct AttentionCost {
  std::uint64_t pairs = 0;
  /// Q^T K plus V A^T over all ordered pairs: 2 * N^2 * d_embed per pair.
  std::uint64_t macs = 0;
};

AttentionCost attention_cost(std::size_t d_embed, std::size_t positions, std::size_t heads, std::size_t frames);

/// Rows for one temporal attention layer: projections, attention, gate,
/// fusion conv (+ its batch norm) and output conv.
std::vector<LayerCost> tam_cost(const TamConfig& config, const Shape& spatial, std::size_t frames,
                                const std::string& prefix = "tam");

struct CostReport {
  std::string architecture;
  std::vector<LayerCost> rows;

  std::uint64_t total_macs() const;
  std::uint64_t total_flops() const { return 2 * total_macs(); }
  std::uint64_t total_params() const;
  std::uint64_t total_other_ops() const;

  std::string to_table() const;
  std::string to_json() const;
};

/// Exact per-layer costs of SegmentationNet(config) on T frames of `spatial`.
CostReport network_cost(const BackboneConfig& config, const Shape& spatial, std::size_t frames,
                        const std::string& architecture = "");

struct ArchitectureComparison {
  CostReport baseline;
  CostReport temporal_conv;
  CostReport attention;
  /// T^2 versus L * k^2 * (k - 1) with k = 3.
  std::uint64_t lhs = 0;
  std::uint64_t rhs = 0;
  bool inequality_holds() const { return lhs < rhs; }
  bool attention_cheaper() const { return attention.total_flops() < temporal_conv.total_flops(); }

  std::string to_table() const;
  std::string to_json() const;
};

/// C1, C2 and `attention_id` (a TAM configuration) at the widths of `base`.
ArchitectureComparison compare_architectures(const BackboneConfig& base, const Shape& spatial, std::size_t frames,
                                             const std::string& attention_id = "C3");

}  // namespace tamseg
