#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tamseg/params.hpp"
#include "tamseg/tensor.hpp"

namespace tamseg {

struct TamConfig {
  std::size_t channels = 0;
  std::size_t d_embed = 0;
  std::size_t heads = 1;
  std::size_t spatial_rank = 2;

  std::size_t head_width() const { return d_embed / heads; }
  /// Throws ValidationError on a zero width, heads not dividing d_embed, or a
  /// spatial rank other than 2 or 3.
  void validate() const;
};

/// Largest number of spatial positions a TAM accepts per frame. The N x N
/// attention matrix belongs at coarse layers.
inline constexpr std::size_t kMaxAttentionPositions = 4096;

/// T per-frame feature maps, each [C x spatial...].
struct FeatureStack {
  std::vector<Tensor> frames;
  /// Optional normalised phase per frame; empty when unknown.
  std::vector<double> frame_times;

  std::size_t size() const { return frames.size(); }
  /// All frames defined and of one shape, T >= 2.
  void validate() const;
};

struct TamParams {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v;  // [d x C x 1..], [d]
  Tensor w_g, b_g;                      // [d x d x 1..], [d]
  Tensor w_r;                           // [C x (C+d) x 3..], no bias: BN follows
  Tensor bn_gamma, bn_beta;             // [C]
  Tensor bn_mean, bn_var;               // running statistics, [C]
  Tensor w_o, b_o;                      // [C x C x 1..], [C]

  /// Fan-in uniform weights, zero biases (the gate starts half open), BN at
  /// identity.
  static TamParams init(const TamConfig& config, std::mt19937_64& rng,
                        DType dtype = DType::kFloat32);

  /// Named view sharing storage: w_q, b_q, ..., w_o, b_o. Running BN
  /// statistics are registered as non-trainable.
  ParameterSet parameters() const;
};

struct Projections {
  Tensor q, k, v;  // [d_embed x N]
};

/// 1x1 projections of one frame, flattened over its spatial positions.
Projections project_qkv(const Tensor& frame, const TamParams& params, const TamConfig& config);

/// [d_embed x N] -> [heads x d_embed/heads x N]; head h holds rows
/// h*d'..(h+1)*d'-1.
Tensor split_heads(const Tensor& x, std::size_t heads);
/// Inverse of split_heads.
Tensor merge_heads(const Tensor& x);
/// Head h of a split tensor as [d' x N].
Tensor head(const Tensor& split, std::size_t h);

/// Scaled logits [N_query x N_key] = q^T k / sqrt(d') for one head.
Tensor attention_logits(const Tensor& q_h, const Tensor& k_h);
/// Row-wise softmax of the logits: one weight vector per query position.
Tensor attention_weights(const Tensor& q_h, const Tensor& k_h);
/// A_{i<-j} for one head: column p is the weight-averaged value columns of
/// frame j, weights from query position p of frame i. Result [d' x N].
Tensor cross_time_attention(const Tensor& q_h, const Tensor& k_h, const Tensor& v_h);

/// Concatenation of every head's cross_time_attention, [d_embed x N].
Tensor multi_head_attention(const Projections& target, const Projections& source,
                            std::size_t heads);

/// Gate values sigmoid(W_G * A + b_G) for A in spatial layout.
Tensor gate_values(const Tensor& attention, const TamParams& params);

/// ReLU(BN(W_R * concat(F_i, A * gate(A)))), with A in spatial layout
/// [d_embed x spatial...]. Training mode updates the running statistics.
Tensor gate_and_fuse(const Tensor& frame, const Tensor& attention, const TamParams& params,
                     bool training);

/// Refines every frame with cross-time attention from all other frames and
/// returns a stack of identical shapes.
FeatureStack tam_forward(const FeatureStack& stack, const TamParams& params,
                         const TamConfig& config, bool training);

/// TAM layer: configuration plus owned parameters.
class TemporalAttention {
 public:
  TemporalAttention(TamConfig config, std::mt19937_64& rng, DType dtype = DType::kFloat32);
  TemporalAttention(TamConfig config, TamParams params);

  FeatureStack forward(const FeatureStack& stack, bool training) const {
    return tam_forward(stack, params_, config_, training);
  }

  const TamConfig& config() const { return config_; }
  const TamParams& params() const { return params_; }
  TamParams& params() { return params_; }
  ParameterSet parameters() const { return params_.parameters(); }

 private:
  TamConfig config_;
  TamParams params_;
};

std::string tam_config_to_json(const TamConfig& config);
TamConfig tam_config_from_json(const std::string& text);

/// Writes manifest.json (config and tensor list) plus one .tnsr per tensor.
void save_tam(const std::filesystem::path& dir, const TemporalAttention& tam);
TemporalAttention load_tam(const std::filesystem::path& dir, DType dtype = DType::kFloat32);

}  // namespace tamseg
