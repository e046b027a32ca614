#include "tamseg/tam.hpp"

#include <cmath>
#include <json.hpp>

#include "tamseg/batch_norm.hpp"
#include "tamseg/checkpoint.hpp"
#include "tamseg/conv.hpp"
#include "tamseg/ops.hpp"

namespace tamseg {

namespace {

Shape kernel_shape(std::size_t out, std::size_t in, std::size_t k, std::size_t rank) {
  Shape s{out, in};
  s.insert(s.end(), rank, k);
  return s;
}

std::size_t taps(std::size_t k, std::size_t rank) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) n *= k;
  return n;
}

Shape spatial_of(const Tensor& t) { return Shape(t.shape().begin() + 1, t.shape().end()); }

Shape with_channels(std::size_t c, const Shape& spatial) {
  Shape s{c};
  s.insert(s.end(), spatial.begin(), spatial.end());
  return s;
}

}  // namespace

void TamConfig::validate() const {
  if (channels == 0 || d_embed == 0 || heads == 0) {
    throw ValidationError("TamConfig: channels, d_embed and heads must be positive");
  }
  if (d_embed % heads != 0) {
    throw ValidationError("TamConfig: d_embed " + std::to_string(d_embed) +
                          " is not divisible by heads " + std::to_string(heads));
  }
  if (spatial_rank != 2 && spatial_rank != 3) {
    throw ValidationError("TamConfig: spatial_rank must be 2 or 3, got " +
                          std::to_string(spatial_rank));
  }
}

void FeatureStack::validate() const {
  if (frames.size() < 2) {
    throw ValidationError("FeatureStack: need T >= 2 frames, got " + std::to_string(frames.size()));
  }
  for (const auto& f : frames) {
    if (!f.defined()) throw ValidationError("FeatureStack: undefined frame");
    if (f.shape() != frames.front().shape()) {
      throw ShapeError("FeatureStack: frame shapes differ: " + shape_str(frames.front().shape()) +
                       " vs " + shape_str(f.shape()));
    }
  }
  if (!frame_times.empty() && frame_times.size() != frames.size()) {
    throw ValidationError("FeatureStack: frame_times has " + std::to_string(frame_times.size()) +
                          " entries for " + std::to_string(frames.size()) + " frames");
  }
}

TamParams TamParams::init(const TamConfig& config, std::mt19937_64& rng, DType dtype) {
  config.validate();
  const std::size_t c = config.channels;
  const std::size_t d = config.d_embed;
  const std::size_t r = config.spatial_rank;
  TamParams p;
  p.w_q = fan_in_uniform(kernel_shape(d, c, 1, r), c, rng, dtype);
  p.b_q = Tensor::zeros({d}, dtype);
  p.w_k = fan_in_uniform(kernel_shape(d, c, 1, r), c, rng, dtype);
  p.b_k = Tensor::zeros({d}, dtype);
  p.w_v = fan_in_uniform(kernel_shape(d, c, 1, r), c, rng, dtype);
  p.b_v = Tensor::zeros({d}, dtype);
  p.w_g = fan_in_uniform(kernel_shape(d, d, 1, r), d, rng, dtype);
  p.b_g = Tensor::zeros({d}, dtype);
  p.w_r = fan_in_uniform(kernel_shape(c, c + d, 3, r), (c + d) * taps(3, r), rng, dtype);
  p.bn_gamma = Tensor::full({c}, 1.0, dtype);
  p.bn_beta = Tensor::zeros({c}, dtype);
  p.bn_mean = Tensor::zeros({c}, dtype);
  p.bn_var = Tensor::full({c}, 1.0, dtype);
  p.w_o = fan_in_uniform(kernel_shape(c, c, 1, r), c, rng, dtype);
  p.b_o = Tensor::zeros({c}, dtype);
  return p;
}

ParameterSet TamParams::parameters() const {
  ParameterSet set;
  set.add("w_q", w_q);
  set.add("b_q", b_q);
  set.add("w_k", w_k);
  set.add("b_k", b_k);
  set.add("w_v", w_v);
  set.add("b_v", b_v);
  set.add("w_g", w_g);
  set.add("b_g", b_g);
  set.add("w_r", w_r);
  set.add("bn_gamma", bn_gamma);
  set.add("bn_beta", bn_beta);
  set.add("bn_mean", bn_mean, false);
  set.add("bn_var", bn_var, false);
  set.add("w_o", w_o);
  set.add("b_o", b_o);
  return set;
}

Projections project_qkv(const Tensor& frame, const TamParams& params, const TamConfig& config) {
  if (frame.dim() != config.spatial_rank + 1) {
    throw ShapeError("project_qkv: expected rank-" + std::to_string(config.spatial_rank) +
                     " frame [C x spatial], got " + shape_str(frame.shape()));
  }
  if (frame.extent(0) != config.channels) {
    throw ShapeError("project_qkv: frame has " + std::to_string(frame.extent(0)) +
                     " channels, config expects " + std::to_string(config.channels));
  }
  const std::size_t n = frame.numel() / frame.extent(0);
  const Shape flat{config.d_embed, n};
  return {reshape(conv(frame, params.w_q, params.b_q), flat),
          reshape(conv(frame, params.w_k, params.b_k), flat),
          reshape(conv(frame, params.w_v, params.b_v), flat)};
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  if (x.dim() != 2) throw ShapeError("split_heads: expected [d x N], got " + shape_str(x.shape()));
  if (heads == 0 || x.extent(0) % heads != 0) {
    throw ValidationError("split_heads: width " + std::to_string(x.extent(0)) +
                          " is not divisible by " + std::to_string(heads) + " heads");
  }
  return reshape(x, {heads, x.extent(0) / heads, x.extent(1)});
}

Tensor merge_heads(const Tensor& x) {
  if (x.dim() != 3) throw ShapeError("merge_heads: expected [H x d' x N], got " + shape_str(x.shape()));
  return reshape(x, {x.extent(0) * x.extent(1), x.extent(2)});
}

Tensor head(const Tensor& split, std::size_t h) {
  Tensor one = slice(split, 0, h, 1);
  return reshape(one, {split.extent(1), split.extent(2)});
}

Tensor attention_logits(const Tensor& q_h, const Tensor& k_h) {
  if (q_h.dim() != 2 || k_h.dim() != 2 || q_h.extent(0) != k_h.extent(0)) {
    throw ShapeError("attention: query " + shape_str(q_h.shape()) + " and key " +
                     shape_str(k_h.shape()) + " widths differ");
  }
  const double width = static_cast<double>(q_h.extent(0));
  return scale(matmul(transpose(q_h), k_h), 1.0 / std::sqrt(width));
}

Tensor attention_weights(const Tensor& q_h, const Tensor& k_h) {
  return softmax(attention_logits(q_h, k_h), 1);
}

Tensor cross_time_attention(const Tensor& q_h, const Tensor& k_h, const Tensor& v_h) {
  if (v_h.dim() != 2 || v_h.extent(1) != k_h.extent(1)) {
    throw ShapeError("attention: value " + shape_str(v_h.shape()) + " does not match key " +
                     shape_str(k_h.shape()));
  }
  return matmul(v_h, transpose(attention_weights(q_h, k_h)));
}

Tensor multi_head_attention(const Projections& target, const Projections& source,
                            std::size_t heads) {
  const Tensor q = split_heads(target.q, heads);
  const Tensor k = split_heads(source.k, heads);
  const Tensor v = split_heads(source.v, heads);
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    per_head.push_back(cross_time_attention(head(q, h), head(k, h), head(v, h)));
  }
  return heads == 1 ? per_head.front() : concat(per_head, 0);
}

Tensor gate_values(const Tensor& attention, const TamParams& params) {
  return sigmoid(conv(attention, params.w_g, params.b_g));
}

Tensor gate_and_fuse(const Tensor& frame, const Tensor& attention, const TamParams& params,
                     bool training) {
  if (spatial_of(frame) != spatial_of(attention)) {
    throw ShapeError("gate_and_fuse: frame " + shape_str(frame.shape()) + " and attention " +
                     shape_str(attention.shape()) + " differ spatially");
  }
  Tensor gated = mul(attention, gate_values(attention, params));
  Tensor fused = conv(concat({frame, gated}, 0), params.w_r, Tensor());
  Tensor running_mean = params.bn_mean;
  Tensor running_var = params.bn_var;
  return relu(batch_norm(fused, params.bn_gamma, params.bn_beta, running_mean, running_var,
                         training));
}

FeatureStack tam_forward(const FeatureStack& stack, const TamParams& params,
                         const TamConfig& config, bool training) {
  config.validate();
  stack.validate();
  const Shape spatial = spatial_of(stack.frames.front());
  const std::size_t positions = shape_numel(spatial);
  if (positions > kMaxAttentionPositions) {
    throw ValidationError("tam_forward: " + std::to_string(positions) +
                          " spatial positions exceed the limit of " +
                          std::to_string(kMaxAttentionPositions) +
                          "; insert TAM at a coarser layer");
  }

  const std::size_t t_count = stack.size();
  std::vector<Projections> proj;
  proj.reserve(t_count);
  for (const auto& f : stack.frames) proj.push_back(project_qkv(f, params, config));

  const Shape attention_shape = with_channels(config.d_embed, spatial);
  FeatureStack out;
  out.frame_times = stack.frame_times;
  for (std::size_t i = 0; i < t_count; ++i) {
    Tensor total;
    for (std::size_t j = 0; j < t_count; ++j) {
      if (j == i) continue;
      Tensor a = reshape(multi_head_attention(proj[i], proj[j], config.heads), attention_shape);
      Tensor refined = gate_and_fuse(stack.frames[i], a, params, training);
      total = total.defined() ? add(total, refined) : refined;
    }
    Tensor average = scale(total, 1.0 / static_cast<double>(t_count - 1));
    out.frames.push_back(conv(average, params.w_o, params.b_o));
  }
  return out;
}

TemporalAttention::TemporalAttention(TamConfig config, std::mt19937_64& rng, DType dtype)
    : config_(config), params_(TamParams::init(config, rng, dtype)) {}

TemporalAttention::TemporalAttention(TamConfig config, TamParams params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
}

std::string tam_config_to_json(const TamConfig& config) {
  nlohmann::json j{{"channels", config.channels},
                   {"d_embed", config.d_embed},
                   {"heads", config.heads},
                   {"spatial_rank", config.spatial_rank}};
  return j.dump();
}

TamConfig tam_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TamConfig c;
    c.channels = j.at("channels").get<std::size_t>();
    c.d_embed = j.at("d_embed").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.spatial_rank = j.at("spatial_rank").get<std::size_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("TamConfig JSON: ") + e.what());
  }
}

void save_tam(const std::filesystem::path& dir, const TemporalAttention& tam) {
  save_checkpoint(dir, tam.parameters(), tam_config_to_json(tam.config()));
}

TemporalAttention load_tam(const std::filesystem::path& dir, DType dtype) {
  const TamConfig config = tam_config_from_json(read_checkpoint_config(dir));
  std::mt19937_64 rng(0);
  TemporalAttention tam(config, rng, dtype);
  load_checkpoint_tensors(dir, tam.parameters());
  return tam;
}

}  // namespace tamseg
