#include "tamseg/unet.hpp"

#include <algorithm>
#include <json.hpp>

#include "tamseg/batch_norm.hpp"
#include "tamseg/checkpoint.hpp"
#include "tamseg/conv.hpp"
#include "tamseg/ops.hpp"

namespace tamseg {

namespace {

constexpr Slot kAllSlots[] = {Slot::kE3, Slot::kE4, Slot::kE5, Slot::kD3, Slot::kD4};

bool is_encoder(Slot s) { return s == Slot::kE3 || s == Slot::kE4 || s == Slot::kE5; }

Shape kernel_shape(std::size_t out, std::size_t in, std::size_t k, std::size_t rank) {
  Shape s{out, in};
  s.insert(s.end(), rank, k);
  return s;
}

std::size_t power(std::size_t base, std::size_t exp) {
  std::size_t n = 1;
  while (exp-- > 0) n *= base;
  return n;
}

}  // namespace

std::string slot_name(Slot slot) {
  switch (slot) {
    case Slot::kE3: return "E3";
    case Slot::kE4: return "E4";
    case Slot::kE5: return "E5";
    case Slot::kD3: return "D3";
    case Slot::kD4: return "D4";
  }
  return "?";
}

Slot parse_slot(const std::string& name) {
  for (Slot s : kAllSlots) {
    if (slot_name(s) == name) return s;
  }
  throw ValidationError("unknown insertion slot '" + name + "' (expected E3, E4, E5, D3 or D4)");
}

std::size_t BackboneConfig::slot_level(Slot slot) {
  switch (slot) {
    case Slot::kE3:
    case Slot::kD3: return 3;
    case Slot::kE4:
    case Slot::kD4: return 4;
    case Slot::kE5: return 5;
  }
  return 0;
}

void BackboneConfig::validate() const {
  if (spatial_rank != 2 && spatial_rank != 3) {
    throw ValidationError("backbone: spatial_rank must be 2 or 3");
  }
  if (levels < 1) throw ValidationError("backbone: need at least one level");
  if (channels.size() != levels) {
    throw ValidationError("backbone: " + std::to_string(levels) + " levels need as many channel widths, got " +
                          std::to_string(channels.size()));
  }
  if (std::ranges::any_of(channels, [](std::size_t c) { return c == 0; }) || in_channels == 0 ||
      classes < 2) {
    throw ValidationError("backbone: channel widths must be positive and classes >= 2");
  }
  if (temporal_conv && !insertion.empty()) {
    throw ValidationError("backbone: the temporal-conv variant takes no TAM slots");
  }
  if (temporal_conv && spatial_rank != 2) {
    throw ValidationError("backbone: the temporal-conv variant is 2D+t only");
  }
  for (std::size_t i = 0; i < insertion.size(); ++i) {
    const Slot s = insertion[i];
    if (std::find(insertion.begin(), insertion.begin() + static_cast<long>(i), s) !=
        insertion.begin() + static_cast<long>(i)) {
      throw ValidationError("backbone: slot " + slot_name(s) + " listed twice");
    }
    const std::size_t level = slot_level(s);
    const std::size_t limit = is_encoder(s) ? levels : levels - 1;
    if (level > limit) {
      throw ValidationError("backbone: slot " + slot_name(s) + " does not exist in a " +
                            std::to_string(levels) + "-level network");
    }
    tam_config(s).validate();
  }
}

bool BackboneConfig::has_slot(Slot slot) const {
  return std::find(insertion.begin(), insertion.end(), slot) != insertion.end();
}

TamConfig BackboneConfig::tam_config(Slot slot) const {
  const std::size_t c = channels.at(slot_level(slot) - 1);
  return TamConfig{c, d_embed == 0 ? c : d_embed, heads, spatial_rank};
}

std::size_t BackboneConfig::extent_divisor() const { return power(2, levels - 1); }

std::string backbone_config_to_json(const BackboneConfig& c) {
  nlohmann::json slots = nlohmann::json::array();
  for (Slot s : c.insertion) slots.push_back(slot_name(s));
  nlohmann::json j{{"spatial_rank", c.spatial_rank}, {"levels", c.levels},
                   {"channels", c.channels},         {"in_channels", c.in_channels},
                   {"classes", c.classes},           {"insertion", slots},
                   {"heads", c.heads},               {"d_embed", c.d_embed},
                   {"temporal_conv", c.temporal_conv}};
  return j.dump();
}

BackboneConfig backbone_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    BackboneConfig c;
    c.spatial_rank = j.at("spatial_rank").get<std::size_t>();
    c.levels = j.at("levels").get<std::size_t>();
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    for (const auto& s : j.at("insertion")) c.insertion.push_back(parse_slot(s.get<std::string>()));
    c.heads = j.at("heads").get<std::size_t>();
    c.d_embed = j.at("d_embed").get<std::size_t>();
    c.temporal_conv = j.at("temporal_conv").get<bool>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("backbone config JSON: ") + e.what());
  }
}

const std::vector<NamedConfiguration>& list_configurations() {
  using enum Slot;
  static const std::vector<NamedConfiguration> table{
      {"C1", "UNet baseline without motion", {}, false},
      {"C2", "UNet with time as an extra convolution axis", {}, true},
      {"C3", "TAM at E5", {kE5}, false},
      {"C4", "TAM at E4 and E5", {kE4, kE5}, false},
      {"C5", "TAM at E3, E4 and E5", {kE3, kE4, kE5}, false},
      {"C6", "TAM at E5 and D4", {kE5, kD4}, false},
      {"C7", "TAM at E5, D3 and D4", {kE5, kD3, kD4}, false},
      {"C8", "TAM at E4, E5 and D4", {kE4, kE5, kD4}, false},
      {"C9", "TAM at E4, E5, D3 and D4", {kE4, kE5, kD3, kD4}, false},
      {"C10", "TAM at E3, E4, E5 and D4", {kE3, kE4, kE5, kD4}, false},
      {"C11", "TAM at E3, E4, E5, D3 and D4", {kE3, kE4, kE5, kD3, kD4}, false},
  };
  return table;
}

const NamedConfiguration& find_configuration(const std::string& id) {
  for (const auto& c : list_configurations()) {
    if (c.id == id) return c;
  }
  throw ValidationError("unknown configuration '" + id + "' (expected C1..C11)");
}

BackboneConfig apply_configuration(BackboneConfig base, const std::string& id) {
  const auto& named = find_configuration(id);
  base.insertion = named.insertion;
  base.temporal_conv = named.temporal_conv;
  return base;
}

SegmentationNet::ConvBn SegmentationNet::make_conv_bn(const std::string& name, std::size_t cin,
                                                      std::size_t cout, std::mt19937_64& rng) {
  ConvBn l;
  l.w = fan_in_uniform(kernel_shape(cout, cin, 3, conv_rank_), cin * power(3, conv_rank_), rng, dtype_);
  l.gamma = Tensor::full({cout}, 1.0, dtype_);
  l.beta = Tensor::zeros({cout}, dtype_);
  l.mean = Tensor::zeros({cout}, dtype_);
  l.var = Tensor::full({cout}, 1.0, dtype_);
  params_.add(name + ".w", l.w);
  params_.add(name + ".gamma", l.gamma);
  params_.add(name + ".beta", l.beta);
  params_.add(name + ".mean", l.mean, false);
  params_.add(name + ".var", l.var, false);
  return l;
}

SegmentationNet::Conv SegmentationNet::make_conv(const std::string& name, std::size_t cin,
                                                 std::size_t cout, std::size_t k,
                                                 std::mt19937_64& rng) {
  Conv l;
  l.w = fan_in_uniform(kernel_shape(cout, cin, k, conv_rank_), cin * power(k, conv_rank_), rng, dtype_);
  l.b = Tensor::zeros({cout}, dtype_);
  params_.add(name + ".w", l.w);
  params_.add(name + ".b", l.b);
  return l;
}

SegmentationNet::SegmentationNet(BackboneConfig config, std::uint64_t seed, DType dtype)
    : config_(std::move(config)), dtype_(dtype) {
  config_.validate();
  conv_rank_ = config_.spatial_rank + (config_.temporal_conv ? 1 : 0);
  pool_.assign(conv_rank_, 2);
  if (config_.temporal_conv) pool_[0] = 1;

  std::mt19937_64 rng(seed);
  const auto& ch = config_.channels;
  levels_.resize(config_.levels);
  for (std::size_t l = 0; l < config_.levels; ++l) {
    const std::string p = "enc" + std::to_string(l + 1);
    const std::size_t cin = l == 0 ? config_.in_channels : ch[l - 1];
    levels_[l].enc = Block{make_conv_bn(p + ".conv1", cin, ch[l], rng),
                           make_conv_bn(p + ".conv2", ch[l], ch[l], rng)};
  }
  for (std::size_t l = config_.levels - 1; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l + 1);
    levels_[l].up = make_conv(p + ".up", ch[l + 1], ch[l], 3, rng);
    levels_[l].dec = Block{make_conv_bn(p + ".conv1", 2 * ch[l], ch[l], rng),
                           make_conv_bn(p + ".conv2", ch[l], ch[l], rng)};
  }
  head_ = make_conv("head", ch[0], config_.classes, 1, rng);
  for (Slot s : kAllSlots) {
    if (!config_.has_slot(s)) continue;
    auto [it, inserted] = tams_.emplace(s, TemporalAttention(config_.tam_config(s), rng, dtype_));
    params_.append("tam." + slot_name(s) + ".", it->second.parameters());
  }
}

Tensor SegmentationNet::apply(const ConvBn& layer, const Tensor& x, bool training) const {
  Tensor mean = layer.mean;
  Tensor var = layer.var;
  return relu(batch_norm(conv(x, layer.w, Tensor()), layer.gamma, layer.beta, mean, var, training));
}

Tensor SegmentationNet::apply(const Block& block, const Tensor& x, bool training) const {
  return apply(block.b, apply(block.a, x, training), training);
}

std::vector<Tensor> SegmentationNet::maybe_tam(Slot slot, std::vector<Tensor> feats,
                                               bool training) const {
  auto it = tams_.find(slot);
  if (it == tams_.end()) return feats;
  return it->second.forward(FeatureStack{std::move(feats), {}}, training).frames;
}

std::vector<Tensor> SegmentationNet::forward(const std::vector<Tensor>& frames, bool training) const {
  if (frames.size() < 2 || frames.size() > 5) {
    throw ValidationError("backbone: T must be in [2, 5], got " + std::to_string(frames.size()));
  }
  const Shape& shape = frames.front().shape();
  if (shape.size() != config_.spatial_rank + 1 || shape[0] != config_.in_channels) {
    throw ShapeError("backbone: expected frames [" + std::to_string(config_.in_channels) +
                     " x rank-" + std::to_string(config_.spatial_rank) + " spatial], got " +
                     shape_str(shape));
  }
  const std::size_t div = config_.extent_divisor();
  for (std::size_t a = 1; a < shape.size(); ++a) {
    if (shape[a] % div != 0) {
      throw ShapeError("backbone: spatial extents " + shape_str(shape) + " must be divisible by " +
                       std::to_string(div));
    }
  }
  for (const auto& f : frames) {
    if (f.shape() != shape) {
      throw ShapeError("backbone: frame shapes differ: " + shape_str(shape) + " vs " + shape_str(f.shape()));
    }
  }

  // One sample per frame, or a single time-stacked sample for C2.
  std::vector<Tensor> feats;
  if (config_.temporal_conv) {
    Shape one{shape[0], 1};
    one.insert(one.end(), shape.begin() + 1, shape.end());
    std::vector<Tensor> parts;
    for (const auto& f : frames) parts.push_back(reshape(f, one));
    feats.push_back(concat(parts, 1));
  } else {
    feats = frames;
  }

  std::vector<std::vector<Tensor>> skips(config_.levels);
  for (std::size_t l = 0; l < config_.levels; ++l) {
    for (auto& f : feats) {
      if (l > 0) f = max_pool(f, pool_);
      f = apply(levels_[l].enc, f, training);
    }
    for (Slot s : {Slot::kE3, Slot::kE4, Slot::kE5}) {
      if (BackboneConfig::slot_level(s) == l + 1) feats = maybe_tam(s, std::move(feats), training);
    }
    skips[l] = feats;
  }
  for (std::size_t l = config_.levels - 1; l-- > 0;) {
    for (auto& f : feats) {
      f = relu(conv(upsample_nearest(f, pool_), levels_[l].up.w, levels_[l].up.b));
    }
    for (Slot s : {Slot::kD3, Slot::kD4}) {
      if (BackboneConfig::slot_level(s) == l + 1) feats = maybe_tam(s, std::move(feats), training);
    }
    for (std::size_t i = 0; i < feats.size(); ++i) {
      feats[i] = apply(levels_[l].dec, concat({feats[i], skips[l][i]}, 0), training);
    }
  }

  std::vector<Tensor> logits;
  for (const auto& f : feats) logits.push_back(conv(f, head_.w, head_.b));
  if (!config_.temporal_conv) return logits;

  std::vector<Tensor> per_frame;
  Shape out_shape{config_.classes};
  out_shape.insert(out_shape.end(), shape.begin() + 1, shape.end());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    per_frame.push_back(reshape(slice(logits.front(), 1, t, 1), out_shape));
  }
  return per_frame;
}

std::vector<Tensor> class_probabilities(const std::vector<Tensor>& logits) {
  std::vector<Tensor> out;
  out.reserve(logits.size());
  for (const auto& l : logits) out.push_back(softmax(l, 0));
  return out;
}

void save_network(const std::filesystem::path& dir, const SegmentationNet& net) {
  save_checkpoint(dir, net.parameters(), backbone_config_to_json(net.config()));
}

SegmentationNet load_network(const std::filesystem::path& dir, DType dtype) {
  SegmentationNet net(backbone_config_from_json(read_checkpoint_config(dir)), 0, dtype);
  load_checkpoint_tensors(dir, net.parameters());
  return net;
}

}  // namespace tamseg
