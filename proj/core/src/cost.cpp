#include "tamseg/cost.hpp"

#include <cstdio>
#include <json.hpp>
#include <sstream>

namespace tamseg {

using nlohmann::json;

namespace {

std::uint64_t power(std::uint64_t base, std::size_t exp) {
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

std::uint64_t numel(const Shape& s) { return shape_numel(s); }

LayerCost bn_row(const std::string& name, std::size_t channels, std::uint64_t elements) {
  // Batch norm followed by ReLU: two elementwise passes.
  return {name, 0, 2 * channels, 2 * elements};
}

json row_json(const LayerCost& r) {
  return {{"name", r.name}, {"macs", r.macs}, {"flops", r.flops()}, {"params", r.params}, {"other_ops", r.other_ops}};
}

}  // namespace

LayerCost conv_cost(std::size_t k, std::size_t c_in, std::size_t c_out, const Shape& out_spatial,
                    std::size_t rank, bool bias) {
  if (k == 0 || c_in == 0 || c_out == 0 || rank == 0) throw ValidationError("conv_cost: extents must be positive");
  for (std::size_t e : out_spatial) {
    if (e == 0) throw ValidationError("conv_cost: extents must be positive");
  }
  const std::uint64_t taps = power(k, rank);
  LayerCost c;
  c.name = "conv";
  c.macs = taps * c_in * c_out * numel(out_spatial);
  c.params = taps * c_in * c_out + (bias ? c_out : 0);
  return c;
}

AttentionCost attention_cost(std::size_t d_embed, std::size_t positions, std::size_t heads, std::size_t frames) {
  if (positions == 0 || frames == 0) throw ValidationError("attention_cost: N and T must be >= 1");
  if (heads == 0 || d_embed % heads != 0) throw ValidationError("attention_cost: heads must divide d_embed");
  AttentionCost a;
  a.pairs = static_cast<std::uint64_t>(frames) * (frames - 1);
  const std::uint64_t n = positions;
  a.macs = a.pairs * 2 * n * n * d_embed;
  return a;
}

std::vector<LayerCost> tam_cost(const TamConfig& config, const Shape& spatial, std::size_t frames,
                                const std::string& prefix) {
  config.validate();
  const std::size_t c = config.channels;
  const std::size_t d = config.d_embed;
  const std::size_t r = config.spatial_rank;
  const std::uint64_t t = frames;
  const std::uint64_t pairs = t * (t > 0 ? t - 1 : 0);
  const std::uint64_t n = numel(spatial);
  std::vector<LayerCost> rows;
  auto scaled = [](LayerCost l, std::string name, std::uint64_t times) {
    l.name = std::move(name);
    l.macs *= times;
    return l;
  };
  LayerCost proj = conv_cost(1, c, d, spatial, r);
  for (const char* w : {"w_q", "w_k", "w_v"}) rows.push_back(scaled(proj, prefix + "." + w, t));
  const AttentionCost att = attention_cost(d, n, config.heads, frames);
  // Softmax over each query row, once per head and pair.
  rows.push_back({prefix + ".attention", att.macs, 0, pairs * n * n});
  LayerCost gate = scaled(conv_cost(1, d, d, spatial, r), prefix + ".w_g", pairs);
  gate.other_ops = pairs * 2 * d * n;  // sigmoid and gating product
  rows.push_back(gate);
  rows.push_back(scaled(conv_cost(3, c + d, c, spatial, r, false), prefix + ".w_r", pairs));
  rows.push_back(bn_row(prefix + ".bn", c, pairs * c * n));
  rows.push_back(scaled(conv_cost(1, c, c, spatial, r), prefix + ".w_o", t));
  return rows;
}

std::uint64_t CostReport::total_macs() const {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.macs;
  return s;
}

std::uint64_t CostReport::total_params() const {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.params;
  return s;
}

std::uint64_t CostReport::total_other_ops() const {
  std::uint64_t s = 0;
  for (const auto& r : rows) s += r.other_ops;
  return s;
}

std::string CostReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %16s %16s %12s %14s\n", "layer", "MACs", "FLOPs", "params", "other_ops");
  os << "architecture: " << architecture << '\n' << line;
  auto put = [&](const std::string& name, std::uint64_t macs, std::uint64_t flops, std::uint64_t params,
                 std::uint64_t other) {
    std::snprintf(line, sizeof line, "%-22s %16llu %16llu %12llu %14llu\n", name.c_str(),
                  static_cast<unsigned long long>(macs), static_cast<unsigned long long>(flops),
                  static_cast<unsigned long long>(params), static_cast<unsigned long long>(other));
    os << line;
  };
  for (const auto& r : rows) put(r.name, r.macs, r.flops(), r.params, r.other_ops);
  put("total", total_macs(), total_flops(), total_params(), total_other_ops());
  return os.str();
}

std::string CostReport::to_json() const {
  json j{{"architecture", architecture},
         {"total_macs", total_macs()},
         {"total_flops", total_flops()},
         {"total_params", total_params()},
         {"total_other_ops", total_other_ops()},
         {"rows", json::array()}};
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  return j.dump(2);
}

CostReport network_cost(const BackboneConfig& config, const Shape& spatial, std::size_t frames,
                        const std::string& architecture) {
  config.validate();
  if (spatial.size() != config.spatial_rank) throw ShapeError("network_cost: spatial rank mismatch");
  const std::size_t div = config.extent_divisor();
  for (std::size_t e : spatial) {
    if (e == 0 || e % div != 0) throw ShapeError("network_cost: extents must be divisible by " + std::to_string(div));
  }
  if (frames < 1) throw ValidationError("network_cost: T must be >= 1");

  const bool stacked = config.temporal_conv;
  const std::size_t rank = config.spatial_rank + (stacked ? 1 : 0);
  // Samples pushed through the backbone and the per-sample grid at each level.
  const std::uint64_t samples = stacked ? 1 : frames;
  auto level_grid = [&](std::size_t l) {
    Shape g;
    if (stacked) g.push_back(frames);
    for (std::size_t e : spatial) g.push_back(e >> l);
    return g;
  };
  auto frame_grid = [&](std::size_t l) {
    Shape g;
    for (std::size_t e : spatial) g.push_back(e >> l);
    return g;
  };

  CostReport rep;
  rep.architecture = architecture;
  auto conv_row = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout, std::size_t l,
                      bool bias) {
    LayerCost c = conv_cost(k, cin, cout, level_grid(l), rank, bias);
    c.name = name;
    c.macs *= samples;
    rep.rows.push_back(c);
  };
  auto conv_bn = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t l) {
    conv_row(name, 3, cin, cout, l, false);
    rep.rows.push_back(bn_row(name + ".bn", cout, samples * cout * numel(level_grid(l))));
  };
  auto tam = [&](Slot s, std::size_t l) {
    if (!config.has_slot(s)) return;
    for (auto& r : tam_cost(config.tam_config(s), frame_grid(l), frames, "tam." + slot_name(s))) {
      rep.rows.push_back(std::move(r));
    }
  };

  const auto& ch = config.channels;
  for (std::size_t l = 0; l < config.levels; ++l) {
    const std::string p = "enc" + std::to_string(l + 1);
    if (l > 0) rep.rows.push_back({p + ".pool", 0, 0, samples * ch[l - 1] * numel(level_grid(l - 1))});
    conv_bn(p + ".conv1", l == 0 ? config.in_channels : ch[l - 1], ch[l], l);
    conv_bn(p + ".conv2", ch[l], ch[l], l);
    for (Slot s : {Slot::kE3, Slot::kE4, Slot::kE5}) {
      if (BackboneConfig::slot_level(s) == l + 1) tam(s, l);
    }
  }
  for (std::size_t l = config.levels - 1; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l + 1);
    conv_row(p + ".up", 3, ch[l + 1], ch[l], l, true);
    rep.rows.back().other_ops = 2 * samples * ch[l] * numel(level_grid(l));  // upsample copy and ReLU
    for (Slot s : {Slot::kD3, Slot::kD4}) {
      if (BackboneConfig::slot_level(s) == l + 1) tam(s, l);
    }
    conv_bn(p + ".conv1", 2 * ch[l], ch[l], l);
    conv_bn(p + ".conv2", ch[l], ch[l], l);
  }
  conv_row("head", 1, ch[0], config.classes, 0, true);
  return rep;
}

ArchitectureComparison compare_architectures(const BackboneConfig& base, const Shape& spatial, std::size_t frames,
                                             const std::string& attention_id) {
  const auto& named = find_configuration(attention_id);
  if (named.temporal_conv || named.insertion.empty()) {
    throw ValidationError("compare_architectures: " + attention_id + " is not a temporal attention configuration");
  }
  ArchitectureComparison c;
  c.baseline = network_cost(apply_configuration(base, "C1"), spatial, frames, "C1");
  c.temporal_conv = network_cost(apply_configuration(base, "C2"), spatial, frames, "C2");
  c.attention = network_cost(apply_configuration(base, attention_id), spatial, frames, attention_id);
  const std::uint64_t k = 3;
  c.lhs = static_cast<std::uint64_t>(frames) * frames;
  c.rhs = base.levels * k * k * (k - 1);
  return c;
}

std::string ArchitectureComparison::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %18s %14s\n", "arch", "FLOPs", "params");
  os << line;
  for (const CostReport* r : {&baseline, &attention, &temporal_conv}) {
    std::snprintf(line, sizeof line, "%-6s %18llu %14llu\n", r->architecture.c_str(),
                  static_cast<unsigned long long>(r->total_flops()), static_cast<unsigned long long>(r->total_params()));
    os << line;
  }
  os << "T^2 = " << lhs << (inequality_holds() ? " < " : " >= ") << "L*k^2*(k-1) = " << rhs << '\n';
  os << attention.architecture << (attention_cheaper() ? " is cheaper than " : " is not cheaper than ")
     << temporal_conv.architecture << '\n';
  return os.str();
}

std::string ArchitectureComparison::to_json() const {
  json j{{"baseline", json::parse(baseline.to_json())},
         {"attention", json::parse(attention.to_json())},
         {"temporal_conv", json::parse(temporal_conv.to_json())},
         {"inequality", {{"t_squared", lhs}, {"l_k2_k_minus_1", rhs}, {"holds", inequality_holds()}}},
         {"attention_cheaper", attention_cheaper()}};
  return j.dump(2);
}

}  // namespace tamseg
