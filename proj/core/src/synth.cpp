#include "tamseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numbers>
#include <random>

#include "tamseg/tnsr.hpp"

namespace tamseg {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent streams so that noise settings never move the geometry.
enum Stream : std::uint64_t { kGeometry = 1, kNoise = 2, kDropout = 3 };

std::mt19937_64 stream(std::uint64_t seed, Stream s, std::uint64_t sub = 0) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ (static_cast<std::uint64_t>(s) << 32) ^ sub));
}

struct Geometry {
  std::vector<double> centre;  // per axis
  std::vector<double> radii;   // ED cavity semi-axes, per axis
  double angle = 0.0;          // rotation in the H-W plane
  double wall = 0.0;
};

Geometry draw_geometry(const SequenceSpec& spec) {
  auto rng = stream(spec.seed, kGeometry);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double m = static_cast<double>(*std::min_element(spec.extents.begin(), spec.extents.end()));
  Geometry g;
  for (std::size_t e : spec.extents) {
    g.centre.push_back(0.5 * static_cast<double>(e - 1) + (u(rng) - 0.5) * 0.1 * m);
  }
  for (std::size_t a = 0; a < spec.extents.size(); ++a) {
    g.radii.push_back((spec.cavity_radius_min + u(rng) * (spec.cavity_radius_max - spec.cavity_radius_min)) * m);
  }
  g.angle = u(rng) * std::numbers::pi;
  g.wall = std::max(2.0, (spec.wall_thickness_min + u(rng) * (spec.wall_thickness_max - spec.wall_thickness_min)) * m);
  return g;
}

/// Cavity scale at a phase in [0,1]: area (volume) shrinks linearly by `contraction`.
double phase_scale(const SequenceSpec& spec, double phase) {
  return std::pow(1.0 - spec.contraction * phase, 1.0 / static_cast<double>(spec.extents.size()));
}

SegmentationMask draw_mask(const SequenceSpec& spec, const Geometry& g, double phase) {
  const std::size_t rank = spec.extents.size();
  const double s = phase_scale(spec, phase);
  const double wall = g.wall * (1.0 + 0.3 * phase);
  std::vector<double> inner(rank), outer(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    inner[a] = g.radii[a] * s;
    outer[a] = inner[a] + wall;
  }
  SegmentationMask m = SegmentationMask::zeros(spec.extents);
  const double c = std::cos(g.angle), sn = std::sin(g.angle);
  std::vector<double> d(rank);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t a = 0; a < rank; ++a) d[a] = static_cast<double>(idx[a]) - g.centre[a];
    // Rotate the last two axes (H, W).
    const double y = d[rank - 2], x = d[rank - 1];
    d[rank - 2] = c * y + sn * x;
    d[rank - 1] = -sn * y + c * x;
    double ri = 0.0, ro = 0.0;
    for (std::size_t a = 0; a < rank; ++a) {
      ri += (d[a] / inner[a]) * (d[a] / inner[a]);
      ro += (d[a] / outer[a]) * (d[a] / outer[a]);
    }
    m.labels[i] = ri <= 1.0 ? 1 : (ro <= 1.0 ? 2 : 0);
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < spec.extents[a]) break;
      idx[a] = 0;
    }
  }
  return m;
}

}  // namespace

std::string dropout_frames_name(DropoutFrames f) {
  switch (f) {
    case DropoutFrames::kNonAnnotated: return "non_annotated";
    case DropoutFrames::kAnnotated: return "annotated";
    case DropoutFrames::kAll: return "all";
  }
  return "?";
}

DropoutFrames parse_dropout_frames(const std::string& s) {
  if (s == "all") return DropoutFrames::kAll;
  if (s == "annotated") return DropoutFrames::kAnnotated;
  if (s == "non_annotated") return DropoutFrames::kNonAnnotated;
  throw ValidationError("unknown dropout frame policy '" + s + "' (non_annotated|annotated|all)");
}

std::string tier_name(QualityTier tier) {
  switch (tier) {
    case QualityTier::kGood: return "good";
    case QualityTier::kMedium: return "medium";
    case QualityTier::kPoor: return "poor";
  }
  return "?";
}

QualityTier parse_tier(const std::string& name) {
  if (name == "good") return QualityTier::kGood;
  if (name == "medium") return QualityTier::kMedium;
  if (name == "poor") return QualityTier::kPoor;
  throw ValidationError("unknown quality tier '" + name + "' (good|medium|poor)");
}

QualityPreset quality_preset(QualityTier tier) {
  switch (tier) {
    case QualityTier::kGood: return {0.05, 0};
    case QualityTier::kMedium: return {0.15, 2};
    case QualityTier::kPoor: return {0.3, 4};
  }
  return {};
}

SequenceSpec SequenceSpec::with_tier(QualityTier tier, std::uint64_t seed, Shape extents, std::size_t frames) {
  SequenceSpec s;
  s.seed = seed;
  s.extents = std::move(extents);
  s.frames = frames;
  const QualityPreset p = quality_preset(tier);
  s.noise = p.noise;
  s.dropout_patches = p.dropout_patches;
  return s;
}

void SequenceSpec::validate() const {
  if (extents.size() != 2 && extents.size() != 3) throw ValidationError("sequence: spatial rank must be 2 or 3");
  for (std::size_t e : extents) {
    if (e < 32) throw ValidationError("sequence: every extent must be >= 32, got " + shape_str(extents));
  }
  if (frames < 2 || frames > 16) throw ValidationError("sequence: T must be in [2, 16], got " + std::to_string(frames));
  if (!(contraction >= 0.0 && contraction < 1.0)) throw ValidationError("sequence: contraction must be in [0, 1)");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ValidationError("sequence: noise must be in [0, 1]");
  if (!(dropout_size > 0.0 && dropout_size <= 1.0)) throw ValidationError("sequence: dropout_size must be in (0, 1]");
  if (!(cavity_radius_min > 0.0 && cavity_radius_min <= cavity_radius_max && cavity_radius_max <= 0.3)) {
    throw ValidationError("sequence: cavity radius range must satisfy 0 < min <= max <= 0.3");
  }
  if (!(wall_thickness_min > 0.0 && wall_thickness_min <= wall_thickness_max && wall_thickness_max <= 0.12)) {
    throw ValidationError("sequence: wall thickness range must satisfy 0 < min <= max <= 0.12");
  }
  if (!(attenuation >= 0.0 && attenuation < 1.0)) throw ValidationError("sequence: attenuation must be in [0, 1)");
}

std::string sequence_spec_to_json(const SequenceSpec& s) {
  json j{{"seed", s.seed},
         {"extents", s.extents},
         {"frames", s.frames},
         {"contraction", s.contraction},
         {"noise", s.noise},
         {"dropout_patches", s.dropout_patches},
         {"dropout_size", s.dropout_size},
         {"dropout_frames", dropout_frames_name(s.dropout_frames)},
         {"cavity_radius", {s.cavity_radius_min, s.cavity_radius_max}},
         {"wall_thickness", {s.wall_thickness_min, s.wall_thickness_max}},
         {"attenuation", s.attenuation}};
  return j.dump();
}

SequenceSpec sequence_spec_from_json(const std::string& text) {
  SequenceSpec s;
  try {
    const json j = json::parse(text);
    s.seed = j.at("seed").get<std::uint64_t>();
    s.extents = j.at("extents").get<Shape>();
    s.frames = j.at("frames").get<std::size_t>();
    s.contraction = j.at("contraction").get<double>();
    s.noise = j.at("noise").get<double>();
    s.dropout_patches = j.at("dropout_patches").get<std::size_t>();
    s.dropout_size = j.at("dropout_size").get<double>();
    s.dropout_frames = parse_dropout_frames(j.at("dropout_frames").get<std::string>());
    s.cavity_radius_min = j.at("cavity_radius").at(0).get<double>();
    s.cavity_radius_max = j.at("cavity_radius").at(1).get<double>();
    s.wall_thickness_min = j.at("wall_thickness").at(0).get<double>();
    s.wall_thickness_max = j.at("wall_thickness").at(1).get<double>();
    s.attenuation = j.at("attenuation").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("sequence spec: ") + e.what());
  }
  s.validate();
  return s;
}

Sequence generate(const SequenceSpec& spec) {
  spec.validate();
  const std::size_t rank = spec.extents.size();
  const std::size_t n = shape_numel(spec.extents);
  const std::size_t rows = spec.extents[rank - 2];
  const std::size_t row_len = spec.extents[rank - 1];
  const Geometry g = draw_geometry(spec);
  const double base[] = {kBackgroundIntensity, kCavityIntensity, kWallIntensity};

  Sequence seq;
  seq.annotated = {0, spec.frames - 1};
  Shape image_shape{1};
  image_shape.insert(image_shape.end(), spec.extents.begin(), spec.extents.end());
  const double m = static_cast<double>(*std::min_element(spec.extents.begin(), spec.extents.end()));
  const std::size_t patch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.dropout_size * m)));

  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double phase = static_cast<double>(t) / static_cast<double>(spec.frames - 1);
    SegmentationMask mask = draw_mask(spec, g, phase);
    std::vector<float> img(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = (i / row_len) % rows;
      const double depth = rows > 1 ? static_cast<double>(row) / static_cast<double>(rows - 1) : 0.0;
      img[i] = static_cast<float>(base[mask.labels[i]] * (1.0 - spec.attenuation * depth));
    }
    if (spec.noise > 0.0) {
      auto rng = stream(spec.seed, kNoise, t);
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (auto& v : img) {
        const double z = std::clamp(gauss(rng), -3.0, 3.0);
        v = static_cast<float>(std::clamp(static_cast<double>(v) * (1.0 + spec.noise * z), 0.0, 1.0));
      }
    }
    const bool annotated = t == 0 || t + 1 == spec.frames;
    const bool drop = spec.dropout_frames == DropoutFrames::kAll ||
                      (spec.dropout_frames == DropoutFrames::kAnnotated) == annotated;
    if (spec.dropout_patches > 0 && drop) {
      auto rng = stream(spec.seed, kDropout, t);
      for (std::size_t p = 0; p < spec.dropout_patches; ++p) {
        std::vector<std::size_t> lo(rank);
        for (std::size_t a = 0; a < rank; ++a) {
          const std::size_t span = spec.extents[a] > patch ? spec.extents[a] - patch + 1 : 1;
          lo[a] = static_cast<std::size_t>(rng() % span);
        }
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t i = 0; i < n; ++i) {
          bool inside = true;
          for (std::size_t a = 0; a < rank; ++a) inside = inside && idx[a] >= lo[a] && idx[a] < lo[a] + patch;
          if (inside) img[i] = 0.0f;
          for (std::size_t a = rank; a-- > 0;) {
            if (++idx[a] < spec.extents[a]) break;
            idx[a] = 0;
          }
        }
      }
    }
    std::vector<double> values(img.begin(), img.end());
    seq.frames.push_back(Tensor::from_values(image_shape, values, DType::kFloat32));
    seq.masks.push_back(std::move(mask));
  }
  return seq;
}

std::uint64_t case_seed(std::uint64_t base, std::size_t index) {
  return splitmix64(base * 0x100000001B3ULL + static_cast<std::uint64_t>(index));
}

std::vector<DatasetCase> generate_dataset(const SequenceSpec& spec, std::size_t count) {
  std::vector<DatasetCase> cases;
  for (std::size_t i = 0; i < count; ++i) {
    SequenceSpec s = spec;
    s.seed = case_seed(spec.seed, i);
    char id[32];
    std::snprintf(id, sizeof id, "case_%03zu", i);
    cases.push_back({id, generate(s)});
  }
  return cases;
}

void save_dataset(const std::filesystem::path& dir, const SequenceSpec& spec, const std::vector<DatasetCase>& cases) {
  std::filesystem::create_directories(dir);
  json manifest{{"format", "tamseg-dataset"},
                {"version", TAMSEG_VERSION},
                {"spec", json::parse(sequence_spec_to_json(spec))},
                {"classes", kSynthClasses},
                {"spacing_mm", std::vector<double>(spec.extents.size(), 1.0)},
                {"cases", json::array()}};
  for (const auto& c : cases) {
    std::filesystem::create_directories(dir / c.id);
    json entry{{"id", c.id}, {"annotated", c.sequence.annotated}, {"frames", json::array()}, {"masks", json::array()}};
    for (std::size_t t = 0; t < c.sequence.frames.size(); ++t) {
      const std::string frame_file = c.id + "/frame_" + std::to_string(t) + ".tnsr";
      const std::string bytes = encode_tnsr(c.sequence.frames[t]);
      atomic_write(dir / frame_file, bytes);
      entry["frames"].push_back({{"file", frame_file}, {"fnv1a", fnv1a_hex(bytes)}});

      const std::string mask_file = c.id + "/mask_" + std::to_string(t) + ".tnsr";
      const SegmentationMask& m = c.sequence.masks[t];
      save_mask(dir / mask_file, m);
      entry["masks"].push_back(
          {{"file", mask_file}, {"fnv1a", fnv1a_hex(encode_tnsr(ByteArray{m.shape, m.labels}))}});
    }
    manifest["cases"].push_back(entry);
  }
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  auto checked = [&](const json& item) {
    const auto path = dir / item.at("file").get<std::string>();
    std::string bytes = read_file(path);
    if (fnv1a_hex(bytes) != item.at("fnv1a").get<std::string>()) {
      throw FormatError(path.string() + ": checksum mismatch");
    }
    return std::make_pair(path, std::move(bytes));
  };
  LoadedDataset out;
  try {
    if (manifest.at("format") != "tamseg-dataset") throw FormatError(manifest_path.string() + ": not a dataset manifest");
    out.spec = sequence_spec_from_json(manifest.at("spec").dump());
    for (const auto& entry : manifest.at("cases")) {
      DatasetCase c;
      c.id = entry.at("id").get<std::string>();
      c.sequence.annotated = entry.at("annotated").get<std::vector<std::size_t>>();
      for (const auto& f : entry.at("frames")) c.sequence.frames.push_back(decode_tnsr_tensor(checked(f).second));
      for (const auto& f : entry.at("masks")) {
        const auto path = checked(f).first;
        c.sequence.masks.push_back(load_mask(path));
      }
      if (c.sequence.frames.size() != c.sequence.masks.size()) {
        throw FormatError(manifest_path.string() + ": case " + c.id + " has unequal frame and mask counts");
      }
      for (std::size_t a : c.sequence.annotated) {
        if (a >= c.sequence.frames.size()) throw FormatError(manifest_path.string() + ": annotated index out of range in " + c.id);
      }
      out.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace tamseg
