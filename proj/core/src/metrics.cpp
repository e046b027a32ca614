#include "tamseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <tuple>
#include <sstream>

#include "tamseg/tnsr.hpp"

namespace tamseg {

using nlohmann::json;

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t a = shape.size(); a-- > 1;) strides[a - 1] = strides[a] * shape[a];
  return strides;
}

void check_compatible(const SegmentationMask& a, const SegmentationMask& b, const char* what) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
  }
  if (a.spacing != b.spacing) throw ValidationError(std::string(what) + ": spacing differs");
  if (a.labels.size() != shape_numel(a.shape) || b.labels.size() != shape_numel(b.shape)) {
    throw ShapeError(std::string(what) + ": label count does not match shape");
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

SegmentationMask SegmentationMask::zeros(Shape shape, std::vector<double> spacing) {
  SegmentationMask m;
  if (spacing.empty()) spacing.assign(shape.size(), 1.0);
  m.labels.assign(shape_numel(shape), 0);
  m.shape = std::move(shape);
  m.spacing = std::move(spacing);
  return m;
}

void SegmentationMask::validate(std::size_t classes) const {
  if (shape.empty()) throw ShapeError("mask: rank 0");
  if (labels.size() != shape_numel(shape)) throw ShapeError("mask: label count does not match " + shape_str(shape));
  if (spacing.size() != shape.size()) throw ValidationError("mask: need one spacing value per axis");
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("mask: spacing must be positive");
  }
  for (auto l : labels) {
    if (l >= classes) throw ValidationError("mask: label " + std::to_string(l) + " >= class count " + std::to_string(classes));
  }
}

std::size_t SegmentationMask::count(std::uint8_t cls) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls));
}

Tensor one_hot(const SegmentationMask& mask, std::size_t classes, DType dtype) {
  mask.validate(classes);
  Shape shape{classes};
  shape.insert(shape.end(), mask.shape.begin(), mask.shape.end());
  const std::size_t n = mask.size();
  std::vector<double> v(classes * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[mask.labels[i] * n + i] = 1.0;
  return Tensor::from_values(shape, v, dtype);
}

SegmentationMask argmax_labels(const Tensor& scores, std::vector<double> spacing) {
  if (scores.dim() < 2) throw ShapeError("argmax_labels: need [classes x spatial...]");
  const std::size_t classes = scores.extent(0);
  if (classes > 256) throw ValidationError("argmax_labels: more than 256 classes");
  Shape spatial(scores.shape().begin() + 1, scores.shape().end());
  SegmentationMask m = SegmentationMask::zeros(spatial, std::move(spacing));
  const auto v = scores.to_vector();
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (v[c * n + i] > v[best * n + i]) best = c;
    }
    m.labels[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

double dsc(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls) {
  check_compatible(a, b, "dsc");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.labels[i] == cls;
    const bool y = b.labels[i] == cls;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::size_t> boundary_voxels(const SegmentationMask& mask, std::uint8_t cls) {
  const auto strides = strides_of(mask.shape);
  const std::size_t rank = mask.shape.size();
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.labels[i] != cls) continue;
    bool edge = false;
    for (std::size_t a = 0; a < rank && !edge; ++a) {
      const std::size_t coord = (i / strides[a]) % mask.shape[a];
      if (coord == 0 || coord + 1 == mask.shape[a]) {
        edge = true;
      } else if (mask.labels[i - strides[a]] != cls || mask.labels[i + strides[a]] != cls) {
        edge = true;
      }
    }
    if (edge) out.push_back(i);
  }
  return out;
}

std::vector<double> nearest_distances(const std::vector<std::size_t>& from,
                                      const std::vector<std::size_t>& to, const Shape& shape,
                                      const std::vector<double>& spacing) {
  if (to.empty()) throw UndefinedMetricError("nearest_distances: empty target set");
  if (spacing.size() != shape.size()) throw ValidationError("nearest_distances: spacing rank mismatch");
  const std::size_t rank = shape.size();
  const auto strides = strides_of(shape);
  auto coords = [&](std::size_t flat, long* out) {
    for (std::size_t a = 0; a < rank; ++a) out[a] = static_cast<long>((flat / strides[a]) % shape[a]);
  };

  // Targets ordered by their first coordinate; the search walks outwards from
  // the query's row and stops once that axis alone exceeds the best distance.
  std::vector<long> pts(to.size() * rank);
  std::vector<std::size_t> order(to.size());
  for (std::size_t k = 0; k < to.size(); ++k) order[k] = k;
  std::vector<long> tmp(rank);
  std::vector<long> first(to.size());
  for (std::size_t k = 0; k < to.size(); ++k) {
    coords(to[k], tmp.data());
    first[k] = tmp[0];
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return first[x] < first[y]; });
  for (std::size_t k = 0; k < to.size(); ++k) coords(to[order[k]], &pts[k * rank]);

  auto sq = [&](const long* p, const long* q) {
    double d2 = 0.0;
    for (std::size_t a = 0; a < rank; ++a) {
      const double d = static_cast<double>(p[a] - q[a]) * spacing[a];
      d2 += d * d;
    }
    return d2;
  };

  std::vector<double> out(from.size());
  std::vector<long> p(rank);
  for (std::size_t k = 0; k < from.size(); ++k) {
    coords(from[k], p.data());
    const auto mid = static_cast<std::size_t>(
        std::lower_bound(order.begin(), order.end(), p[0],
                         [&](std::size_t idx, long v) { return first[idx] < v; }) -
        order.begin());
    double best = INFINITY;
    for (std::size_t j = mid; j < to.size(); ++j) {
      const double d0 = static_cast<double>(pts[j * rank] - p[0]) * spacing[0];
      if (d0 * d0 > best) break;
      best = std::min(best, sq(p.data(), &pts[j * rank]));
    }
    for (std::size_t j = mid; j-- > 0;) {
      const double d0 = static_cast<double>(pts[j * rank] - p[0]) * spacing[0];
      if (d0 * d0 > best) break;
      best = std::min(best, sq(p.data(), &pts[j * rank]));
    }
    out[k] = std::sqrt(best);
  }
  return out;
}

namespace {

struct Surfaces {
  std::vector<double> ab, ba;
};

Surfaces surface_distances(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls,
                           const char* what) {
  check_compatible(a, b, what);
  const auto ba = boundary_voxels(a, cls);
  const auto bb = boundary_voxels(b, cls);
  if (ba.empty() || bb.empty()) {
    throw UndefinedMetricError(std::string(what) + ": class " + std::to_string(cls) + " is empty in " +
                               (ba.empty() ? (bb.empty() ? "both masks" : "the first mask") : "the second mask"));
  }
  return {nearest_distances(ba, bb, a.shape, a.spacing), nearest_distances(bb, ba, a.shape, a.spacing)};
}

double max_of(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double hausdorff(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls) {
  const auto s = surface_distances(a, b, cls, "hausdorff");
  return std::max(max_of(s.ab), max_of(s.ba));
}

double masd(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls) {
  const auto s = surface_distances(a, b, cls, "masd");
  return 0.5 * (mean_of(s.ab) + mean_of(s.ba));
}

void MetricReport::add_case(const std::string& case_id, const SegmentationMask& truth,
                            const SegmentationMask& prediction, std::size_t classes) {
  truth.validate(classes);
  prediction.validate(classes);
  for (std::size_t c = 1; c < classes; ++c) {
    const auto cls = static_cast<std::uint8_t>(c);
    MetricRow row;
    row.case_id = case_id;
    row.cls = c;
    row.dsc = dsc(truth, prediction, cls);
    try {
      const auto s = surface_distances(truth, prediction, cls, "surface metrics");
      row.hd_mm = std::max(max_of(s.ab), max_of(s.ba));
      row.masd_mm = 0.5 * (mean_of(s.ab) + mean_of(s.ba));
    } catch (const UndefinedMetricError& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
}

std::vector<ClassSummary> MetricReport::summarize() const {
  std::vector<const MetricRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const MetricRow* x, const MetricRow* y) {
    return std::tie(x->case_id, x->cls) < std::tie(y->case_id, y->cls);
  });
  std::map<std::size_t, ClassSummary> acc;
  for (const MetricRow* r : sorted) {
    ClassSummary& s = acc[r->cls];
    s.cls = r->cls;
    ++s.cases;
    s.mean_dsc += r->dsc;
    if (r->hd_mm && r->masd_mm) {
      s.mean_hd_mm += *r->hd_mm;
      s.mean_masd_mm += *r->masd_mm;
    } else {
      ++s.undefined;
    }
  }
  std::vector<ClassSummary> out;
  for (auto& [cls, s] : acc) {
    s.mean_dsc /= static_cast<double>(s.cases);
    const std::size_t defined = s.cases - s.undefined;
    if (defined > 0) {
      s.mean_hd_mm /= static_cast<double>(defined);
      s.mean_masd_mm /= static_cast<double>(defined);
    } else {
      s.mean_hd_mm = s.mean_masd_mm = NAN;
    }
    out.push_back(s);
  }
  return out;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "case,class,dsc,hd_mm,masd_mm\n";
  for (const auto& r : rows) {
    os << r.case_id << ',' << r.cls << ',' << format_number(r.dsc) << ','
       << (r.hd_mm ? format_number(*r.hd_mm) : "undefined") << ','
       << (r.masd_mm ? format_number(*r.masd_mm) : "undefined") << '\n';
  }
  return os.str();
}

std::string MetricReport::to_json() const {
  json j;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    json row{{"case", r.case_id}, {"class", r.cls}, {"dsc", r.dsc}};
    row["hd_mm"] = r.hd_mm ? json(*r.hd_mm) : json(nullptr);
    row["masd_mm"] = r.masd_mm ? json(*r.masd_mm) : json(nullptr);
    if (!r.error.empty()) row["error"] = r.error;
    j["rows"].push_back(row);
  }
  j["summary"] = json::array();
  for (const auto& s : summarize()) {
    json e{{"class", s.cls}, {"cases", s.cases}, {"undefined", s.undefined}, {"mean_dsc", s.mean_dsc}};
    e["mean_hd_mm"] = std::isfinite(s.mean_hd_mm) ? json(s.mean_hd_mm) : json(nullptr);
    e["mean_masd_mm"] = std::isfinite(s.mean_masd_mm) ? json(s.mean_masd_mm) : json(nullptr);
    j["summary"].push_back(e);
  }
  return j.dump(2);
}

std::vector<std::pair<double, double>> ecdf(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  std::vector<std::pair<double, double>> out;
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.emplace_back(values[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

void save_mask(const std::filesystem::path& path, const SegmentationMask& mask) {
  mask.validate(256);
  save_bytes(path, ByteArray{mask.shape, mask.labels});
  json meta{{"shape", mask.shape}, {"spacing_mm", mask.spacing}, {"dtype", "u8"}};
  atomic_write(path.string() + ".meta.json", meta.dump(2) + "\n");
}

SegmentationMask load_mask(const std::filesystem::path& path) {
  ByteArray bytes = load_bytes(path);
  const std::string meta_path = path.string() + ".meta.json";
  SegmentationMask m;
  try {
    const json meta = json::parse(read_file(meta_path));
    m.spacing = meta.at("spacing_mm").get<std::vector<double>>();
    if (meta.at("shape").get<Shape>() != bytes.shape) throw FormatError(meta_path + ": shape disagrees with " + path.string());
  } catch (const json::exception& e) {
    throw FormatError(meta_path + ": " + e.what());
  }
  m.shape = std::move(bytes.shape);
  m.labels = std::move(bytes.values);
  m.validate(256);
  return m;
}

}  // namespace tamseg
