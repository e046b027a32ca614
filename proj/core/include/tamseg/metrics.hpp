#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tamseg/tensor.hpp"

namespace tamseg {

/// Integer label volume with physical spacing (mm per axis).
struct SegmentationMask {
  Shape shape;
  std::vector<std::uint8_t> labels;
  std::vector<double> spacing;

  static SegmentationMask zeros(Shape shape, std::vector<double> spacing = {});

  std::size_t size() const { return labels.size(); }
  /// Size match, positive spacing (one per axis) and every label < classes.
  void validate(std::size_t classes) const;
  std::size_t count(std::uint8_t cls) const;
};

/// [classes x shape...] one-hot encoding.
Tensor one_hot(const SegmentationMask& mask, std::size_t classes, DType dtype = DType::kFloat32);
/// Argmax over axis 0 of [classes x spatial...] scores.
SegmentationMask argmax_labels(const Tensor& scores, std::vector<double> spacing = {});

/// Raised when HD/MASD are requested for an empty region.
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 2|A n B| / (|A| + |B|); 1 when both regions are empty.
double dsc(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls);

/// Flat indices of labelled voxels with a face neighbour outside the region
/// or on the volume edge, in increasing order.
std::vector<std::size_t> boundary_voxels(const SegmentationMask& mask, std::uint8_t cls);

/// Distance in mm from each point of `from` to the nearest point of `to`.
/// Exact: equal to the all-pairs minimum, bit for bit.
std::vector<double> nearest_distances(const std::vector<std::size_t>& from,
                                      const std::vector<std::size_t>& to, const Shape& shape,
                                      const std::vector<double>& spacing);

double hausdorff(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls);
/// (mean over boundary(A) of d(., boundary(B)) + the same from B) / 2.
double masd(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls);

struct MetricRow {
  std::string case_id;
  std::size_t cls = 0;
  double dsc = 0.0;
  std::optional<double> hd_mm;
  std::optional<double> masd_mm;
  /// Set when HD/MASD are undefined.
  std::string error;
};

struct ClassSummary {
  std::size_t cls = 0;
  double mean_dsc = 0.0;
  double mean_hd_mm = 0.0;
  double mean_masd_mm = 0.0;
  std::size_t cases = 0;
  /// Cases left out of the HD/MASD means because a region was empty.
  std::size_t undefined = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  /// Rows for classes 1..classes-1 (background excluded) of one case.
  void add_case(const std::string& case_id, const SegmentationMask& truth,
                const SegmentationMask& prediction, std::size_t classes);
  /// Rows sorted by (case, class) before reduction.
  std::vector<ClassSummary> summarize() const;
  /// Columns: case, class, dsc, hd_mm, masd_mm ("undefined" for error rows).
  std::string to_csv() const;
  /// Rows plus per-class summaries.
  std::string to_json() const;
};

/// Empirical CDF: sorted values paired with i/n.
std::vector<std::pair<double, double>> ecdf(std::vector<double> values);

/// TNSR u8 labels plus `<path>.meta.json` carrying shape and spacing.
void save_mask(const std::filesystem::path& path, const SegmentationMask& mask);
SegmentationMask load_mask(const std::filesystem::path& path);

}  // namespace tamseg
