#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tamseg/metrics.hpp"

namespace tamseg::testing {

/// Coordinates of every labelled voxel that touches a face neighbour outside
/// the region or the volume edge. Independent of the library's flat-index walk.
inline std::vector<std::vector<long>> oracle_boundary(const SegmentationMask& m, std::uint8_t cls) {
  const std::size_t rank = m.shape.size();
  std::vector<std::vector<long>> out;
  std::vector<long> c(rank, 0);
  auto label_at = [&](const std::vector<long>& q) {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < rank; ++a) flat = flat * m.shape[a] + static_cast<std::size_t>(q[a]);
    return m.labels[flat];
  };
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::size_t rem = i;
    for (std::size_t a = rank; a-- > 0;) {
      c[a] = static_cast<long>(rem % m.shape[a]);
      rem /= m.shape[a];
    }
    if (label_at(c) != cls) continue;
    bool edge = false;
    for (std::size_t a = 0; a < rank; ++a) {
      for (long d : {-1L, 1L}) {
        auto q = c;
        q[a] += d;
        if (q[a] < 0 || q[a] >= static_cast<long>(m.shape[a]) || label_at(q) != cls) edge = true;
      }
    }
    if (edge) out.push_back(c);
  }
  return out;
}

inline std::vector<double> oracle_directed(const std::vector<std::vector<long>>& from,
                                           const std::vector<std::vector<long>>& to,
                                           const std::vector<double>& spacing) {
  std::vector<double> out;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      double d2 = 0.0;
      for (std::size_t a = 0; a < p.size(); ++a) {
        const double d = static_cast<double>(p[a] - q[a]) * spacing[a];
        d2 += d * d;
      }
      best = std::min(best, std::sqrt(d2));
    }
    out.push_back(best);
  }
  return out;
}

struct OracleSurface {
  double hd = 0.0;
  double masd = 0.0;
};

inline OracleSurface oracle_surface(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls) {
  const auto ba = oracle_boundary(a, cls);
  const auto bb = oracle_boundary(b, cls);
  const auto ab = oracle_directed(ba, bb, a.spacing);
  const auto bab = oracle_directed(bb, ba, a.spacing);
  double hd = 0.0, sa = 0.0, sb = 0.0;
  for (double d : ab) {
    hd = std::max(hd, d);
    sa += d;
  }
  for (double d : bab) {
    hd = std::max(hd, d);
    sb += d;
  }
  return {hd, 0.5 * (sa / static_cast<double>(ab.size()) + sb / static_cast<double>(bab.size()))};
}

inline double oracle_dsc(const SegmentationMask& a, const SegmentationMask& b, std::uint8_t cls) {
  double na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a.labels[i] == cls;
    nb += b.labels[i] == cls;
    both += a.labels[i] == cls && b.labels[i] == cls;
  }
  return na + nb == 0 ? 1.0 : 2.0 * both / (na + nb);
}

/// Random blobby mask: a few axis-aligned boxes of class 1 over noise of
/// random density. Never empty.
template <typename Rng>
SegmentationMask random_mask(Rng& rng, const Shape& shape, const std::vector<double>& spacing) {
  const std::size_t rank = shape.size();
  SegmentationMask m = SegmentationMask::zeros(shape, spacing);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double noise = 0.15 * u(rng);
  for (auto& l : m.labels) l = u(rng) < noise ? 1 : 0;
  const int boxes = 1 + static_cast<int>(u(rng) * 3);
  for (int b = 0; b < boxes; ++b) {
    std::vector<std::size_t> lo(rank), hi(rank);
    for (std::size_t a = 0; a < rank; ++a) {
      lo[a] = static_cast<std::size_t>(u(rng) * static_cast<double>(shape[a]));
      hi[a] = std::min(shape[a], lo[a] + 1 + static_cast<std::size_t>(u(rng) * static_cast<double>(shape[a]) / 2));
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      std::size_t rem = i;
      bool inside = true;
      for (std::size_t a = rank; a-- > 0;) {
        const std::size_t c = rem % shape[a];
        rem /= shape[a];
        inside = inside && c >= lo[a] && c < hi[a];
      }
      if (inside) m.labels[i] = 1;
    }
  }
  return m;
}

}  // namespace tamseg::testing
