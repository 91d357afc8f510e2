#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mamforge/structure.hpp"

namespace mamforge {

struct Neighbor {
  std::size_t index;
  Vec3 displacement;  // R_j - R_i, minimum image (Å)
  double distance;    // Å
};

/// Per-atom neighbor lists under the minimum-image convention.
struct NeighborList {
  double cutoff = 0.0;
  std::vector<std::vector<Neighbor>> neighbors;

  const std::vector<Neighbor>& operator[](std::size_t i) const { return neighbors[i]; }
  std::size_t size() const { return neighbors.size(); }
};

/// Shortest periodic image of a displacement vector. Only periodic directions
/// are wrapped; the 27 images around the rounded one are scanned so skewed
/// cells are handled exactly.
class MinimumImage {
 public:
  explicit MinimumImage(const Structure& s) : cell_(s.cell), periodic_(s.periodic) {
    if (s.any_periodic()) inverse_ = s.cell.inverse();
  }

  Vec3 operator()(const Vec3& d) const {
    if (!(periodic_[0] || periodic_[1] || periodic_[2])) return d;
    Eigen::RowVector3d f = d.transpose() * inverse_;
    for (int a = 0; a < 3; ++a)
      if (periodic_[a]) f[a] -= std::round(f[a]);
    const Eigen::RowVector3d base = f * cell_;
    Vec3 best = base.transpose();
    double best2 = best.squaredNorm();
    for (int i = -1; i <= 1; ++i)
      for (int j = -1; j <= 1; ++j)
        for (int k = -1; k <= 1; ++k) {
          if ((i && !periodic_[0]) || (j && !periodic_[1]) || (k && !periodic_[2])) continue;
          if (!i && !j && !k) continue;
          const Eigen::RowVector3d shift = i * cell_.row(0) + j * cell_.row(1) + k * cell_.row(2);
          const Vec3 cand = (base + shift).transpose();
          const double c2 = cand.squaredNorm();
          if (c2 < best2) {
            best2 = c2;
            best = cand;
          }
        }
    return best;
  }

 private:
  Mat3 cell_;
  Mat3 inverse_ = Mat3::Identity();
  std::array<bool, 3> periodic_;
};

/// Throws unless every periodic direction is at least 2·cutoff wide.
inline void check_minimum_image(const Structure& s, double cutoff) {
  if (!s.any_periodic()) return;
  const Vec3 w = perpendicular_widths(s.cell);
  for (int a = 0; a < 3; ++a)
    if (s.periodic[a] && w[a] < 2.0 * cutoff)
      throw DataError("cell too small for minimum image: width " + std::to_string(w[a]) +
                      " Å < 2 x cutoff " + std::to_string(cutoff) + " Å");
}

/// Cell-binned neighbor search; each list is sorted by neighbor index.
inline NeighborList build_neighbor_list(const Structure& s, double cutoff) {
  if (!(cutoff > 0.0)) throw ConfigError("neighbor cutoff must be positive");
  check_minimum_image(s, cutoff);
  const std::size_t n = s.size();

  // Reduced coordinates in the cell basis (identity basis when there is no cell).
  const bool use_cell = !cell_is_singular(s.cell);
  const Mat3 basis = use_cell ? s.cell : Mat3::Identity();
  const Mat3 inverse = basis.inverse();
  const Vec3 width = perpendicular_widths(basis);

  std::vector<Eigen::RowVector3d> reduced(n);
  for (std::size_t i = 0; i < n; ++i) {
    reduced[i] = s.positions[i].transpose() * inverse;
    for (int a = 0; a < 3; ++a)
      if (s.periodic[a]) reduced[i][a] -= std::floor(reduced[i][a]);
  }
  std::array<double, 3> lo{}, span{};
  std::array<int, 3> bins{};
  for (int a = 0; a < 3; ++a) {
    if (s.periodic[a]) {
      lo[a] = 0.0;
      span[a] = 1.0;
    } else {
      double mn = reduced[0][a], mx = reduced[0][a];
      for (const auto& f : reduced) {
        mn = std::min(mn, f[a]);
        mx = std::max(mx, f[a]);
      }
      lo[a] = mn;
      span[a] = std::max(mx - mn, 1e-12);
    }
    const double extent = span[a] * width[a];
    bins[a] = std::max(1, static_cast<int>(std::floor(extent / cutoff)));
  }
  auto bin_of = [&](const Eigen::RowVector3d& f) {
    std::array<int, 3> b{};
    for (int a = 0; a < 3; ++a) {
      int k = static_cast<int>(std::floor((f[a] - lo[a]) / span[a] * bins[a]));
      b[a] = std::clamp(k, 0, bins[a] - 1);
    }
    return b;
  };
  auto flat = [&](const std::array<int, 3>& b) {
    return (static_cast<std::size_t>(b[0]) * bins[1] + b[1]) * bins[2] + b[2];
  };

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(bins[0]) * bins[1] * bins[2]);
  std::vector<std::array<int, 3>> home(n);
  for (std::size_t i = 0; i < n; ++i) {
    home[i] = bin_of(reduced[i]);
    members[flat(home[i])].push_back(i);
  }

  const MinimumImage image(s);
  const double cutoff2 = cutoff * cutoff;
  NeighborList nl;
  nl.cutoff = cutoff;
  nl.neighbors.resize(n);
  std::vector<std::size_t> visit;
  for (std::size_t i = 0; i < n; ++i) {
    visit.clear();
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          std::array<int, 3> b{home[i][0] + dx, home[i][1] + dy, home[i][2] + dz};
          bool valid = true;
          for (int a = 0; a < 3; ++a) {
            if (s.periodic[a])
              b[a] = ((b[a] % bins[a]) + bins[a]) % bins[a];
            else if (b[a] < 0 || b[a] >= bins[a])
              valid = false;
          }
          if (valid) visit.push_back(flat(b));
        }
    std::sort(visit.begin(), visit.end());
    visit.erase(std::unique(visit.begin(), visit.end()), visit.end());
    auto& list = nl.neighbors[i];
    for (std::size_t bin : visit)
      for (std::size_t j : members[bin]) {
        if (j == i) continue;
        const Vec3 d = image(s.positions[j] - s.positions[i]);
        const double r2 = d.squaredNorm();
        if (r2 > cutoff2) continue;
        if (r2 == 0.0)
          throw DataError("atoms " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
        list.push_back({j, d, std::sqrt(r2)});
      }
    std::sort(list.begin(), list.end(),
              [](const Neighbor& a, const Neighbor& b) { return a.index < b.index; });
  }
  return nl;
}

}  // namespace mamforge
