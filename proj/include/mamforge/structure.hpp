#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mamforge/elements.hpp"
#include "mamforge/error.hpp"

namespace mamforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Atomic configuration. Cell rows are lattice vectors (Å). For a
/// non-periodic structure the cell is optional and, when nonsingular, acts as
/// the reference volume for stress normalization.
struct Structure {
  Mat3 cell = Mat3::Zero();
  std::array<bool, 3> periodic{false, false, false};
  std::vector<Vec3> positions;
  std::vector<int> species;
  std::vector<double> masses;
  std::optional<std::vector<Vec3>> velocities;
  double total_charge = 0.0;

  std::size_t size() const { return positions.size(); }
  bool any_periodic() const { return periodic[0] || periodic[1] || periodic[2]; }
};

inline constexpr double kSingularCellTolerance = 1e-10;

inline bool cell_is_singular(const Mat3& cell) {
  return std::abs(cell.determinant()) <= kSingularCellTolerance;
}

/// Checks the Structure invariants and throws DataError on violation.
inline void validate(const Structure& s) {
  const std::size_t n = s.positions.size();
  if (n == 0) throw DataError("structure has no atoms");
  if (s.species.size() != n || s.masses.size() != n)
    throw DataError("positions, species and masses differ in length");
  if (s.velocities && s.velocities->size() != n)
    throw DataError("velocity array length differs from atom count");
  for (double m : s.masses)
    if (!(m > 0.0)) throw DataError("atomic masses must be positive");
  for (int z : s.species) (void)element(z);
  if (s.any_periodic() && cell_is_singular(s.cell))
    throw DataError("periodic structure has a singular cell");
  for (const auto& r : s.positions)
    if (!r.allFinite()) throw DataError("non-finite atomic position");
}

/// Builds a structure with standard masses for the given species.
inline Structure make_structure(std::vector<int> species, std::vector<Vec3> positions,
                                const Mat3& cell = Mat3::Zero(),
                                std::array<bool, 3> periodic = {false, false, false}) {
  Structure s;
  s.cell = cell;
  s.periodic = periodic;
  s.positions = std::move(positions);
  s.species = std::move(species);
  s.masses.reserve(s.species.size());
  for (int z : s.species) s.masses.push_back(element(z).mass);
  validate(s);
  return s;
}

/// Cell volume used for stress normalization (Å³).
inline double volume(const Structure& s) {
  if (cell_is_singular(s.cell))
    throw DataError("stress requires a volume: set a nonsingular (reference) cell");
  return std::abs(s.cell.determinant());
}

/// Distance between the two lattice planes spanned by the other two lattice
/// vectors, for each lattice direction.
inline Vec3 perpendicular_widths(const Mat3& cell) {
  const double v = std::abs(cell.determinant());
  Vec3 w;
  for (int a = 0; a < 3; ++a) {
    const Vec3 b = cell.row((a + 1) % 3);
    const Vec3 c = cell.row((a + 2) % 3);
    w[a] = v / b.cross(c).norm();
  }
  return w;
}

/// Homogeneous deformation cell' = cell·(I+eps), positions mapped affinely so
/// fractional coordinates are preserved. eps is symmetrized first.
inline Structure apply_strain(const Structure& s, const Mat3& eps) {
  const Mat3 sym = 0.5 * (eps + eps.transpose());
  const Mat3 deform = Mat3::Identity() + sym;
  Structure out = s;
  out.cell = s.cell * deform;
  if ((s.any_periodic() || !cell_is_singular(s.cell)) && cell_is_singular(out.cell))
    throw DataError("strained cell is singular");
  for (auto& r : out.positions) r = (r.transpose() * deform).transpose();
  return out;
}

/// Supercell with nx·ny·nz copies. Copies are ordered image-major.
inline Structure replicate(const Structure& s, int nx, int ny, int nz) {
  if (!(s.periodic[0] && s.periodic[1] && s.periodic[2]))
    throw DataError("replicate requires a fully periodic structure");
  if (nx < 1 || ny < 1 || nz < 1) throw DataError("replication counts must be positive");
  Structure out;
  out.periodic = s.periodic;
  out.total_charge = s.total_charge * nx * ny * nz;
  out.cell.row(0) = s.cell.row(0) * nx;
  out.cell.row(1) = s.cell.row(1) * ny;
  out.cell.row(2) = s.cell.row(2) * nz;
  if (s.velocities) out.velocities.emplace();
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      for (int k = 0; k < nz; ++k) {
        const Vec3 shift = (i * s.cell.row(0) + j * s.cell.row(1) + k * s.cell.row(2)).transpose();
        for (std::size_t a = 0; a < s.size(); ++a) {
          out.positions.push_back(s.positions[a] + shift);
          out.species.push_back(s.species[a]);
          out.masses.push_back(s.masses[a]);
          if (s.velocities) out.velocities->push_back((*s.velocities)[a]);
        }
      }
  return out;
}

/// Periodic face-centred cubic crystal of nx·ny·nz conventional cells.
inline Structure fcc_lattice(int z, double a, int nx, int ny, int nz) {
  if (!(a > 0.0)) throw ConfigError("lattice constant must be positive");
  const Vec3 basis[4] = {Vec3(0, 0, 0), Vec3(0.5, 0.5, 0), Vec3(0.5, 0, 0.5), Vec3(0, 0.5, 0.5)};
  std::vector<Vec3> pos;
  for (const auto& b : basis) pos.push_back(a * b);
  const auto cell = make_structure(std::vector<int>(4, z), pos, Mat3::Identity() * a, {true, true, true});
  return replicate(cell, nx, ny, nz);
}

/// Axis-aligned slab [min, max) along a Cartesian axis, optionally restricted
/// to one species.
struct Region {
  int axis = 2;
  double min = 0.0;
  double max = 0.0;
  std::optional<int> species;

  Region() = default;
  Region(int axis_, double min_, double max_, std::optional<int> species_ = std::nullopt)
      : axis(axis_), min(min_), max(max_), species(species_) {
    if (axis < 0 || axis > 2) throw ConfigError("region axis must be 0, 1 or 2");
    if (!(min < max)) throw ConfigError("region requires min < max");
  }

  bool contains(const Vec3& r) const { return r[axis] >= min && r[axis] < max; }
  bool contains(const Structure& s, std::size_t i) const {
    if (species && s.species[i] != *species) return false;
    return contains(s.positions[i]);
  }
  /// Distance from r to the slab along the axis; zero inside.
  double distance(const Vec3& r) const {
    if (r[axis] < min) return min - r[axis];
    if (r[axis] >= max) return r[axis] - max;
    return 0.0;
  }
  /// Distance from an inside point to the nearest slab face.
  double depth(const Vec3& r) const {
    return std::min(r[axis] - min, max - r[axis]);
  }
};

/// Volume of a slab region inside the cell. The slab axis must be normal to
/// the lattice plane spanned by two of the lattice vectors; the thickness is
/// clipped to the lattice-plane spacing.
inline double region_volume(const Mat3& cell, const Region& region) {
  const double v = std::abs(cell.determinant());
  if (v <= kSingularCellTolerance) throw DataError("region volume requires a nonsingular cell");
  const double scale = cell.norm();
  for (int a = 0; a < 3; ++a) {
    const Vec3 b = cell.row((a + 1) % 3);
    const Vec3 c = cell.row((a + 2) % 3);
    if (std::abs(b[region.axis]) > 1e-12 * scale || std::abs(c[region.axis]) > 1e-12 * scale)
      continue;
    const double area = b.cross(c).norm();
    const double spacing = v / area;
    return std::min(region.max - region.min, spacing) * area;
  }
  throw DataError("slab axis is not normal to a lattice plane; region volume undefined");
}

}  // namespace mamforge
