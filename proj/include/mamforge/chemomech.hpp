#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mamforge/calculator.hpp"
#include "mamforge/neighbor_list.hpp"
#include "mamforge/parallel.hpp"
#include "mamforge/structure.hpp"
#include "mamforge/units.hpp"

namespace mamforge {

// Interface energetics ------------------------------------------------------

struct EnergyTriple {
  double e1_tot = 0.0;   // eV
  double e2_tot = 0.0;   // eV
  double e12_tot = 0.0;  // eV
  double area = 0.0;     // Å²
};

struct WorkOfSeparation {
  double ev_per_a2 = 0.0;
  double j_per_m2 = 0.0;
};

inline WorkOfSeparation work_of_separation(const EnergyTriple& t) {
  if (!(t.area > 0.0)) throw DataError("interface area must be positive");
  const double w = (t.e1_tot + t.e2_tot - t.e12_tot) / t.area;
  return {w, w * units::kEvPerA2ToJPerM2};
}

/// Electrostatic potential gradient across an interface gap (V/Å).
inline double potential_gradient(double u1, double u2, double gap) {
  if (!(gap > 0.0)) throw DataError("interface gap must be positive");
  return (u1 - u2) / gap;
}

inline double interphase_formation_energy(double e_interphase, double e_electrolyte) {
  return e_interphase - e_electrolyte;
}

/// Per reacted X atom (eV/atom).
inline double sei_formation_energy(double e_sei, double e_x, double e_electrolyte, long n_x) {
  if (n_x < 1) throw DataError("reacted atom count must be at least 1");
  return (e_sei - (e_x + e_electrolyte)) / static_cast<double>(n_x);
}

inline double intercalation_voltage(double delta_e_f, long n) {
  if (n < 1) throw DataError("transferred charge count must be at least 1");
  return -delta_e_f / static_cast<double>(n);
}

struct DiffusionKinetics {
  double tau_s = 0.0;
  double c_rate_per_h = 0.0;
};

/// lambda in cm, D in cm²/s.
inline DiffusionKinetics diffusion_kinetics(double lambda, double d) {
  if (!(lambda > 0.0) || !(d > 0.0)) throw DataError("diffusion length and coefficient must be positive");
  return {lambda * lambda / d, 3600.0 * d / (lambda * lambda)};
}

// Elasticity -----------------------------------------------------------------

using VoigtTensor = Eigen::Matrix<double, 6, 6>;  // GPa

struct Moduli {
  double bulk = 0.0;   // GPa
  double shear = 0.0;  // GPa
  std::optional<double> young;
};

inline double young_modulus(double bulk, double shear) {
  const double den = 3.0 * bulk + shear;
  if (den == 0.0 || !std::isfinite(den)) throw NumericalError("Young's modulus undefined for 3B + G = 0");
  return 9.0 * bulk * shear / den;
}

inline Moduli voigt_moduli(const VoigtTensor& c) {
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-9) throw DataError("stiffness tensor is not symmetric");
  Moduli m;
  const double diag = c(0, 0) + c(1, 1) + c(2, 2);
  const double off = c(0, 1) + c(0, 2) + c(1, 2);
  const double shear = c(3, 3) + c(4, 4) + c(5, 5);
  m.bulk = (diag + 2.0 * off) / 9.0;
  m.shear = (diag - off) / 15.0 + shear / 5.0;
  if (3.0 * m.bulk + m.shear != 0.0) m.young = young_modulus(m.bulk, m.shear);
  return m;
}

/// Isotropic stiffness from the Lamé constants.
inline VoigtTensor isotropic_stiffness(double lambda, double mu) {
  VoigtTensor c = VoigtTensor::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) c(i, j) = lambda;
    c(i, i) = lambda + 2.0 * mu;
    c(i + 3, i + 3) = mu;
  }
  return c;
}

/// Symmetric strain tensor for a Voigt component; shear components use
/// engineering strain.
inline Mat3 voigt_strain(int k, double value) {
  static constexpr int p[6] = {0, 1, 2, 1, 0, 0};
  static constexpr int q[6] = {0, 1, 2, 2, 2, 1};
  Mat3 e = Mat3::Zero();
  if (k < 3) {
    e(k, k) = value;
  } else {
    e(p[k], q[k]) = e(q[k], p[k]) = 0.5 * value;
  }
  return e;
}

inline Eigen::Matrix<double, 6, 1> to_voigt(const Mat3& s) {
  Eigen::Matrix<double, 6, 1> v;
  v << s(0, 0), s(1, 1), s(2, 2), s(1, 2), s(0, 2), s(0, 1);
  return v;
}

inline constexpr double kRelaxedForceTolerance = 1e-3;  // eV/Å

struct ElasticResult {
  VoigtTensor c = VoigtTensor::Zero();  // GPa
  double delta = 0.0;
  double max_force = 0.0;  // eV/Å, of the reference structure
  double force_tolerance = kRelaxedForceTolerance;
};

/// Clamped-ion stiffness from central differences of the stress under
/// ±delta along each Voigt strain.
inline ElasticResult elastic_constants(const Structure& s, const Calculator& calc, double delta,
                                       double force_tolerance = kRelaxedForceTolerance) {
  if (!(delta >= 1e-4 && delta <= 1e-2)) throw ConfigError("strain delta must lie in [1e-4, 1e-2]");
  if (!(s.periodic[0] && s.periodic[1] && s.periodic[2]))
    throw DataError("elastic constants require a fully periodic structure");
  ElasticResult out;
  out.delta = delta;
  out.force_tolerance = force_tolerance;
  out.max_force = max_force(calc.evaluate(s).forces);
  if (!(out.max_force < force_tolerance))
    throw DataError("structure is not relaxed: max |F| = " + std::to_string(out.max_force) + " eV/A");

  std::array<Mat3, 12> stress;
  parallel_for(12, [&](std::size_t k) {
    const int comp = static_cast<int>(k / 2);
    const double sign = k % 2 == 0 ? 1.0 : -1.0;
    const auto ev = calc.evaluate(apply_strain(s, voigt_strain(comp, sign * delta)));
    if (!ev.stress) throw DataError("calculator returned no stress");
    stress[k] = *ev.stress;
  }, 1);
  for (int j = 0; j < 6; ++j)
    out.c.col(j) = (to_voigt(stress[2 * j]) - to_voigt(stress[2 * j + 1])) / (2.0 * delta) * units::kEvPerA3ToGpa;
  if (!out.c.allFinite()) throw NumericalError("non-finite stress response");
  out.c = 0.5 * (out.c + out.c.transpose()).eval();
  return out;
}

// Sliding --------------------------------------------------------------------

struct SlidingSample {
  double l = 0.0;      // Å
  double w_sep = 0.0;  // J/m²
};

struct SlidingTraction {
  std::vector<double> traction;  // J/m²/Å
  double tau_max = 0.0;          // J/m²/Å
};

/// Derivative of the interface energy along the sliding path, -dW_sep/dl,
/// from second-order three-point differences on the (possibly nonuniform)
/// sample grid.
inline SlidingTraction sliding_traction(const std::vector<SlidingSample>& p) {
  const std::size_t n = p.size();
  if (n < 3) throw DataError("sliding profile needs at least 3 samples");
  for (std::size_t k = 0; k < n; ++k) {
    if (!std::isfinite(p[k].l) || !std::isfinite(p[k].w_sep)) throw DataError("non-finite sliding sample");
    if (k > 0 && !(p[k].l > p[k - 1].l)) throw DataError("sliding distances must be strictly increasing");
  }
  // Derivative at x0 of the parabola through (x0,f0), (x1,f1), (x2,f2).
  auto deriv = [](double x0, double f0, double x1, double f1, double x2, double f2) {
    const double a = x1 - x0, b = x2 - x0;
    return (-(a + b) / (a * b)) * f0 + (b / (a * (b - a))) * f1 - (a / (b * (b - a))) * f2;
  };
  SlidingTraction out;
  out.traction.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = k == 0 ? 0 : (k == n - 1 ? n - 3 : k - 1);
    const std::size_t o[3] = {i, i + 1, i + 2};
    std::size_t rest[2];
    std::size_t r = 0;
    for (std::size_t m : o)
      if (m != k) rest[r++] = m;
    const double d = deriv(p[k].l, p[k].w_sep, p[rest[0]].l, p[rest[0]].w_sep, p[rest[1]].l, p[rest[1]].w_sep);
    out.traction[k] = -d;
    out.tau_max = std::max(out.tau_max, std::abs(d));
  }
  return out;
}

// Octahedral distortion ------------------------------------------------------

struct OctahedralDistortion {
  double angle_variance = 0.0;         // deg²
  double quadratic_elongation = 0.0;   // dimensionless
  double off_center = 0.0;             // Å
};

inline OctahedralDistortion octahedral_distortion(const Structure& s, std::size_t center,
                                                  const std::array<std::size_t, 6>& ligands) {
  if (center >= s.size()) throw DataError("center index out of range");
  for (std::size_t a = 0; a < 6; ++a) {
    if (ligands[a] >= s.size()) throw DataError("ligand index out of range");
    if (ligands[a] == center) throw DataError("ligand coincides with the center atom");
    for (std::size_t b = 0; b < a; ++b)
      if (ligands[a] == ligands[b]) throw DataError("ligand indices must be distinct");
  }
  const Vec3 rc = s.positions[center];
  const MinimumImage mic(s);
  std::array<Vec3, 6> v;
  double scale = 0.0;
  for (std::size_t a = 0; a < 6; ++a) {
    v[a] = mic(s.positions[ligands[a]] - rc);
    scale = std::max(scale, v[a].norm());
  }
  const double tiny = 1e-8 * std::max(scale, 1.0);
  for (std::size_t a = 0; a < 6; ++a) {
    if (v[a].norm() < tiny) throw DataError("degenerate octahedron: ligand on the center");
    for (std::size_t b = 0; b < a; ++b)
      if ((v[a] - v[b]).norm() < tiny) throw DataError("degenerate octahedron: coincident ligands");
  }

  auto angle = [&](std::size_t a, std::size_t b) {
    const double c = std::clamp(v[a].dot(v[b]) / (v[a].norm() * v[b].norm()), -1.0, 1.0);
    return std::acos(c) * 180.0 / units::kPi;
  };
  // Trans partner = ligand at the widest angle; must pair up consistently.
  std::array<std::size_t, 6> trans{};
  for (std::size_t a = 0; a < 6; ++a) {
    double widest = -1.0;
    for (std::size_t b = 0; b < 6; ++b)
      if (b != a && angle(a, b) > widest) {
        widest = angle(a, b);
        trans[a] = b;
      }
  }
  for (std::size_t a = 0; a < 6; ++a)
    if (trans[trans[a]] != a) throw DataError("ligands do not form an octahedron");

  OctahedralDistortion out;
  for (std::size_t a = 0; a < 6; ++a)
    for (std::size_t b = a + 1; b < 6; ++b)
      if (trans[a] != b) out.angle_variance += std::pow(angle(a, b) - 90.0, 2);
  out.angle_variance /= 11.0;

  Vec3 centroid = Vec3::Zero();
  for (const auto& x : v) centroid += x / 6.0;
  out.off_center = centroid.norm();

  // Polyhedron volume: eight triangular faces, one vertex from each trans pair.
  std::array<std::array<std::size_t, 2>, 3> pairs;
  std::size_t np = 0;
  for (std::size_t a = 0; a < 6; ++a)
    if (a < trans[a]) pairs[np++] = {a, trans[a]};
  double vol = 0.0;
  for (int m = 0; m < 8; ++m) {
    const Vec3 p0 = v[pairs[0][m & 1]] - centroid;
    const Vec3 p1 = v[pairs[1][(m >> 1) & 1]] - centroid;
    const Vec3 p2 = v[pairs[2][(m >> 2) & 1]] - centroid;
    vol += std::abs(p0.dot(p1.cross(p2))) / 6.0;
  }
  if (!(vol > tiny * tiny * tiny)) throw DataError("degenerate octahedron: zero volume");
  const double l0 = std::cbrt(0.75 * vol);  // regular octahedron: V = 4/3 l0³
  for (const auto& x : v) out.quadratic_elongation += x.squaredNorm() / (l0 * l0) / 6.0;
  return out;
}

}  // namespace mamforge
