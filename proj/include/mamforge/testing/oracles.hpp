#pragma once

// Independent reference computations used by the test suites and by
// `mamforge selftest`. Nothing here is used on the production paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <tuple>
#include <vector>

#include "mamforge/acsf.hpp"
#include "mamforge/calculator.hpp"
#include "mamforge/random.hpp"
#include "mamforge/structure.hpp"

namespace mamforge::oracle {

using mamforge::Rng;

/// Random non-periodic cluster in a cube of side `box` with a minimum
/// interatomic distance.
inline Structure random_cluster(Rng& rng, std::size_t n, double box, double min_dist,
                                const std::vector<int>& species_pool = {6}) {
  std::vector<Vec3> pos;
  std::vector<int> species;
  int attempts = 0;
  while (pos.size() < n) {
    if (++attempts > 100000) throw std::runtime_error("random_cluster: box too crowded");
    const Vec3 p = rng.vec(0.0, box);
    bool ok = true;
    for (const auto& q : pos)
      if ((p - q).norm() < min_dist) ok = false;
    if (!ok) continue;
    pos.push_back(p);
    species.push_back(species_pool[rng.index(species_pool.size())]);
  }
  return make_structure(species, pos);
}

/// Random fully periodic structure in the given cell with a minimum
/// minimum-image distance.
inline Structure random_periodic(Rng& rng, std::size_t n, const Mat3& cell, double min_dist,
                                 const std::vector<int>& species_pool = {6}) {
  std::vector<Vec3> pos;
  std::vector<int> species;
  const Mat3 inv = cell.inverse();
  auto mic = [&](Vec3 d) {
    Eigen::RowVector3d f = d.transpose() * inv;
    double best = 1e300;
    for (int a = -2; a <= 2; ++a)
      for (int b = -2; b <= 2; ++b)
        for (int c = -2; c <= 2; ++c) {
          Eigen::RowVector3d g = f;
          g[0] += a - std::round(f[0]);
          g[1] += b - std::round(f[1]);
          g[2] += c - std::round(f[2]);
          best = std::min(best, (g * cell).norm());
        }
    return best;
  };
  int attempts = 0;
  while (pos.size() < n) {
    if (++attempts > 100000) throw std::runtime_error("random_periodic: cell too crowded");
    const Eigen::RowVector3d f(rng.uniform(), rng.uniform(), rng.uniform());
    const Vec3 p = (f * cell).transpose();
    bool ok = true;
    for (const auto& q : pos)
      if (mic(p - q) < min_dist) ok = false;
    if (!ok) continue;
    pos.push_back(p);
    species.push_back(species_pool[rng.index(species_pool.size())]);
  }
  return make_structure(species, pos, cell, {true, true, true});
}

/// Sorted (i, j, distance) for every pair image within the cutoff, found by
/// scanning all lattice translations in [-2, 2]³.
inline std::vector<std::tuple<std::size_t, std::size_t, double>> brute_force_pairs(const Structure& s,
                                                                                    double cutoff) {
  std::vector<std::tuple<std::size_t, std::size_t, double>> out;
  const int reach = s.any_periodic() ? 2 : 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      for (int a = -reach; a <= reach; ++a)
        for (int b = -reach; b <= reach; ++b)
          for (int c = -reach; c <= reach; ++c) {
            if ((a && !s.periodic[0]) || (b && !s.periodic[1]) || (c && !s.periodic[2])) continue;
            if (i == j && !a && !b && !c) continue;
            const Vec3 d = s.positions[j] - s.positions[i] +
                           (a * s.cell.row(0) + b * s.cell.row(1) + c * s.cell.row(2)).transpose();
            const double r = d.norm();
            if (r <= cutoff) out.emplace_back(i, j, r);
          }
  std::sort(out.begin(), out.end());
  return out;
}

using EnergyFn = std::function<double(const Structure&)>;

/// -∂E/∂R by central differences.
inline std::vector<Vec3> finite_difference_forces(const EnergyFn& energy, const Structure& s, double h) {
  std::vector<Vec3> f(s.size(), Vec3::Zero());
  for (std::size_t i = 0; i < s.size(); ++i)
    for (int p = 0; p < 3; ++p) {
      Structure plus = s, minus = s;
      plus.positions[i][p] += h;
      minus.positions[i][p] -= h;
      f[i][p] = -(energy(plus) - energy(minus)) / (2.0 * h);
    }
  return f;
}

/// (1/V) ∂E/∂ε by central differences of homogeneous strains; off-diagonal
/// components use the symmetric strain ε_pq = ε_qp = h/2.
inline Mat3 finite_difference_stress(const EnergyFn& energy, const Structure& s, double h) {
  const double v = std::abs(s.cell.determinant());
  Mat3 sigma = Mat3::Zero();
  for (int p = 0; p < 3; ++p)
    for (int q = p; q < 3; ++q) {
      Mat3 eps = Mat3::Zero();
      if (p == q) {
        eps(p, p) = h;
      } else {
        eps(p, q) = eps(q, p) = 0.5 * h;
      }
      const double ep = energy(apply_strain(s, eps));
      const double em = energy(apply_strain(s, -eps));
      sigma(p, q) = sigma(q, p) = (ep - em) / (2.0 * h * v);
    }
  return sigma;
}

inline Mat3 rotation(double a, double b, double c) {
  return (Eigen::AngleAxisd(a, Vec3::UnitZ()) * Eigen::AngleAxisd(b, Vec3::UnitY()) *
          Eigen::AngleAxisd(c, Vec3::UnitX()))
      .toRotationMatrix();
}

inline Structure rigid_motion(const Structure& s, const Mat3& rot, const Vec3& shift) {
  Structure out = s;
  for (auto& r : out.positions) r = rot * r + shift;
  return out;
}

inline double max_abs_diff(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

/// FCC crystal at zero pressure for a pair potential, by bisection on the
/// lattice constant between lo and hi.
inline Structure zero_pressure_fcc(const Calculator& calc, int z, int reps, double lo, double hi) {
  auto pressure = [&](double a) {
    const auto ev = calc.evaluate(fcc_lattice(z, a, reps, reps, reps));
    return ev.stress->trace() / 3.0;
  };
  double plo = pressure(lo);
  if (plo * pressure(hi) > 0.0) throw std::runtime_error("zero_pressure_fcc: bracket has no sign change");
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double pm = pressure(mid);
    if ((pm < 0.0) == (plo < 0.0)) {
      lo = mid;
      plo = pm;
    } else {
      hi = mid;
    }
  }
  return fcc_lattice(z, 0.5 * (lo + hi), reps, reps, reps);
}

/// Model with random weights and widened input scaling so the hidden units
/// are not saturated; elements Li and O.
inline PotentialModel random_model(bool elec, double cutoff = 8.9, std::uint64_t seed = 3) {
  ModelOptions opt;
  opt.acsf = default_acsf(cutoff);
  opt.use_electrostatics = elec;
  opt.seed = seed;
  auto m = make_model(opt, {3, 8});
  for (std::size_t k = 0; k + 1 < m.num_descriptor_features(); ++k) m.energy_input.scale[k] = 4.0;
  if (elec)
    for (std::size_t k = 0; k + 1 < m.num_descriptor_features(); ++k) m.chi_input.scale[k] = 4.0;
  return m;
}

/// Dense dG/dR assembled from the sparse per-atom blocks: row (i, f), column 3b+p.
inline Eigen::MatrixXd dense_jacobian(const DescriptorSet& d) {
  const auto n = static_cast<Eigen::Index>(d.size()), nf = static_cast<Eigen::Index>(d.num_features());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n * nf, 3 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& J = d.jacobian[static_cast<std::size_t>(i)];
    auto put = [&](Eigen::Index block, Eigen::Index atom) {
      for (Eigen::Index f = 0; f < nf; ++f)
        for (int p = 0; p < 3; ++p) out(i * nf + f, 3 * atom + p) += J(3 * block + p, f);
    };
    put(0, i);
    const auto& nb = d.neighbors[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < nb.size(); ++k) put(static_cast<Eigen::Index>(k + 1), static_cast<Eigen::Index>(nb[k].index));
  }
  return out;
}

/// Largest deviation between the analytic descriptor Jacobian and central
/// differences of the descriptor values.
inline double jacobian_fd_error(const Structure& s, const AcsfParams& p, double h) {
  const auto d = compute_acsf(s, build_neighbor_list(s, p.cutoff), p);
  const Eigen::MatrixXd J = dense_jacobian(d);
  const auto nf = static_cast<Eigen::Index>(p.num_features());
  double worst = 0.0;
  for (std::size_t b = 0; b < s.size(); ++b)
    for (int q = 0; q < 3; ++q) {
      Structure plus = s, minus = s;
      plus.positions[b][q] += h;
      minus.positions[b][q] -= h;
      const auto gp = compute_acsf(plus, build_neighbor_list(plus, p.cutoff), p, false).values;
      const auto gm = compute_acsf(minus, build_neighbor_list(minus, p.cutoff), p, false).values;
      for (Eigen::Index i = 0; i < gp.rows(); ++i)
        for (Eigen::Index f = 0; f < nf; ++f) {
          const double fd = (gp(i, f) - gm(i, f)) / (2.0 * h);
          worst = std::max(worst, std::abs(fd - J(i * nf + f, 3 * static_cast<Eigen::Index>(b) + q)));
        }
    }
  return worst;
}

}  // namespace mamforge::oracle
