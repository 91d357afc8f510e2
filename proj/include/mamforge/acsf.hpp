#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mamforge/neighbor_list.hpp"
#include "mamforge/parallel.hpp"
#include "mamforge/units.hpp"

namespace mamforge {

struct RadialFunction {
  double eta;  // Å⁻²
  double rs;   // Å
};

struct AngularFunction {
  double eta;     // Å⁻²
  double zeta;    // ≥ 1
  double lambda;  // ±1
};

/// Atom-centered symmetry function hyperparameters. The feature vector of an
/// atom is [radial..., angular..., 0.1·Z].
struct AcsfParams {
  double cutoff = 8.9;
  std::vector<RadialFunction> radial;
  std::vector<AngularFunction> angular;
  bool element_resolved = false;

  std::size_t num_radial() const { return radial.size(); }
  std::size_t num_angular() const { return angular.size(); }
  std::size_t num_features() const { return radial.size() + angular.size() + 1; }
};

inline constexpr double kAtomicNumberScale = 0.1;

inline void validate(const AcsfParams& p) {
  if (!(p.cutoff > 0.0)) throw ConfigError("ACSF cutoff must be positive");
  if (p.radial.empty() && p.angular.empty()) throw ConfigError("ACSF set is empty");
  for (const auto& f : p.radial)
    if (!(f.eta >= 0.0)) throw ConfigError("radial eta must be >= 0");
  for (const auto& f : p.angular) {
    if (!(f.eta >= 0.0)) throw ConfigError("angular eta must be >= 0");
    if (!(f.zeta >= 1.0)) throw ConfigError("angular zeta must be >= 1");
    if (f.lambda != 1.0 && f.lambda != -1.0) throw ConfigError("angular lambda must be +1 or -1");
  }
}

/// 8 radial functions (eta log-spaced 0.01..2 Å⁻², r_s = 0) and 8 angular
/// functions (zeta in {1,2,4,16}, lambda = ±1, eta = 0.005 Å⁻²).
inline AcsfParams default_acsf(double cutoff = 8.9) {
  AcsfParams p;
  p.cutoff = cutoff;
  const double lo = std::log(0.01), hi = std::log(2.0);
  for (int k = 0; k < 8; ++k) p.radial.push_back({std::exp(lo + (hi - lo) * k / 7.0), 0.0});
  for (double zeta : {1.0, 2.0, 4.0, 16.0})
    for (double lambda : {1.0, -1.0}) p.angular.push_back({0.005, zeta, lambda});
  return p;
}

inline double cutoff_fn(double r, double rc) {
  return r <= rc ? 0.5 * (std::cos(units::kPi * r / rc) + 1.0) : 0.0;
}
inline double cutoff_fn_deriv(double r, double rc) {
  return r <= rc ? -0.5 * units::kPi / rc * std::sin(units::kPi * r / rc) : 0.0;
}

/// Descriptors of every atom plus their sparse position Jacobian.
///
/// jacobian[i] holds 3·(1 + |nl[i]|) rows: rows 0..2 are ∂G_i/∂R_i, rows
/// 3(k+1)..3(k+1)+2 are ∂G_i/∂R_j for the k-th neighbor j of i. Displacements
/// are copied from the neighbor list so virials can be formed without it.
struct DescriptorSet {
  std::size_t num_radial = 0;
  std::size_t num_angular = 0;
  Eigen::MatrixXd values;  // N × num_features
  std::vector<Eigen::MatrixXd> jacobian;
  std::vector<std::vector<Neighbor>> neighbors;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(values.cols()); }
};

/// Evaluates the radial (G2) and angular (G4) functions with cosine cutoff
/// and their analytic derivatives with respect to all atomic coordinates.
inline DescriptorSet compute_acsf(const Structure& s, const NeighborList& nl, const AcsfParams& p,
                                  bool with_jacobian = true) {
  validate(p);
  if (nl.size() != s.size()) throw DataError("neighbor list does not match structure");
  if (std::abs(nl.cutoff - p.cutoff) > 1e-12)
    throw ConfigError("neighbor list cutoff differs from ACSF cutoff");
  const std::size_t n = s.size();
  const std::size_t nr = p.num_radial(), na = p.num_angular(), nf = p.num_features();
  const double rc = p.cutoff;

  DescriptorSet d;
  d.num_radial = nr;
  d.num_angular = na;
  d.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nf));
  d.jacobian.resize(n);
  d.neighbors = nl.neighbors;

  std::vector<double> angular_norm(na);
  for (std::size_t a = 0; a < na; ++a) angular_norm[a] = std::pow(2.0, 1.0 - p.angular[a].zeta);

  parallel_for(n, [&](std::size_t i) {
    const auto& nbrs = nl[i];
    const std::size_t m = nbrs.size();
    auto G = d.values.row(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd J;
    if (with_jacobian) J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(3 * (m + 1)), static_cast<Eigen::Index>(nf));
    auto add_grad = [&](std::size_t block, std::size_t col, const Vec3& g) {
      J.block<3, 1>(static_cast<Eigen::Index>(3 * block), static_cast<Eigen::Index>(col)) += g;
    };

    std::vector<double> fc(m), dfc(m), weight(m);
    std::vector<Vec3> unit(m);
    for (std::size_t k = 0; k < m; ++k) {
      const auto& nb = nbrs[k];
      fc[k] = cutoff_fn(nb.distance, rc);
      dfc[k] = cutoff_fn_deriv(nb.distance, rc);
      unit[k] = nb.displacement / nb.distance;
      weight[k] = p.element_resolved ? kAtomicNumberScale * s.species[nb.index] : 1.0;
    }

    for (std::size_t k = 0; k < m; ++k) {
      const double r = nbrs[k].distance;
      for (std::size_t f = 0; f < nr; ++f) {
        const double dr = r - p.radial[f].rs;
        const double g = std::exp(-p.radial[f].eta * dr * dr);
        G[static_cast<Eigen::Index>(f)] += weight[k] * g * fc[k];
        if (with_jacobian) {
          const double dg = -2.0 * p.radial[f].eta * dr * g;
          const Vec3 grad = weight[k] * (dg * fc[k] + g * dfc[k]) * unit[k];
          add_grad(k + 1, f, grad);
          add_grad(0, f, -grad);
        }
      }
    }

    if (na > 0)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = j + 1; k < m; ++k) {
          const Vec3& dij = nbrs[j].displacement;
          const Vec3& dik = nbrs[k].displacement;
          const Vec3 djk = dik - dij;
          const double rjk = djk.norm();
          if (rjk > rc) continue;
          const double rij = nbrs[j].distance, rik = nbrs[k].distance;
          const double cos_t = dij.dot(dik) / (rij * rik);
          const double fjk = cutoff_fn(rjk, rc), dfjk = cutoff_fn_deriv(rjk, rc);
          const double fprod = fc[j] * fc[k] * fjk;
          const double w = weight[j] * weight[k];
          const double r2sum = rij * rij + rik * rik + rjk * rjk;
          const Vec3 ujk = djk / rjk;
          // ∂cosθ/∂d_ij and ∂cosθ/∂d_ik
          const Vec3 dcos_j = dik / (rij * rik) - cos_t * dij / (rij * rij);
          const Vec3 dcos_k = dij / (rij * rik) - cos_t * dik / (rik * rik);
          // ∇ of the cutoff product
          const Vec3 dF_j = dfc[j] * fc[k] * fjk * unit[j] - fc[j] * fc[k] * dfjk * ujk;
          const Vec3 dF_k = fc[j] * dfc[k] * fjk * unit[k] + fc[j] * fc[k] * dfjk * ujk;
          for (std::size_t a = 0; a < na; ++a) {
            const auto& af = p.angular[a];
            const double base = std::max(0.0, 1.0 + af.lambda * cos_t);
            const double pw = std::pow(base, af.zeta);
            const double e = std::exp(-af.eta * r2sum);
            const double pref = angular_norm[a] * w;
            const std::size_t col = nr + a;
            G[static_cast<Eigen::Index>(col)] += pref * pw * e * fprod;
            if (with_jacobian) {
              const double dpw = af.zeta * af.lambda * std::pow(base, af.zeta - 1.0);
              const Vec3 gj = pref * (dpw * e * fprod * dcos_j + pw * e * fprod * (-2.0 * af.eta) * (dij - djk) +
                                      pw * e * dF_j);
              const Vec3 gk = pref * (dpw * e * fprod * dcos_k + pw * e * fprod * (-2.0 * af.eta) * (dik + djk) +
                                      pw * e * dF_k);
              add_grad(j + 1, col, gj);
              add_grad(k + 1, col, gk);
              add_grad(0, col, -(gj + gk));
            }
          }
        }
    G[static_cast<Eigen::Index>(nf - 1)] = kAtomicNumberScale * s.species[i];
    if (with_jacobian) d.jacobian[i] = std::move(J);
  });
  return d;
}

/// Directional derivative of every descriptor along a displacement field:
/// Ġ_i = Σ_β ∂G_i/∂R_β · u_β.
inline Eigen::MatrixXd descriptor_jvp(const DescriptorSet& d, const std::vector<Vec3>& u) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d.values.rows(), d.values.cols());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& J = d.jacobian[i];
    auto row = out.row(static_cast<Eigen::Index>(i));
    row += u[i].transpose() * J.topRows<3>();
    for (std::size_t k = 0; k < d.neighbors[i].size(); ++k)
      row += u[d.neighbors[i][k].index].transpose() * J.block(static_cast<Eigen::Index>(3 * (k + 1)), 0, 3, J.cols());
  }
  return out;
}

/// Accumulates -Σ_i (∂G_i/∂R_β)·seed_i into forces, where seed_i = ∂E/∂G_i.
inline void accumulate_descriptor_forces(const DescriptorSet& d, const Eigen::MatrixXd& seeds,
                                         std::vector<Vec3>& forces) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& J = d.jacobian[i];
    const Eigen::VectorXd g = seeds.row(static_cast<Eigen::Index>(i)).transpose();
    forces[i] -= J.topRows<3>() * g;
    for (std::size_t k = 0; k < d.neighbors[i].size(); ++k)
      forces[d.neighbors[i][k].index] -= J.block(static_cast<Eigen::Index>(3 * (k + 1)), 0, 3, J.cols()) * g;
  }
}

/// Per-atom static virial (eV) of atom-centered energies, split into the
/// radial and angular symmetry-function parts. W_i[p][q] = Σ_j d_ij,p ∂E_i/∂R_j,q
/// so that Σ_i W_i = ∂E/∂ε under a homogeneous strain.
struct AtomVirial {
  Mat3 radial = Mat3::Zero();
  Mat3 angular = Mat3::Zero();
  Mat3 total() const { return radial + angular; }
};

inline std::vector<AtomVirial> descriptor_virials(const DescriptorSet& d, const Eigen::MatrixXd& seeds) {
  std::vector<AtomVirial> out(d.size());
  const auto nr = static_cast<Eigen::Index>(d.num_radial);
  const auto na = static_cast<Eigen::Index>(d.num_angular);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& J = d.jacobian[i];
    const Eigen::RowVectorXd g = seeds.row(static_cast<Eigen::Index>(i));
    for (std::size_t k = 0; k < d.neighbors[i].size(); ++k) {
      const auto block = J.block(static_cast<Eigen::Index>(3 * (k + 1)), 0, 3, J.cols());
      const Vec3 grad_rad = block.leftCols(nr) * g.head(nr).transpose();
      const Vec3 grad_ang = block.middleCols(nr, na) * g.segment(nr, na).transpose();
      const Vec3& disp = d.neighbors[i][k].displacement;
      out[i].radial += disp * grad_rad.transpose();
      out[i].angular += disp * grad_ang.transpose();
    }
  }
  return out;
}

}  // namespace mamforge
