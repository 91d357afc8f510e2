#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>

#include "mamforge/model.hpp"
#include "mamforge/neighbor_list.hpp"
#include "mamforge/units.hpp"

namespace mamforge {

/// Interaction of two Gaussian charge clouds of combined width γ at distance r
/// (eV/e²), optionally truncated so that value and slope vanish at the cutoff.
class GaussianCoulomb {
 public:
  explicit GaussianCoulomb(std::optional<double> cutoff = std::nullopt) : cutoff_(cutoff) {
    if (cutoff_ && !(*cutoff_ > 0.0)) throw ConfigError("electrostatic cutoff must be positive");
  }

  const std::optional<double>& cutoff() const { return cutoff_; }

  /// Bare value and radial derivative.
  static std::pair<double, double> bare(double r, double gamma) {
    const double s = 1.0 / (std::sqrt(2.0) * gamma);
    const double x = r * s;
    constexpr double two_over_sqrt_pi = 1.1283791670955126;
    if (x < 1e-3) {
      // erf(x)/x = 2/√π (1 - x²/3 + x⁴/10 - ...)
      const double x2 = x * x;
      const double value = units::kCoulomb * s * two_over_sqrt_pi * (1.0 - x2 / 3.0 + x2 * x2 / 10.0);
      const double deriv = units::kCoulomb * s * s * two_over_sqrt_pi * (-2.0 * x / 3.0 + 0.4 * x2 * x);
      return {value, deriv};
    }
    const double e = std::erf(x);
    const double value = units::kCoulomb * e / r;
    const double deriv = units::kCoulomb * (two_over_sqrt_pi * s * std::exp(-x * x) / r - e / (r * r));
    return {value, deriv};
  }

  std::pair<double, double> operator()(double r, double gamma) const {
    if (!cutoff_) return bare(r, gamma);
    const double rc = *cutoff_;
    if (r >= rc) return {0.0, 0.0};
    const auto [v, dv] = bare(r, gamma);
    const auto [vc, dvc] = bare(rc, gamma);
    return {v - vc - dvc * (r - rc), dv - dvc};
  }

  /// Self-interaction of one Gaussian of width alpha.
  static double self(double alpha) { return units::kCoulomb / (alpha * std::sqrt(units::kPi)); }

 private:
  std::optional<double> cutoff_;
};

/// One interacting pair image: atoms i ≤ j, separation vector d = R_j - R_i + T.
struct KernelTerm {
  std::size_t i;
  std::size_t j;
  Vec3 d;
  double r;
  double value;
  double deriv;
};

/// Visits every pair image contributing to the interaction matrix. Clusters
/// use the bare kernel between distinct atoms (or the truncated one if a
/// cutoff is given); periodic structures sum over all lattice images inside
/// the cutoff, including images of an atom with itself.
template <class Fn>
void for_each_kernel_term(const Structure& s, const std::vector<double>& alpha, const GaussianCoulomb& kernel,
                          Fn&& fn) {
  const std::size_t n = s.size();
  if (alpha.size() != n) throw DataError("alpha array length differs from atom count");
  for (double a : alpha)
    if (!(a > 0.0)) throw DataError("Gaussian widths must be positive");
  if (!s.any_periodic()) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const Vec3 d = s.positions[j] - s.positions[i];
        const double r = d.norm();
        if (r == 0.0) throw DataError("coincident atoms in electrostatic kernel");
        const double gamma = std::sqrt(alpha[i] * alpha[i] + alpha[j] * alpha[j]);
        const auto [v, dv] = kernel(r, gamma);
        if (v != 0.0 || dv != 0.0) fn(KernelTerm{i, j, d, r, v, dv});
      }
    return;
  }
  if (!kernel.cutoff()) throw ConfigError("periodic electrostatics requires a cutoff (Ewald summation is not provided)");
  const double rc = *kernel.cutoff();
  const Vec3 w = perpendicular_widths(s.cell);
  std::array<int, 3> reach{};
  for (int a = 0; a < 3; ++a) reach[a] = s.periodic[a] ? static_cast<int>(std::ceil(rc / w[a])) + 1 : 0;
  const MinimumImage image(s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const Vec3 base = image(s.positions[j] - s.positions[i]);
      const double gamma = std::sqrt(alpha[i] * alpha[i] + alpha[j] * alpha[j]);
      for (int a = -reach[0]; a <= reach[0]; ++a)
        for (int b = -reach[1]; b <= reach[1]; ++b)
          for (int c = -reach[2]; c <= reach[2]; ++c) {
            const Vec3 d = base + (a * s.cell.row(0) + b * s.cell.row(1) + c * s.cell.row(2)).transpose();
            const double r = d.norm();
            if (r >= rc) continue;
            if (r == 0.0) {
              if (i == j) continue;
              throw DataError("coincident atoms in electrostatic kernel");
            }
            const auto [v, dv] = kernel(r, gamma);
            fn(KernelTerm{i, j, d, r, v, dv});
          }
    }
}

/// Interaction matrix (eV/e²) with self terms k_e/(α_i√π) on the diagonal.
inline Eigen::MatrixXd coulomb_kernel(const Structure& s, const std::vector<double>& alpha,
                                      std::optional<double> cutoff = std::nullopt) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) A(i, i) = GaussianCoulomb::self(alpha[static_cast<std::size_t>(i)]);
  for_each_kernel_term(s, alpha, GaussianCoulomb(cutoff), [&](const KernelTerm& t) {
    const auto i = static_cast<Eigen::Index>(t.i), j = static_cast<Eigen::Index>(t.j);
    A(i, j) += t.value;
    if (i != j) A(j, i) += t.value;
  });
  return A;
}

/// Directional derivative of the off-diagonal kernel along displacement field u.
inline Eigen::MatrixXd kernel_jvp(const Structure& s, const std::vector<double>& alpha, std::optional<double> cutoff,
                                  const std::vector<Vec3>& u) {
  const auto n = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd dA = Eigen::MatrixXd::Zero(n, n);
  for_each_kernel_term(s, alpha, GaussianCoulomb(cutoff), [&](const KernelTerm& t) {
    if (t.i == t.j) return;
    const double v = t.deriv * t.d.dot(u[t.j] - u[t.i]) / t.r;
    dA(static_cast<Eigen::Index>(t.i), static_cast<Eigen::Index>(t.j)) += v;
    dA(static_cast<Eigen::Index>(t.j), static_cast<Eigen::Index>(t.i)) += v;
  });
  return dA;
}

/// Charge-equilibration problem: minimize χ·Q + ½ QᵀAQ subject to ΣQ = Q_tot.
/// A already contains hardness and self terms on its diagonal.
struct QeqSystem {
  Eigen::VectorXd chi;       // V
  Eigen::VectorXd hardness;  // eV/e²
  Eigen::VectorXd alpha;     // Å
  Eigen::MatrixXd kernel;    // eV/e², full matrix incl. diagonal
  double total_charge = 0.0;
};

inline QeqSystem make_qeq_system(const Structure& s, Eigen::VectorXd chi, const std::vector<double>& hardness,
                                 const std::vector<double>& alpha, std::optional<double> cutoff) {
  QeqSystem sys;
  sys.chi = std::move(chi);
  sys.hardness = Eigen::Map<const Eigen::VectorXd>(hardness.data(), static_cast<Eigen::Index>(hardness.size()));
  sys.alpha = Eigen::Map<const Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  sys.kernel = coulomb_kernel(s, alpha, cutoff);
  sys.kernel.diagonal() += sys.hardness;
  sys.total_charge = s.total_charge;
  return sys;
}

struct ChargeSolution {
  Eigen::VectorXd charges;  // e
  double mu = 0.0;          // V
  double residual = 0.0;    // ‖χ + AQ − μ‖∞ (V)
};

inline constexpr std::size_t kDenseSolveLimit = 2000;
inline constexpr double kMaxCondition = 1e12;

/// Factorized KKT operator [[A, 1], [1ᵀ, 0]]. Dense LU up to
/// kDenseSolveLimit atoms; above that, conjugate gradients on A with a Schur
/// complement for the constraint.
class KktSolver {
 public:
  explicit KktSolver(const Eigen::MatrixXd& A) : n_(A.rows()) {
    if (A.rows() != A.cols() || n_ < 1) throw DataError("interaction matrix must be square and nonempty");
    if (static_cast<std::size_t>(n_) <= kDenseSolveLimit) {
      Eigen::MatrixXd K(n_ + 1, n_ + 1);
      K.topLeftCorner(n_, n_) = A;
      K.col(n_).head(n_).setOnes();
      K.row(n_).head(n_).setOnes();
      K(n_, n_) = 0.0;
      lu_.compute(K);
      const double rcond = lu_.rcond();
      if (!(rcond > 0.0) || 1.0 / rcond > kMaxCondition)
        throw NumericalError("charge-equilibration system is singular or ill-conditioned");
    } else {
      dense_ = false;
      a_ = std::make_shared<const Eigen::MatrixXd>(A);  // the solver keeps a reference
      cg_.setTolerance(1e-10);
      cg_.setMaxIterations(10 * static_cast<int>(n_));
      cg_.compute(*a_);
      const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n_);
      a_inv_ones_ = cg_.solve(ones);
      if (cg_.info() != Eigen::Success) throw NumericalError("conjugate-gradient charge solve failed");
      schur_ = ones.dot(a_inv_ones_);
      if (!(std::abs(schur_) > 0.0)) throw NumericalError("charge-equilibration system is singular");
    }
  }

  /// Solves A x + ν 1 = top, 1ᵀx = bottom.
  std::pair<Eigen::VectorXd, double> solve(const Eigen::VectorXd& top, double bottom) const {
    if (dense_) {
      Eigen::VectorXd rhs(n_ + 1);
      rhs.head(n_) = top;
      rhs(n_) = bottom;
      const Eigen::VectorXd x = lu_.solve(rhs);
      return {x.head(n_), x(n_)};
    }
    const Eigen::VectorXd y = cg_.solve(top);
    if (cg_.info() != Eigen::Success) throw NumericalError("conjugate-gradient charge solve failed");
    const double nu = (Eigen::VectorXd::Ones(n_).dot(y) - bottom) / schur_;
    return {y - nu * a_inv_ones_, nu};
  }

 private:
  Eigen::Index n_;
  bool dense_ = true;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  std::shared_ptr<const Eigen::MatrixXd> a_;
  Eigen::ConjugateGradient<Eigen::MatrixXd, Eigen::Lower | Eigen::Upper> cg_;
  Eigen::VectorXd a_inv_ones_;
  double schur_ = 0.0;
};

inline ChargeSolution solve_charges(const KktSolver& solver, const QeqSystem& sys) {
  auto [q, nu] = solver.solve(-sys.chi, sys.total_charge);
  ChargeSolution sol;
  sol.charges = std::move(q);
  sol.mu = -nu;
  sol.residual = ((sys.chi + sys.kernel * sol.charges).array() - sol.mu).abs().maxCoeff();
  if (!sol.charges.allFinite()) throw NumericalError("charge equilibration produced non-finite charges");
  return sol;
}

inline ChargeSolution equilibrate_charges(const QeqSystem& sys) {
  if (sys.chi.size() != sys.kernel.rows()) throw DataError("electronegativity/kernel dimension mismatch");
  return solve_charges(KktSolver(sys.kernel), sys);
}

/// χ·Q + ½ QᵀAQ (eV).
inline double electrostatic_energy(const Eigen::VectorXd& charges, const Eigen::MatrixXd& kernel,
                                   const Eigen::VectorXd& chi) {
  return chi.dot(charges) + 0.5 * charges.dot(kernel * charges);
}

/// Forces (eV/Å) and per-atom virials (eV) of ½ Σ_ij c_ij A_ij(R) for a
/// fixed symmetric weight matrix c. With c = QQᵀ this is the frozen-charge
/// Coulomb force.
struct KernelGradient {
  std::vector<Vec3> forces;
  std::vector<Mat3> virials;
};

inline KernelGradient kernel_gradient(const Structure& s, const std::vector<double>& alpha,
                                      std::optional<double> cutoff, const Eigen::MatrixXd& weights) {
  KernelGradient g;
  g.forces.assign(s.size(), Vec3::Zero());
  g.virials.assign(s.size(), Mat3::Zero());
  for_each_kernel_term(s, alpha, GaussianCoulomb(cutoff), [&](const KernelTerm& t) {
    const double c = weights(static_cast<Eigen::Index>(t.i), static_cast<Eigen::Index>(t.j));
    const Mat3 vir = c * t.deriv / t.r * (t.d * t.d.transpose());
    if (t.i == t.j) {
      g.virials[t.i] += 0.5 * vir;  // each image T of the diagonal carries ½c_ii
      return;
    }
    const Vec3 f = c * t.deriv / t.r * t.d;  // ∂Φ/∂R_j
    g.forces[t.j] -= f;
    g.forces[t.i] += f;
    g.virials[t.i] += 0.5 * vir;
    g.virials[t.j] += 0.5 * vir;
  });
  return g;
}

inline KernelGradient frozen_charge_kernel_forces(const Structure& s, const std::vector<double>& alpha,
                                                  const Eigen::VectorXd& charges,
                                                  std::optional<double> cutoff = std::nullopt) {
  return kernel_gradient(s, alpha, cutoff, charges * charges.transpose());
}

}  // namespace mamforge
