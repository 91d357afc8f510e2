#include <gtest/gtest.h>

#include "mamforge/electrostatics.hpp"
#include "mamforge/testing/oracles.hpp"

using namespace mamforge;
using mamforge::Rng;

namespace {

std::vector<double> random_alpha(Rng& rng, std::size_t n) {
  std::vector<double> a(n);
  for (auto& x : a) x = rng.uniform(0.6, 1.4);
  return a;
}

Eigen::MatrixXd random_symmetric(Rng& rng, Eigen::Index n) {
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) c(i, j) = c(j, i) = rng.uniform(-1, 1);
  return c;
}

Mat3 cubic_ish_cell() {
  Mat3 cell;
  cell << 7.5, 0, 0, 0.3, 7.4, 0, -0.2, 0.5, 7.8;
  return cell;
}

}  // namespace

TEST(GaussianCoulomb, Limits) {
  const double gamma = 1.3;
  const auto [v0, d0] = GaussianCoulomb::bare(0.0, gamma);
  EXPECT_NEAR(v0, units::kCoulomb * std::sqrt(2.0 / M_PI) / gamma, 1e-12);
  EXPECT_NEAR(d0, 0.0, 1e-15);
  const auto [vf, df] = GaussianCoulomb::bare(40.0, gamma);
  EXPECT_NEAR(vf, units::kCoulomb / 40.0, 1e-14);
  EXPECT_NEAR(df, -units::kCoulomb / 1600.0, 1e-14);
  // series and closed form agree across the switch
  const double r = 1e-3 * std::sqrt(2.0) * gamma;
  const double lo = GaussianCoulomb::bare(r * (1 - 1e-9), gamma).first;
  const double hi = GaussianCoulomb::bare(r * (1 + 1e-9), gamma).first;
  EXPECT_NEAR(lo, hi, 1e-11);
  EXPECT_NEAR(GaussianCoulomb::self(0.9), units::kCoulomb / (0.9 * std::sqrt(M_PI)), 1e-14);
}

TEST(GaussianCoulomb, DerivativeMatchesFiniteDifference) {
  const GaussianCoulomb bare, cut(6.0);
  for (double r : {0.3, 1.0, 2.2, 4.7, 5.9})
    for (const auto* k : {&bare, &cut}) {
      const double h = 1e-6;
      const double fd = ((*k)(r + h, 1.1).first - (*k)(r - h, 1.1).first) / (2 * h);
      EXPECT_NEAR((*k)(r, 1.1).second, fd, 1e-8);
    }
}

TEST(GaussianCoulomb, TruncationVanishesSmoothly) {
  const GaussianCoulomb k(6.0);
  const auto [v, d] = k(6.0 - 1e-12, 0.9);
  EXPECT_NEAR(v, 0.0, 1e-10);
  EXPECT_NEAR(d, 0.0, 1e-10);
  EXPECT_EQ(k(7.0, 0.9).first, 0.0);
  EXPECT_THROW(GaussianCoulomb(-1.0), ConfigError);
}

TEST(Kernel, ClusterEntriesAreBareKernel) {
  Rng rng(1);
  const auto s = oracle::random_cluster(rng, 5, 5.0, 1.0);
  const auto a = random_alpha(rng, 5);
  const auto A = coulomb_kernel(s, a, std::nullopt);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const double ref = i == j ? units::kCoulomb / (a[i] * std::sqrt(M_PI))
                                : units::kCoulomb *
                                      std::erf((s.positions[i] - s.positions[j]).norm() /
                                               (std::sqrt(2.0) * std::hypot(a[i], a[j]))) /
                                      (s.positions[i] - s.positions[j]).norm();
      EXPECT_NEAR(A(i, j), ref, 1e-12);
    }
}

TEST(Kernel, PeriodicRequiresCutoffAndIsSymmetric) {
  Rng rng(2);
  const auto s = oracle::random_periodic(rng, 6, cubic_ish_cell(), 1.0);
  const auto a = random_alpha(rng, 6);
  EXPECT_THROW(coulomb_kernel(s, a, std::nullopt), ConfigError);
  const auto A = coulomb_kernel(s, a, 12.0);
  EXPECT_LT((A - A.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  // Independent image sum over lattice translations.
  const GaussianCoulomb k(12.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double ref = i == j ? GaussianCoulomb::self(a[i]) : 0.0;
      const double g = std::hypot(a[i], a[j]);
      for (int x = -3; x <= 3; ++x)
        for (int y = -3; y <= 3; ++y)
          for (int z = -3; z <= 3; ++z) {
            if (i == j && !x && !y && !z) continue;
            const Vec3 d = s.positions[j] - s.positions[i] +
                           (x * s.cell.row(0) + y * s.cell.row(1) + z * s.cell.row(2)).transpose();
            ref += k(d.norm(), g).first;
          }
      EXPECT_NEAR(A(i, j), ref, 1e-11);
    }
}

TEST(Kernel, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (bool periodic : {false, true}) {
    const auto s = periodic ? oracle::random_periodic(rng, 6, cubic_ish_cell(), 1.0)
                            : oracle::random_cluster(rng, 6, 5.0, 1.0);
    const auto a = random_alpha(rng, 6);
    const std::optional<double> rc = periodic ? std::optional<double>(9.0) : std::nullopt;
    const Eigen::MatrixXd c = random_symmetric(rng, 6);
    auto energy = [&](const Structure& x) { return 0.5 * (c.array() * coulomb_kernel(x, a, rc).array()).sum(); };
    const auto g = kernel_gradient(s, a, rc, c);
    EXPECT_LT(oracle::max_abs_diff(g.forces, oracle::finite_difference_forces(energy, s, 1e-5)), 1e-8);
    if (periodic) {
      Mat3 w = Mat3::Zero();
      for (const auto& v : g.virials) w += v;
      EXPECT_LT((w / volume(s) - oracle::finite_difference_stress(energy, s, 1e-6)).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(Kernel, JvpMatchesFiniteDifference) {
  Rng rng(4);
  const auto s = oracle::random_periodic(rng, 5, cubic_ish_cell(), 1.0);
  const auto a = random_alpha(rng, 5);
  std::vector<Vec3> u;
  for (std::size_t i = 0; i < 5; ++i) u.push_back(rng.vec(-1, 1));
  const double h = 1e-6;
  Structure plus = s, minus = s;
  for (std::size_t i = 0; i < 5; ++i) {
    plus.positions[i] += h * u[i];
    minus.positions[i] -= h * u[i];
  }
  const Eigen::MatrixXd fd = (coulomb_kernel(plus, a, 9.0) - coulomb_kernel(minus, a, 9.0)) / (2 * h);
  EXPECT_LT((kernel_jvp(s, a, 9.0, u) - fd).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Qeq, TwoAtomClosedForm) {
  const auto s = make_structure({3, 9}, {Vec3::Zero(), Vec3(0, 0, 1.6)});
  Eigen::VectorXd chi(2);
  chi << -0.5, 2.5;
  const auto sys = make_qeq_system(s, chi, {7.0, 11.0}, {1.2, 0.7}, std::nullopt);
  const auto sol = equilibrate_charges(sys);
  const double gamma = std::hypot(1.2, 0.7);
  const double a12 = units::kCoulomb * std::erf(1.6 / (std::sqrt(2.0) * gamma)) / 1.6;
  const double a11 = 7.0 + units::kCoulomb / (1.2 * std::sqrt(M_PI));
  const double a22 = 11.0 + units::kCoulomb / (0.7 * std::sqrt(M_PI));
  const double q1 = (chi(1) - chi(0)) / (a11 + a22 - 2 * a12);
  EXPECT_NEAR(sol.charges(0), q1, 1e-10);
  EXPECT_NEAR(sol.charges(1), -q1, 1e-10);
  EXPECT_NEAR(sol.mu, chi(0) + a11 * q1 - a12 * q1, 1e-10);
  EXPECT_LT(sol.residual, 1e-10);
}

TEST(Qeq, ConservesTotalCharge) {
  Rng rng(5);
  for (double qtot : {0.0, 1.0, -2.0}) {
    auto s = oracle::random_cluster(rng, 12, 7.0, 1.0);
    s.total_charge = qtot;
    Eigen::VectorXd chi(12);
    for (auto& x : chi) x = rng.uniform(-3, 3);
    const auto sol = equilibrate_charges(make_qeq_system(s, chi, std::vector<double>(12, 8.0), random_alpha(rng, 12), std::nullopt));
    EXPECT_NEAR(sol.charges.sum(), qtot, 1e-10);
    EXPECT_LT(sol.residual, 1e-9);
  }
}

TEST(Qeq, SolutionMinimizesEnergyOnConstraintSurface) {
  Rng rng(6);
  const auto s = oracle::random_cluster(rng, 6, 5.0, 1.0);
  Eigen::VectorXd chi(6);
  for (auto& x : chi) x = rng.uniform(-2, 2);
  const auto sys = make_qeq_system(s, chi, std::vector<double>(6, 9.0), random_alpha(rng, 6), std::nullopt);
  const auto q = equilibrate_charges(sys).charges;
  const double e0 = electrostatic_energy(q, sys.kernel, sys.chi);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd dq(6);
    for (auto& x : dq) x = rng.uniform(-0.1, 0.1);
    dq.array() -= dq.mean();
    EXPECT_GT(electrostatic_energy(q + dq, sys.kernel, sys.chi), e0);
  }
}

TEST(Qeq, ChainTransfersChargeToFarEnd) {
  std::vector<Vec3> pos;
  for (int k = 0; k < 10; ++k) pos.emplace_back(0, 0, 2.5 * k);
  const auto s = make_structure(std::vector<int>(10, 6), pos);
  Eigen::VectorXd chi = Eigen::VectorXd::Zero(10);
  const std::vector<double> hard(10, 10.0), alpha(10, 0.8);
  const auto q0 = equilibrate_charges(make_qeq_system(s, chi, hard, alpha, std::nullopt)).charges;
  chi(0) = 1.0;
  const auto q1 = equilibrate_charges(make_qeq_system(s, chi, hard, alpha, std::nullopt)).charges;
  EXPECT_GT(std::abs(q1(9) - q0(9)), 1e-6);
}

TEST(Qeq, SingularSystemIsNumericalError) {
  EXPECT_THROW(KktSolver(Eigen::MatrixXd::Zero(3, 3)), NumericalError);
  EXPECT_THROW(KktSolver(Eigen::MatrixXd::Ones(3, 3)), NumericalError);
}

TEST(Qeq, IterativePathSatisfiesKkt) {
  Rng rng(7);
  const Eigen::Index n = static_cast<Eigen::Index>(kDenseSolveLimit) + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    A(i, i) = 10.0;
    if (i + 1 < n) A(i, i + 1) = A(i + 1, i) = 1.0;
  }
  Eigen::VectorXd top(n);
  for (auto& x : top) x = rng.uniform(-1, 1);
  const KktSolver solver(A);
  const auto [x, nu] = solver.solve(top, 0.5);
  EXPECT_LT((A * x + Eigen::VectorXd::Constant(n, nu) - top).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(x.sum(), 0.5, 1e-8);
}
