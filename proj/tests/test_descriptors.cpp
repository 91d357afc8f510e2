#include <gtest/gtest.h>

#include "mamforge/acsf.hpp"
#include "mamforge/testing/oracles.hpp"

using namespace mamforge;
using mamforge::Rng;

namespace {

// Direct evaluation of the symmetry functions from their definitions, with
// a plain O(N³) loop over all atoms of a cluster.
Eigen::MatrixXd naive_acsf(const Structure& s, const AcsfParams& p) {
  const std::size_t n = s.size(), nr = p.num_radial(), na = p.num_angular();
  const double rc = p.cutoff;
  auto fc = [&](double r) { return r <= rc ? 0.5 * (std::cos(M_PI * r / rc) + 1.0) : 0.0; };
  auto w = [&](std::size_t j) { return p.element_resolved ? 0.1 * s.species[j] : 1.0; };
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nr + na + 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double rij = (s.positions[j] - s.positions[i]).norm();
      for (std::size_t f = 0; f < nr; ++f)
        G(i, f) += w(j) * std::exp(-p.radial[f].eta * std::pow(rij - p.radial[f].rs, 2)) * fc(rij);
      for (std::size_t k = j + 1; k < n; ++k) {
        if (k == i) continue;
        const Vec3 a = s.positions[j] - s.positions[i], b = s.positions[k] - s.positions[i];
        const double rik = b.norm(), rjk = (a - b).norm();
        if (rij > rc || rik > rc || rjk > rc) continue;
        const double c = a.dot(b) / (rij * rik);
        for (std::size_t f = 0; f < na; ++f) {
          const auto& q = p.angular[f];
          G(i, nr + f) += std::pow(2.0, 1.0 - q.zeta) * w(j) * w(k) * std::pow(1.0 + q.lambda * c, q.zeta) *
                          std::exp(-q.eta * (rij * rij + rik * rik + rjk * rjk)) * fc(rij) * fc(rik) * fc(rjk);
        }
      }
    }
    G(i, nr + na) = 0.1 * s.species[i];
  }
  return G;
}

}  // namespace

TEST(Acsf, DefaultGrid) {
  const auto p = default_acsf();
  EXPECT_EQ(p.num_radial(), 8u);
  EXPECT_EQ(p.num_angular(), 8u);
  EXPECT_EQ(p.num_features(), 17u);
  EXPECT_NEAR(p.radial.front().eta, 0.01, 1e-15);
  EXPECT_NEAR(p.radial.back().eta, 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(p.cutoff, 8.9);
}

TEST(Acsf, CutoffFunction) {
  EXPECT_DOUBLE_EQ(cutoff_fn(0.0, 5.0), 1.0);
  EXPECT_NEAR(cutoff_fn(5.0, 5.0), 0.0, 1e-16);
  EXPECT_DOUBLE_EQ(cutoff_fn(6.0, 5.0), 0.0);
  EXPECT_NEAR(cutoff_fn_deriv(5.0, 5.0), 0.0, 1e-16);
  EXPECT_NEAR(cutoff_fn(2.5, 5.0), 0.5, 1e-15);
}

TEST(Acsf, ValuesMatchDirectSums) {
  Rng rng(5);
  for (bool resolved : {false, true}) {
    auto p = default_acsf(4.5);
    p.element_resolved = resolved;
    for (int t = 0; t < 4; ++t) {
      const auto s = oracle::random_cluster(rng, 9, 6.0, 0.9, {1, 3, 8});
      const auto d = compute_acsf(s, build_neighbor_list(s, p.cutoff), p, false);
      const auto ref = naive_acsf(s, p);
      EXPECT_LT((d.values - ref).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(Acsf, JacobianMatchesFiniteDifferences) {
  Rng rng(7);
  auto p = default_acsf();
  for (int t = 0; t < 5; ++t) {
    const auto s = oracle::random_cluster(rng, 8, 4.0, 1.0, {3, 8});
    EXPECT_LT(oracle::jacobian_fd_error(s, p, 1e-5), 1e-7);
  }
  p.element_resolved = true;
  const auto s = oracle::random_cluster(rng, 8, 4.0, 1.0, {3, 8});
  EXPECT_LT(oracle::jacobian_fd_error(s, p, 1e-5), 1e-7);
}

TEST(Acsf, JacobianPeriodic) {
  Rng rng(8);
  const auto p = default_acsf(3.5);
  Mat3 cell;
  cell << 7.5, 0, 0, 0.4, 7.6, 0, -0.3, 0.2, 7.7;
  const auto s = oracle::random_periodic(rng, 8, cell, 1.2, {3, 8});
  EXPECT_LT(oracle::jacobian_fd_error(s, p, 1e-5), 1e-7);
}

TEST(Acsf, InvariantUnderRigidMotionAndPermutation) {
  Rng rng(9);
  const auto p = default_acsf();
  const auto s = oracle::random_cluster(rng, 10, 5.0, 1.0, {1, 6, 8});
  const auto g = compute_acsf(s, build_neighbor_list(s, p.cutoff), p, false).values;
  const auto moved = oracle::rigid_motion(s, oracle::rotation(0.3, -1.1, 2.0), Vec3(1.5, -7.0, 3.0));
  const auto gm = compute_acsf(moved, build_neighbor_list(moved, p.cutoff), p, false).values;
  EXPECT_LT((g - gm).cwiseAbs().maxCoeff(), 1e-9);

  std::vector<std::size_t> perm{3, 1, 9, 0, 5, 2, 8, 4, 7, 6};
  Structure ps = s;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    ps.positions[k] = s.positions[perm[k]];
    ps.species[k] = s.species[perm[k]];
    ps.masses[k] = s.masses[perm[k]];
  }
  const auto gp = compute_acsf(ps, build_neighbor_list(ps, p.cutoff), p, false).values;
  for (std::size_t k = 0; k < perm.size(); ++k)
    EXPECT_LT((gp.row(k) - g.row(perm[k])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Acsf, JvpMatchesDenseJacobian) {
  Rng rng(10);
  const auto p = default_acsf();
  const auto s = oracle::random_cluster(rng, 7, 4.0, 1.0);
  const auto d = compute_acsf(s, build_neighbor_list(s, p.cutoff), p);
  std::vector<Vec3> u;
  Eigen::VectorXd flat(3 * s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    u.push_back(rng.vec(-1, 1));
    flat.segment<3>(3 * i) = u.back();
  }
  const Eigen::VectorXd ref = oracle::dense_jacobian(d) * flat;
  const auto got = descriptor_jvp(d, u);
  const auto nf = static_cast<Eigen::Index>(d.num_features());
  for (Eigen::Index i = 0; i < got.rows(); ++i)
    for (Eigen::Index f = 0; f < nf; ++f) EXPECT_NEAR(got(i, f), ref(i * nf + f), 1e-12);
}

TEST(Acsf, VirialMatchesStrainDerivative) {
  Rng rng(14);
  const auto p = default_acsf(3.5);
  Mat3 cell;
  cell << 7.5, 0, 0, 0.5, 7.5, 0, 0.2, -0.4, 7.8;
  const auto s = oracle::random_periodic(rng, 8, cell, 1.2, {3, 8});
  // Linear functional E = Σ_i c·G_i with random weights.
  Eigen::RowVectorXd c(static_cast<Eigen::Index>(p.num_features()));
  for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = rng.uniform(-1, 1);
  auto energy = [&](const Structure& x) {
    return (compute_acsf(x, build_neighbor_list(x, p.cutoff), p, false).values * c.transpose()).sum();
  };
  const auto d = compute_acsf(s, build_neighbor_list(s, p.cutoff), p);
  const Eigen::MatrixXd seeds = c.replicate(static_cast<Eigen::Index>(s.size()), 1);
  Mat3 w = Mat3::Zero();
  for (const auto& av : descriptor_virials(d, seeds)) w += av.total();
  const Mat3 fd = oracle::finite_difference_stress(energy, s, 1e-6);
  EXPECT_LT((w / volume(s) - fd).cwiseAbs().maxCoeff(), 1e-7);

  std::vector<Vec3> f(s.size(), Vec3::Zero());
  accumulate_descriptor_forces(d, seeds, f);
  EXPECT_LT(oracle::max_abs_diff(f, oracle::finite_difference_forces(energy, s, 1e-5)), 1e-7);
}

TEST(Acsf, IsolatedAtomHasOnlyElementFeature) {
  const auto s = make_structure({8}, {Vec3::Zero()});
  const auto p = default_acsf();
  const auto d = compute_acsf(s, build_neighbor_list(s, p.cutoff), p);
  EXPECT_DOUBLE_EQ(d.values(0, 16), 0.8);
  EXPECT_DOUBLE_EQ(d.values.leftCols(16).cwiseAbs().sum(), 0.0);
}

TEST(Acsf, RejectsBadParameters) {
  AcsfParams p = default_acsf();
  p.angular[0].lambda = 0.5;
  EXPECT_THROW(validate(p), ConfigError);
  p = default_acsf();
  p.angular[0].zeta = 0.5;
  EXPECT_THROW(validate(p), ConfigError);
  p = default_acsf();
  const auto s = make_structure({8}, {Vec3::Zero()});
  EXPECT_THROW(compute_acsf(s, build_neighbor_list(s, 3.0), p), ConfigError);
}
