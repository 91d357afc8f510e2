#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>

#include "mamforge/neighbor_list.hpp"
#include "mamforge/parallel.hpp"
#include "mamforge/testing/oracles.hpp"
#include "mamforge/xyz.hpp"

using namespace mamforge;
using mamforge::Rng;

TEST(Elements, LookupBothWays) {
  EXPECT_EQ(atomic_number("Li"), 3);
  EXPECT_EQ(atomic_number("O"), 8);
  EXPECT_EQ(std::string(element(26).symbol), "Fe");
  EXPECT_NEAR(element(1).mass, 1.008, 1e-3);
  EXPECT_THROW(atomic_number("Xx"), DataError);
  EXPECT_THROW(element(0), DataError);
}

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code(ErrorKind::Usage), 64);
  EXPECT_EQ(exit_code(ErrorKind::Config), 65);
  EXPECT_EQ(exit_code(ErrorKind::Data), 66);
  EXPECT_EQ(exit_code(ErrorKind::Numerical), 70);
  EXPECT_EQ(DataError("x").kind(), ErrorKind::Data);
}

TEST(Structure, ValidationRejectsBadInput) {
  EXPECT_THROW(make_structure({}, {}), DataError);
  EXPECT_THROW(make_structure({1, 1}, {Vec3::Zero()}), DataError);
  EXPECT_THROW(make_structure({1}, {Vec3::Zero()}, Mat3::Zero(), {true, false, false}), DataError);
  Structure s = make_structure({1}, {Vec3::Zero()});
  s.masses[0] = -1.0;
  EXPECT_THROW(validate(s), DataError);
}

TEST(Structure, StrainScalesVolumeAndKeepsFractions) {
  Rng rng(3);
  Mat3 cell;
  cell << 5, 0, 0, 1, 6, 0, 0.5, 0.3, 7;
  auto s = oracle::random_periodic(rng, 5, cell, 1.0);
  Mat3 eps;
  eps << 0.01, 0.002, 0, 0.002, -0.02, 0.003, 0, 0.003, 0.005;
  auto t = apply_strain(s, eps);
  EXPECT_NEAR(volume(t), volume(s) * (Mat3::Identity() + eps).determinant(), 1e-9);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Eigen::RowVector3d f0 = s.positions[i].transpose() * s.cell.inverse();
    const Eigen::RowVector3d f1 = t.positions[i].transpose() * t.cell.inverse();
    EXPECT_LT((f0 - f1).norm(), 1e-12);
  }
}

TEST(Structure, ReplicateCountsAndVolume) {
  Rng rng(4);
  auto s = oracle::random_periodic(rng, 3, Mat3::Identity() * 4.0, 1.0);
  auto r = replicate(s, 2, 1, 3);
  EXPECT_EQ(r.size(), 18u);
  EXPECT_NEAR(volume(r), 6.0 * volume(s), 1e-9);
}

TEST(Structure, RegionVolume) {
  Mat3 cell;
  cell << 4, 0, 0, 1, 5, 0, 0, 0, 10;
  EXPECT_NEAR(region_volume(cell, Region(2, 2.0, 5.0)), 3.0 * 20.0, 1e-12);
  EXPECT_NEAR(region_volume(cell, Region(2, -100.0, 100.0)), 200.0, 1e-9);
  Mat3 skew;
  skew << 4, 0, 0, 0, 5, 0, 1, 0, 10;
  EXPECT_THROW(region_volume(skew, Region(0, 0.0, 1.0)), DataError);
  EXPECT_THROW(Region(1, 2.0, 2.0), ConfigError);
  Region r(0, 1.0, 3.0);
  EXPECT_DOUBLE_EQ(r.distance(Vec3(0.5, 0, 0)), 0.5);
  EXPECT_DOUBLE_EQ(r.distance(Vec3(2.0, 0, 0)), 0.0);
  EXPECT_DOUBLE_EQ(r.depth(Vec3(2.5, 0, 0)), 0.5);
}

namespace {

void expect_matches_brute_force(const Structure& s, double cutoff) {
  const auto nl = build_neighbor_list(s, cutoff);
  std::vector<std::tuple<std::size_t, std::size_t, double>> got;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t k = 0; k < nl[i].size(); ++k) {
      const auto& nb = nl[i][k];
      if (k > 0) {
        EXPECT_LT(nl[i][k - 1].index, nb.index);
      }
      EXPECT_NEAR(nb.displacement.norm(), nb.distance, 1e-12);
      got.emplace_back(i, nb.index, nb.distance);
    }
  }
  std::sort(got.begin(), got.end());
  const auto want = oracle::brute_force_pairs(s, cutoff);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t k = 0; k < got.size(); ++k) {
    EXPECT_EQ(std::get<0>(got[k]), std::get<0>(want[k]));
    EXPECT_EQ(std::get<1>(got[k]), std::get<1>(want[k]));
    EXPECT_NEAR(std::get<2>(got[k]), std::get<2>(want[k]), 1e-12);
  }
}

}  // namespace

TEST(NeighborList, MatchesBruteForceCluster) {
  Rng rng(11);
  for (int t = 0; t < 5; ++t) expect_matches_brute_force(oracle::random_cluster(rng, 40, 12.0, 0.8), 3.7);
}

TEST(NeighborList, MatchesBruteForcePeriodicSkewed) {
  Rng rng(12);
  Mat3 cell;
  cell << 9, 0, 0, 2.5, 9.5, 0, -1.5, 1.0, 10;
  for (int t = 0; t < 5; ++t) expect_matches_brute_force(oracle::random_periodic(rng, 30, cell, 0.8), 3.9);
}

TEST(NeighborList, MixedPeriodicity) {
  Rng rng(13);
  auto s = oracle::random_periodic(rng, 20, Mat3::Identity() * 8.0, 0.9);
  s.periodic = {true, true, false};
  expect_matches_brute_force(s, 3.5);
}

TEST(NeighborList, Errors) {
  auto s = make_structure({1, 1}, {Vec3::Zero(), Vec3::Zero()});
  EXPECT_THROW(build_neighbor_list(s, 2.0), DataError);
  auto p = make_structure({1}, {Vec3::Zero()}, Mat3::Identity() * 3.0, {true, true, true});
  EXPECT_THROW(build_neighbor_list(p, 2.0), DataError);
  EXPECT_THROW(build_neighbor_list(p, 0.0), ConfigError);
}

TEST(Xyz, RoundTrip) {
  Rng rng(21);
  Mat3 cell;
  cell << 6, 0, 0, 0.5, 6, 0, 0, 0, 7;
  Frame f;
  f.structure = oracle::random_periodic(rng, 4, cell, 1.0, {3, 8});
  f.structure.velocities = std::vector<Vec3>{{0.1, 0, 0}, {0, 0.2, 0}, {0, 0, 0.3}, {0.01, 0.02, 0.03}};
  f.energy = -12.5;
  f.forces = std::vector<Vec3>(4, Vec3(0.25, -0.5, 1.0));
  f.charges = std::vector<double>{-0.3, -0.1, 0.1, 0.3};
  const auto text = format_frames({f, f});
  const auto back = parse_frames(text);
  ASSERT_EQ(back.size(), 2u);
  const auto& g = back[1];
  EXPECT_EQ(g.structure.species, f.structure.species);
  EXPECT_TRUE(g.structure.periodic[2]);
  EXPECT_LT((g.structure.cell - cell).norm(), 1e-10);
  ASSERT_TRUE(g.energy && g.forces && g.charges && g.structure.velocities);
  EXPECT_NEAR(*g.energy, -12.5, 1e-12);
  EXPECT_LT(oracle::max_abs_diff(g.structure.positions, f.structure.positions), 1e-10);
  EXPECT_LT(oracle::max_abs_diff(*g.structure.velocities, *f.structure.velocities), 1e-12);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR((*g.charges)[i], (*f.charges)[i], 1e-12);
}

TEST(Xyz, ParsesPlainXyz) {
  const auto s = parse_structure("2\ncomment\nH 0 0 0\nH 0 0 0.74\n");
  EXPECT_EQ(s.size(), 2u);
  EXPECT_FALSE(s.any_periodic());
  EXPECT_NEAR(s.positions[1][2], 0.74, 1e-15);
}

TEST(Xyz, MalformedInputIsDataError) {
  EXPECT_THROW(parse_structure("3\nx\nH 0 0 0\n"), DataError);
  EXPECT_THROW(parse_structure("1\nx\nQq 0 0 0\n"), DataError);
  EXPECT_THROW(parse_structure("1\npbc=\"T T T\"\nH 0 0 0\n"), DataError);
  EXPECT_THROW(parse_structure("1\nLattice=\"1 0 0 0 1 0 0 0 0\" pbc=\"T T T\"\nH 0 0 0\n"), DataError);
  EXPECT_THROW(parse_structure("x\n"), DataError);
}

TEST(Parallel, CoversEveryIndexOnceAndPropagates) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, 1);
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(100, [](std::size_t i) {
                 if (i == 57) throw DataError("boom");
               }, 1),
               DataError);
}
