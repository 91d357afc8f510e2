#pragma once

// End-to-end checks of the numbered acceptance criteria. Used by
// `mamforge selftest` and by the acceptance test binary.

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mamforge/chemomech.hpp"
#include "mamforge/cyclesim.hpp"
#include "mamforge/electrostatics.hpp"
#include "mamforge/format.hpp"
#include "mamforge/potential.hpp"
#include "mamforge/testing/loss_check.hpp"
#include "mamforge/testing/oracles.hpp"
#include "mamforge/training.hpp"

namespace mamforge::selftest {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Accumulates named measurements and their pass/fail verdicts.
class Checks {
 public:
  void less(const std::string& what, double value, double limit) {
    record(what + "=" + format_short(value) + "<" + format_short(limit), value < limit);
  }
  void greater(const std::string& what, double value, double limit) {
    record(what + "=" + format_short(value) + ">" + format_short(limit), value > limit);
  }
  void near(const std::string& what, double value, double expected, double tol) {
    record(what + "=" + format_short(value) + "~" + format_short(expected), std::abs(value - expected) <= tol);
  }
  void truth(const std::string& what, bool ok) { record(what, ok); }

  bool passed() const { return ok_; }
  std::string detail() const { return detail_; }

 private:
  static std::string format_short(double v) {
    std::ostringstream s;
    s.precision(3);
    s << v;
    return s.str();
  }
  void record(const std::string& text, bool ok) {
    if (!detail_.empty()) detail_ += "; ";
    detail_ += text;
    if (!ok) detail_ += " [FAIL]";
    ok_ = ok_ && ok;
  }
  bool ok_ = true;
  std::string detail_;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline Mat3 skewed_cell(Rng& rng) {
  Mat3 cell;
  cell << 7.5, 0, 0, rng.uniform(-0.5, 0.5), 7.6, 0, rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 7.7;
  return cell;
}

inline void descriptor_jacobians(Checks& c) {
  const auto t0 = Clock::now();
  Rng rng(101);
  const auto p = default_acsf();
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto s = oracle::random_cluster(rng, 8, 4.0, 1.0, {3, 8});
    worst = std::max(worst, oracle::jacobian_fd_error(s, p, 1e-5));
  }
  c.less("max_err", worst, 1e-7);
  c.less("runtime_s", seconds_since(t0), 10.0);
}

inline void forces(Checks& c) {
  Rng rng(102);
  const auto m = oracle::random_model(true);
  double frozen = 0.0, response = 0.0;
  for (int t = 0; t < 10; ++t) {
    auto s = oracle::random_cluster(rng, 8, 4.5, 1.1, {3, 8});
    s.total_charge = static_cast<double>(t % 3) - 1.0;
    const auto pf = predict(s, m, ChargeMode::Frozen);
    const Eigen::VectorXd q = pf.charges;
    frozen = std::max(frozen, oracle::max_abs_diff(pf.forces, oracle::finite_difference_forces(
        [&](const Structure& x) { return total_energy_at_charges(x, m, q); }, s, 1e-4)));
    const auto pr = predict(s, m);
    response = std::max(response, oracle::max_abs_diff(pr.forces, oracle::finite_difference_forces(
        [&](const Structure& x) { return total_energy(x, m); }, s, 1e-4)));
  }
  c.less("frozen_err", frozen, 1e-6);
  c.less("qeq_err", response, 1e-5);
}

inline void stress(Checks& c) {
  Rng rng(103);
  double err = 0.0, asym = 0.0;
  for (bool elec : {false, true}) {
    const auto m = oracle::random_model(elec, 3.5);
    for (int t = 0; t < 2; ++t) {
      const auto s = oracle::random_periodic(rng, 8, skewed_cell(rng), 1.3, {3, 8});
      const auto p = predict(s, m);
      const Mat3 fd = oracle::finite_difference_stress([&](const Structure& x) { return total_energy(x, m); }, s, 1e-6);
      err = std::max(err, (*p.stress_static - fd).cwiseAbs().maxCoeff());
      asym = std::max(asym, (*p.stress_static - p.stress_static->transpose()).cwiseAbs().maxCoeff());
    }
  }
  c.less("max_err", err, 1e-6);
  c.less("asym", asym, 1e-8);
}

inline void kinetic(Checks& c) {
  Structure s = make_structure({1}, {Vec3::Zero()}, Mat3::Identity() * std::cbrt(100.0), {true, true, true});
  s.masses[0] = 1.0;
  s.velocities = std::vector<Vec3>{Vec3(1.0, 0, 0)};
  const Mat3 k = kinetic_stress(s);
  c.near("sxx", k(0, 0), 1.03642691, 1e-8);
}

inline void invariances(Checks& c) {
  Rng rng(105);
  const auto m = oracle::random_model(true);
  const auto s = oracle::random_cluster(rng, 8, 4.5, 1.1, {3, 8});
  const double e = total_energy(s, m);
  Structure rev = s;
  std::reverse(rev.positions.begin(), rev.positions.end());
  std::reverse(rev.species.begin(), rev.species.end());
  std::reverse(rev.masses.begin(), rev.masses.end());
  c.less("perm_rel", std::abs(total_energy(rev, m) - e) / std::abs(e), 1e-12);
  const auto moved = oracle::rigid_motion(s, oracle::rotation(1.0, 0.4, -2.2), Vec3(10.0, -3.0, 0.5));
  c.less("rigid_drift", std::abs(total_energy(moved, m) - e), 1e-9);
  const auto ms = oracle::random_model(false, 3.5);
  const auto p = oracle::random_periodic(rng, 8, skewed_cell(rng), 1.3, {3, 8});
  const double ep = total_energy(p, ms);
  c.less("extensive_rel", std::abs(total_energy(replicate(p, 2, 2, 2), ms) / (8.0 * ep) - 1.0), 1e-9);
}

inline void charge_equilibration(Checks& c) {
  Rng rng(106);
  double drift = 0.0;
  for (double qtot : {0.0, 1.0, -2.0}) {
    auto s = oracle::random_cluster(rng, 12, 7.0, 1.0);
    s.total_charge = qtot;
    Eigen::VectorXd chi(12);
    for (auto& x : chi) x = rng.uniform(-3, 3);
    std::vector<double> alpha(12);
    for (auto& a : alpha) a = rng.uniform(0.6, 1.4);
    const auto sol = equilibrate_charges(make_qeq_system(s, chi, std::vector<double>(12, 8.0), alpha, std::nullopt));
    drift = std::max(drift, std::abs(sol.charges.sum() - qtot));
  }
  c.less("sum_drift", drift, 1e-10);

  const auto d = make_structure({3, 9}, {Vec3::Zero(), Vec3(0, 0, 1.6)});
  Eigen::VectorXd chi(2);
  chi << -0.5, 2.5;
  const auto sol = equilibrate_charges(make_qeq_system(d, chi, {7.0, 11.0}, {1.2, 0.7}, std::nullopt));
  const double g = std::hypot(1.2, 0.7);
  const double a12 = units::kCoulomb * std::erf(1.6 / (std::sqrt(2.0) * g)) / 1.6;
  const double a11 = 7.0 + units::kCoulomb / (1.2 * std::sqrt(units::kPi));
  const double a22 = 11.0 + units::kCoulomb / (0.7 * std::sqrt(units::kPi));
  c.near("dimer_q", sol.charges(0), (chi(1) - chi(0)) / (a11 + a22 - 2 * a12), 1e-10);

  std::vector<Vec3> pos;
  for (int k = 0; k < 10; ++k) pos.emplace_back(0, 0, 2.5 * k);
  const auto chain = make_structure(std::vector<int>(10, 6), pos);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(10);
  const std::vector<double> hard(10, 10.0), alpha(10, 0.8);
  const auto q0 = equilibrate_charges(make_qeq_system(chain, x, hard, alpha, std::nullopt)).charges;
  x(0) = 1.0;
  const auto q1 = equilibrate_charges(make_qeq_system(chain, x, hard, alpha, std::nullopt)).charges;
  c.greater("far_end_dq", std::abs(q1(9) - q0(9)), 1e-6);
}

inline void training(Checks& c) {
  const auto data = lennard_jones_cluster_dataset();
  TrainConfig cfg;
  cfg.val_fraction = 0.0;
  cfg.epochs = 2000;
  const auto t0 = Clock::now();
  const auto res = train(data, cfg);
  const double secs = seconds_since(t0);
  const auto rep = evaluate(res.model, data);
  c.truth("epochs=" + std::to_string(res.history.size() - 1), res.history.size() - 1 <= 2000);
  c.less("rmse_e_meV_atom", rep.errors.rmse_energy().value_or(1e300), 1.0);
  c.less("rmse_f_meV_A", rep.errors.rmse_force().value_or(1e300), 30.0);
  c.less("train_s", secs, 300.0);

  std::vector<Sample> batch(data.begin(), data.begin() + 5);
  double grad = oracle::gradient_check(res.model, batch, cfg.weights, 7);
  const auto em = oracle::small_model(true, true);
  grad = std::max(grad, oracle::gradient_check(em, oracle::noisy_samples(em, 4, true, true, 8), {1.0, 1.0, 1.0}, 9));
  c.less("grad_rel_err", grad, 1e-4);
}

inline void closed_form(Checks& c) {
  double worst = 0.0;
  auto dev = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  for (auto [lam, mu] : {std::pair{1.0, 1.0}, std::pair{37.5, 12.25}}) {
    const auto m = voigt_moduli(isotropic_stiffness(lam, mu));
    dev(m.bulk, lam + 2.0 * mu / 3.0);
    dev(m.shear, mu);
  }
  c.less("isotropic_dev", worst, 1e-12);
  VoigtTensor cub = VoigtTensor::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) cub(i, j) = 50.0;
    cub(i, i) = 100.0;
    cub(i + 3, i + 3) = 30.0;
  }
  const auto mc = voigt_moduli(cub);
  c.near("cubic_B", mc.bulk, 66.667, 5e-4);
  c.near("cubic_G", mc.shear, 28.0, 1e-12);
  worst = 0.0;
  dev(intercalation_voltage(-3.0, 2), 1.5);
  dev(diffusion_kinetics(1e-5, 1e-12).tau_s, 100.0);
  dev(diffusion_kinetics(1e-5, 1e-12).c_rate_per_h, 36.0);
  dev(work_of_separation({-10.0, -5.0, -16.0, 10.0}).ev_per_a2, 0.1);
  dev(work_of_separation({-10.0, -5.0, -16.0, 10.0}).j_per_m2, 1.6021766);
  dev(interphase_formation_energy(-100.0, -98.0), -2.0);
  dev(sei_formation_energy(-210.0, -10.0, -196.0, 4), -1.0);
  dev(potential_gradient(-3.0, -5.0, 4.0), 0.5);
  c.less("hand_cases_dev", worst, 1e-12);
}

inline void elastic(Checks& c) {
  const LennardJones lj({0.1, 2.3, 5.4});
  const auto s = oracle::zero_pressure_fcc(lj, 18, 4, 3.3, 4.0);
  const auto r = elastic_constants(s, lj, 1e-3);
  const auto h = elastic_constants(s, lj, 5e-4);
  c.less("cauchy_rel", std::abs(r.c(0, 1) - r.c(3, 3)) / r.c(3, 3), 0.02);
  c.less("halving_rel", (h.c - r.c).cwiseAbs().maxCoeff() / r.c.cwiseAbs().maxCoeff(), 5e-3);
}

inline void sliding(Checks& c) {
  const double a = 0.05, l = 3.2;
  std::vector<SlidingSample> p;
  for (int k = 0; k < 64; ++k) {
    const double x = l * k / 63.0;
    p.push_back({x, 0.6 + a * std::sin(2 * units::kPi * x / l)});
  }
  const double exact = 2 * units::kPi * a / l;
  c.less("tau_max_rel", std::abs(sliding_traction(p).tau_max - exact) / exact, 0.01);
}

inline void cycling(Checks& c) {
  auto host = fcc_lattice(18, 3.6, 3, 3, 2);
  host.periodic[2] = false;
  host.cell.row(2) = Eigen::RowVector3d(0, 0, 20.0);
  const LennardJones lj({0.1, 2.3, 4.0});
  CycleConfig cfg;
  cfg.region = Region(2, 9.0, 11.0);
  cfg.stress_region = Region(2, -1.0, 4.0);
  cfg.atoms_per_step = 2;
  cfg.bias_steps = 20;
  cfg.relax.max_steps = 200;
  cfg.relax.force_tolerance = 0.02;
  cfg.x_max = 0.2;
  cfg.seed = 11;
  const std::vector<ScheduleEntry> schedule{{CycleMode::Charge, 2}, {CycleMode::Discharge, 2}};
  std::ostringstream a, b;
  const auto ta = run_cycle(host, lj, cfg, schedule, &a);
  const auto tb = run_cycle(host, lj, cfg, schedule, &b);
  bool same = a.str() == b.str() && ta.frames.size() == tb.frames.size();
  for (std::size_t k = 0; same && k < ta.frames.size(); ++k)
    same = ta.frames[k].structure.positions == tb.frames[k].structure.positions;
  c.truth("bitwise_reproducible", same);
  bool census = ta.records.size() == 4;
  for (const auto& f : ta.frames) census = census && f.host_count() == host.size();
  c.truth("host_census", census);

  // Two slabs tiling one cell height partition the reference volume.
  double additivity = 0.0, whole = 0.0;
  for (const auto& f : ta.frames) {
    const Structure& s = f.structure;
    const auto ev = lj.evaluate(s);
    double zmin = 1e300;
    for (const auto& r : s.positions) zmin = std::min(zmin, r[2]);
    const double z0 = zmin - 0.5, h = s.cell(2, 2);
    const Region lo(2, z0, 4.0), hi(2, 4.0, z0 + h), all(2, z0, z0 + h);
    const Mat3 parts = (region_stress(s, ev, lo) * region_volume(s.cell, lo) +
                        region_stress(s, ev, hi) * region_volume(s.cell, hi)) / volume(s);
    additivity = std::max(additivity, (parts - *ev.stress).cwiseAbs().maxCoeff());
    whole = std::max(whole, (region_stress(s, ev, all) - *ev.stress).cwiseAbs().maxCoeff());
  }
  c.less("additivity_err", additivity, 1e-10);
  c.less("full_cell_err", whole, 1e-10);
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Checks&)> run;
};

inline const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> list{
      {1, "descriptor Jacobians vs finite differences", descriptor_jacobians},
      {2, "forces vs finite differences (frozen, Qeq)", forces},
      {3, "static stress vs strain derivative", stress},
      {4, "kinetic stress unit case", kinetic},
      {5, "permutation, rigid motion, extensivity", invariances},
      {6, "charge equilibration", charge_equilibration},
      {7, "training on pair-potential data", training},
      {8, "closed-form analyzers", closed_form},
      {9, "elastic constants (Cauchy relation)", elastic},
      {10, "sliding traction of a sinusoid", sliding},
      {11, "charge/discharge cycling", cycling},
  };
  return list;
}

inline CriterionResult run_criterion(const Criterion& c) {
  CriterionResult r;
  r.id = c.id;
  r.title = c.title;
  const auto t0 = Clock::now();
  try {
    Checks checks;
    c.run(checks);
    r.passed = checks.passed();
    r.detail = checks.detail();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = seconds_since(t0);
  return r;
}

inline std::string format_result(const CriterionResult& r) {
  std::ostringstream s;
  s.precision(3);
  s << "criterion " << r.id << ": " << (r.passed ? "PASS" : "FAIL") << " | " << r.title << " | " << r.detail
    << " | " << std::fixed << r.seconds << " s";
  return s.str();
}

/// Runs every criterion, printing one line each. Returns true when all pass.
inline bool run_all(std::ostream& out, std::vector<CriterionResult>* results = nullptr) {
  bool ok = true;
  for (const auto& c : criteria()) {
    const auto r = run_criterion(c);
    out << format_result(r) << '\n' << std::flush;
    ok = ok && r.passed;
    if (results) results->push_back(r);
  }
  return ok;
}

}  // namespace mamforge::selftest
