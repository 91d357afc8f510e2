#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mamforge/potential.hpp"

namespace mamforge {

/// Energy, forces and per-atom static virials of one configuration.
struct Evaluation {
  double energy = 0.0;                  // eV
  std::vector<Vec3> forces;             // eV/Å
  std::vector<Mat3> atom_virials;       // eV; Σ / V is the static stress
  std::optional<Mat3> stress;           // eV/Å³, when a volume is defined
};

class Calculator {
 public:
  virtual ~Calculator() = default;
  virtual Evaluation evaluate(const Structure& s) const = 0;
  virtual std::string name() const = 0;
};

inline double max_force(const std::vector<Vec3>& forces) {
  double m = 0.0;
  for (const auto& f : forces) m = std::max(m, f.norm());
  return m;
}

inline std::optional<Mat3> stress_from_virials(const Structure& s, const std::vector<Mat3>& virials) {
  if (cell_is_singular(s.cell)) return std::nullopt;
  Mat3 w = Mat3::Zero();
  for (const auto& v : virials) w += v;
  return w / volume(s);
}

struct LennardJonesParams {
  double epsilon = 0.1;  // eV
  double sigma = 2.3;    // Å
  double cutoff = 5.75;  // Å
};

/// Energy-shifted, truncated 12-6 pair potential acting between all atoms.
class LennardJones final : public Calculator {
 public:
  explicit LennardJones(LennardJonesParams p = {}) : p_(p) {
    if (!(p_.sigma > 0.0) || !(p_.cutoff > 0.0) || !(p_.epsilon >= 0.0))
      throw ConfigError("Lennard-Jones parameters must be positive");
    shift_ = raw(p_.cutoff).first;
  }

  const LennardJonesParams& params() const { return p_; }

  /// Pair energy and dφ/dr.
  std::pair<double, double> pair(double r) const {
    if (r >= p_.cutoff) return {0.0, 0.0};
    auto [e, de] = raw(r);
    return {e - shift_, de};
  }

  /// Separation of the pair minimum, 2^(1/6)σ.
  double minimum_distance() const { return std::pow(2.0, 1.0 / 6.0) * p_.sigma; }

  Evaluation evaluate(const Structure& s) const override {
    const auto nl = build_neighbor_list(s, p_.cutoff);
    Evaluation ev;
    ev.forces.assign(s.size(), Vec3::Zero());
    ev.atom_virials.assign(s.size(), Mat3::Zero());
    for (std::size_t i = 0; i < s.size(); ++i)
      for (const auto& nb : nl[i]) {
        if (nb.index < i) continue;
        const auto [e, de] = pair(nb.distance);
        ev.energy += e;
        const Vec3 g = de / nb.distance * nb.displacement;  // ∂φ/∂R_j
        ev.forces[nb.index] -= g;
        ev.forces[i] += g;
        const Mat3 w = nb.displacement * g.transpose();
        ev.atom_virials[i] += 0.5 * w;
        ev.atom_virials[nb.index] += 0.5 * w;
      }
    ev.stress = stress_from_virials(s, ev.atom_virials);
    return ev;
  }

  std::string name() const override { return "oracle:lj"; }

 private:
  std::pair<double, double> raw(double r) const {
    const double sr6 = std::pow(p_.sigma / r, 6);
    return {4.0 * p_.epsilon * (sr6 * sr6 - sr6), 4.0 * p_.epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r};
  }

  LennardJonesParams p_;
  double shift_ = 0.0;
};

/// Adapter exposing a trained model through the Calculator interface.
class NeuralCalculator final : public Calculator {
 public:
  explicit NeuralCalculator(PotentialModel m, ChargeMode mode = ChargeMode::Response)
      : model_(std::move(m)), mode_(mode) {
    validate(model_);
  }

  const PotentialModel& model() const { return model_; }

  Evaluation evaluate(const Structure& s) const override {
    auto p = predict(s, model_, mode_);
    Evaluation ev;
    ev.energy = p.energy_total;
    ev.forces = std::move(p.forces);
    ev.atom_virials = std::move(p.atom_virials);
    ev.stress = p.stress_static;
    return ev;
  }

  std::string name() const override { return "model"; }

 private:
  PotentialModel model_;
  ChargeMode mode_;
};

}  // namespace mamforge
