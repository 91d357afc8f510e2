#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "mamforge/acsf.hpp"
#include "mamforge/electrostatics.hpp"
#include "mamforge/model.hpp"

namespace mamforge {

enum class ChargeMode {
  Response,  // forces include the charge response dQ/dR (adjoint solve)
  Frozen,    // charges held fixed when differentiating; approximate when E_short depends on Q
};

/// Energy-network outputs for all atoms.
struct EnergyNetOutput {
  Eigen::VectorXd energies;            // E_i (eV)
  Eigen::MatrixXd descriptor_seeds;    // ∂E_i/∂G_i (eV), N × num_features
  Eigen::VectorXd charge_sensitivity;  // ∂E_i/∂Q_i (V); zero without charge input
};

namespace potential_detail {

inline void check_dimensions(const DescriptorSet& d, const PotentialModel& m) {
  if (d.num_features() != m.num_descriptor_features() || d.num_radial != m.acsf.num_radial())
    throw DataError("descriptor/model dimension mismatch");
}

inline void check_species(const Structure& s, const PotentialModel& m) {
  for (int z : s.species)
    if (!m.supports(z))
      throw DataError("structure contains element " + std::string(element(z).symbol) + " unknown to the model");
}

}  // namespace potential_detail

inline EnergyNetOutput evaluate_energy_net(const PotentialModel& m, const DescriptorSet& d,
                                           const Eigen::VectorXd* charges) {
  potential_detail::check_dimensions(d, m);
  if (m.use_charge_input != (charges != nullptr))
    throw DataError(m.use_charge_input ? "model expects atomic charges as input" : "model takes no charge input");
  const std::size_t n = d.size(), nf = d.num_features(), nin = m.energy_net.num_inputs();
  EnergyNetOutput out;
  out.energies.resize(static_cast<Eigen::Index>(n));
  out.descriptor_seeds.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nf));
  out.charge_sensitivity = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> x(nin), gx(nin);
  Mlp::Tape<double> tape;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < nf; ++k)
      x[k] = (d.values(ii, static_cast<Eigen::Index>(k)) - m.energy_input.mean[k]) / m.energy_input.scale[k];
    if (charges) x[nf] = ((*charges)(ii)-m.energy_input.mean[nf]) / m.energy_input.scale[nf];
    out.energies(ii) = m.energy_net.forward<double>(x, tape);
    m.energy_net.backward<double>(tape, 1.0, {}, gx);
    for (std::size_t k = 0; k < nf; ++k)
      out.descriptor_seeds(ii, static_cast<Eigen::Index>(k)) = gx[k] / m.energy_input.scale[k];
    if (charges) out.charge_sensitivity(ii) = gx[nf] / m.energy_input.scale[nf];
  }
  return out;
}

/// Network electronegativity χ_i of every atom (V).
inline Eigen::VectorXd electronegativities(const DescriptorSet& d, const PotentialModel& m) {
  potential_detail::check_dimensions(d, m);
  if (!m.use_electrostatics) throw ConfigError("model has no electronegativity network");
  const std::size_t n = d.size(), nf = d.num_features();
  Eigen::VectorXd chi(static_cast<Eigen::Index>(n));
  std::vector<double> x(nf);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < nf; ++k)
      x[k] = (d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) - m.chi_input.mean[k]) /
             m.chi_input.scale[k];
    chi(static_cast<Eigen::Index>(i)) = m.chi_net.forward<double>(x);
  }
  return chi;
}

/// w_i ∂χ_i/∂G_i for every atom, N × num_features.
inline Eigen::MatrixXd chi_descriptor_seeds(const DescriptorSet& d, const PotentialModel& m, const Eigen::VectorXd& w) {
  const std::size_t n = d.size(), nf = d.num_features();
  Eigen::MatrixXd seeds(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nf));
  std::vector<double> x(nf), gx(nf);
  Mlp::Tape<double> tape;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < nf; ++k)
      x[k] = (d.values(ii, static_cast<Eigen::Index>(k)) - m.chi_input.mean[k]) / m.chi_input.scale[k];
    m.chi_net.forward<double>(x, tape);
    m.chi_net.backward<double>(tape, w(ii), {}, gx);
    for (std::size_t k = 0; k < nf; ++k) seeds(ii, static_cast<Eigen::Index>(k)) = gx[k] / m.chi_input.scale[k];
  }
  return seeds;
}

inline std::vector<double> model_alpha(const Structure& s, const PotentialModel& m) {
  std::vector<double> a;
  for (int z : s.species) a.push_back(m.element_params(z).alpha);
  return a;
}

inline std::vector<double> model_hardness(const Structure& s, const PotentialModel& m) {
  std::vector<double> h;
  for (int z : s.species) h.push_back(m.element_params(z).hardness);
  return h;
}

/// Kernel truncation used by the model for this structure.
inline std::optional<double> elec_cutoff(const Structure& s, const PotentialModel& m) {
  if (s.any_periodic()) return m.periodic_elec_cutoff;
  return std::nullopt;
}

struct ShortRangeEnergy {
  double total;                 // eV
  Eigen::VectorXd per_atom;     // eV
};

/// E_short = Σ_i E_i(G_i[, Q_i]).
inline ShortRangeEnergy short_range_energy(const Structure& s, const DescriptorSet& d, const PotentialModel& m,
                                           const std::optional<Eigen::VectorXd>& charges = std::nullopt) {
  if (d.size() != s.size()) throw DataError("descriptor set does not match structure");
  auto out = evaluate_energy_net(m, d, charges ? &*charges : nullptr);
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.energies.size(); ++i) total += out.energies(i);
  return {total, std::move(out.energies)};
}

/// F_β = -Σ_i Σ_k (∂E_i/∂G_ik)(∂G_ik/∂R_β) at fixed charges.
inline std::vector<Vec3> short_range_forces(const Structure& s, const DescriptorSet& d, const PotentialModel& m,
                                            const std::optional<Eigen::VectorXd>& charges = std::nullopt) {
  if (d.size() != s.size()) throw DataError("descriptor set does not match structure");
  const auto out = evaluate_energy_net(m, d, charges ? &*charges : nullptr);
  std::vector<Vec3> f(s.size(), Vec3::Zero());
  accumulate_descriptor_forces(d, out.descriptor_seeds, f);
  return f;
}

/// σ^kin_pq = (1/V) Σ_k m_k v_kp v_kq (eV/Å³).
inline Mat3 kinetic_stress(const Structure& s, std::optional<double> reference_volume = std::nullopt) {
  if (!s.velocities) throw DataError("kinetic stress requires velocities");
  const double v = reference_volume ? *reference_volume : volume(s);
  if (!(v > 0.0)) throw DataError("kinetic stress requires a positive volume");
  Mat3 sigma = Mat3::Zero();
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Vec3& vel = (*s.velocities)[k];
    sigma += s.masses[k] * vel * vel.transpose();
  }
  return sigma * units::kMassVelocity2ToEv / v;
}

/// Short-range static stress (1/V) ∂E_short/∂ε at fixed charges (eV/Å³),
/// positive in tension.
inline Mat3 static_stress(const Structure& s, const DescriptorSet& d, const PotentialModel& m,
                          const std::optional<Eigen::VectorXd>& charges = std::nullopt) {
  const auto out = evaluate_energy_net(m, d, charges ? &*charges : nullptr);
  Mat3 w = Mat3::Zero();
  for (const auto& av : descriptor_virials(d, out.descriptor_seeds)) w += av.total();
  return w / volume(s);
}

struct Prediction {
  double energy_total = 0.0;  // eV
  double energy_short = 0.0;
  double energy_elec = 0.0;
  Eigen::VectorXd atom_energies;  // eV
  Eigen::VectorXd charges;        // e
  Eigen::VectorXd electronegativities;  // V, empty without electrostatics
  double chemical_potential = 0.0;      // μ (V)
  std::vector<Vec3> forces;             // net (eV/Å)
  std::vector<Vec3> forces_short;
  std::vector<Vec3> forces_elec;
  std::vector<AtomVirial> atom_virials_short;  // eV, radial/angular split
  std::vector<Mat3> atom_virials;              // eV, total static per atom
  std::optional<Mat3> stress_static;           // eV/Å³
  std::optional<Mat3> stress_kinetic;          // eV/Å³
  Eigen::VectorXd adjoint;  // λ with K[λ;η] = [∂E_short/∂Q; 0]; zero in frozen mode

  std::optional<Mat3> stress() const {
    if (!stress_static) return std::nullopt;
    return *stress_static + (stress_kinetic ? *stress_kinetic : Mat3::Zero());
  }
};

/// Position-dependent quantities that do not depend on network weights:
/// descriptors with their Jacobian and, with electrostatics, the interaction
/// matrix and its factorization. Reused across training epochs.
struct EvalContext {
  DescriptorSet descriptors;
  std::vector<double> alpha;
  std::optional<double> cutoff;
  Eigen::MatrixXd kernel;  // incl. hardness on the diagonal
  std::shared_ptr<const KktSolver> solver;
};

inline EvalContext make_context(const Structure& s, const PotentialModel& m, bool with_jacobian = true) {
  validate(s);
  potential_detail::check_species(s, m);
  EvalContext ctx;
  ctx.descriptors = compute_acsf(s, build_neighbor_list(s, m.acsf.cutoff), m.acsf, with_jacobian);
  if (m.use_electrostatics) {
    ctx.alpha = model_alpha(s, m);
    ctx.cutoff = elec_cutoff(s, m);
    ctx.kernel = coulomb_kernel(s, ctx.alpha, ctx.cutoff);
    const auto hard = model_hardness(s, m);
    for (std::size_t i = 0; i < s.size(); ++i) ctx.kernel(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += hard[i];
    ctx.solver = std::make_shared<const KktSolver>(ctx.kernel);
  }
  return ctx;
}

/// Prediction from a prepared context.
inline Prediction predict(const Structure& s, const EvalContext& ctx, const PotentialModel& m,
                          ChargeMode mode = ChargeMode::Response) {
  const std::size_t n = s.size();
  const auto& d = ctx.descriptors;
  if (d.size() != n || d.jacobian.size() != n || (n > 0 && d.jacobian[0].size() == 0))
    throw DataError("evaluation context lacks descriptor Jacobians");

  Prediction p;
  p.charges = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (m.use_electrostatics) {
    p.electronegativities = electronegativities(d, m);
    auto [q, nu] = ctx.solver->solve(-p.electronegativities, s.total_charge);
    if (!q.allFinite()) throw NumericalError("charge equilibration produced non-finite charges");
    p.charges = std::move(q);
    p.chemical_potential = -nu;
  }

  const auto net = evaluate_energy_net(m, d, m.use_charge_input ? &p.charges : nullptr);
  p.atom_energies = net.energies;
  p.energy_short = 0.0;
  for (std::size_t i = 0; i < n; ++i) p.energy_short += net.energies(static_cast<Eigen::Index>(i));

  p.forces_short.assign(n, Vec3::Zero());
  accumulate_descriptor_forces(d, net.descriptor_seeds, p.forces_short);
  p.atom_virials_short = descriptor_virials(d, net.descriptor_seeds);
  p.forces_elec.assign(n, Vec3::Zero());
  p.atom_virials.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.atom_virials[i] = p.atom_virials_short[i].total();

  if (m.use_electrostatics) {
    const Eigen::VectorXd& q = p.charges;
    p.adjoint = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    if (m.use_charge_input && mode == ChargeMode::Response)
      p.adjoint = ctx.solver->solve(net.charge_sensitivity, 0.0).first;
    const Eigen::VectorXd& lambda = p.adjoint;
    // Total derivative = ∂/∂R of Σ(Q_i-λ_i)χ_i + ½Σ c_ij A_ij at fixed Q, λ.
    const Eigen::VectorXd w = q - lambda;
    const Eigen::MatrixXd seeds = chi_descriptor_seeds(d, m, w);
    accumulate_descriptor_forces(d, seeds, p.forces_elec);
    const auto chi_vir = descriptor_virials(d, seeds);
    const Eigen::MatrixXd c = q * q.transpose() - lambda * q.transpose() - q * lambda.transpose();
    const auto kg = kernel_gradient(s, ctx.alpha, ctx.cutoff, c);
    for (std::size_t i = 0; i < n; ++i) {
      p.forces_elec[i] += kg.forces[i];
      p.atom_virials[i] += chi_vir[i].total() + kg.virials[i];
    }
    p.energy_elec = electrostatic_energy(q, ctx.kernel, p.electronegativities);
  }
  p.energy_total = p.energy_short + p.energy_elec;
  p.forces.resize(n);
  for (std::size_t i = 0; i < n; ++i) p.forces[i] = p.forces_short[i] + p.forces_elec[i];

  if (!cell_is_singular(s.cell)) {
    const double v = volume(s);
    Mat3 w = Mat3::Zero();
    for (const auto& av : p.atom_virials) w += av;
    p.stress_static = w / v;
    if (s.velocities) p.stress_kinetic = kinetic_stress(s, v);
  }
  return p;
}

/// Descriptors → (charge equilibration) → short-range energy → forces and
/// virial stress.
inline Prediction predict(const Structure& s, const PotentialModel& m, ChargeMode mode = ChargeMode::Response) {
  return predict(s, make_context(s, m), m, mode);
}

/// E_total with the charges held at the given values (no equilibration).
inline double total_energy_at_charges(const Structure& s, const PotentialModel& m, const Eigen::VectorXd& charges) {
  const auto nl = build_neighbor_list(s, m.acsf.cutoff);
  const auto d = compute_acsf(s, nl, m.acsf, false);
  const auto net = evaluate_energy_net(m, d, m.use_charge_input ? &charges : nullptr);
  double e = net.energies.sum();
  if (m.use_electrostatics) {
    const auto sys = make_qeq_system(s, electronegativities(d, m), model_hardness(s, m), model_alpha(s, m),
                                     elec_cutoff(s, m));
    e += electrostatic_energy(charges, sys.kernel, sys.chi);
  }
  return e;
}

/// Energy-only evaluation with charge equilibration; skips the Jacobian.
inline double total_energy(const Structure& s, const PotentialModel& m) {
  const auto nl = build_neighbor_list(s, m.acsf.cutoff);
  const auto d = compute_acsf(s, nl, m.acsf, false);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()));
  double e_elec = 0.0;
  if (m.use_electrostatics) {
    const auto sys = make_qeq_system(s, electronegativities(d, m), model_hardness(s, m), model_alpha(s, m),
                                     elec_cutoff(s, m));
    q = equilibrate_charges(sys).charges;
    e_elec = electrostatic_energy(q, sys.kernel, sys.chi);
  }
  const auto net = evaluate_energy_net(m, d, m.use_charge_input ? &q : nullptr);
  return net.energies.sum() + e_elec;
}

}  // namespace mamforge
