#pragma once

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mamforge/calculator.hpp"
#include "mamforge/format.hpp"
#include "mamforge/potential.hpp"
#include "mamforge/random.hpp"
#include "mamforge/xyz.hpp"

namespace mamforge {

/// Reference data for one configuration.
struct Sample {
  Structure structure;
  double energy = 0.0;                       // eV
  std::optional<std::vector<Vec3>> forces;   // eV/Å
  std::optional<Eigen::VectorXd> charges;    // e
};

inline void validate(const Sample& s) {
  validate(s.structure);
  if (!std::isfinite(s.energy)) throw DataError("sample energy is not finite");
  if (s.forces) {
    if (s.forces->size() != s.structure.size()) throw DataError("force array length differs from atom count");
    for (const auto& f : *s.forces)
      if (!f.allFinite()) throw DataError("non-finite reference force");
  }
  if (s.charges) {
    if (static_cast<std::size_t>(s.charges->size()) != s.structure.size())
      throw DataError("charge array length differs from atom count");
    if (!s.charges->allFinite()) throw DataError("non-finite reference charge");
  }
}

inline std::vector<Sample> samples_from_frames(const std::vector<Frame>& frames) {
  std::vector<Sample> out;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& f = frames[k];
    if (!f.energy) throw DataError("frame " + std::to_string(k) + " has no energy");
    Sample s;
    s.structure = f.structure;
    s.energy = *f.energy;
    s.forces = f.forces;
    if (f.charges)
      s.charges = Eigen::Map<const Eigen::VectorXd>(f.charges->data(), static_cast<Eigen::Index>(f.charges->size()));
    validate(s);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sample> load_dataset(const std::string& path) { return samples_from_frames(read_xyz_file(path)); }

inline std::string format_dataset(const std::vector<Sample>& samples) {
  std::vector<Frame> frames;
  for (const auto& s : samples) {
    Frame f{s.structure, s.energy, s.forces, std::nullopt};
    if (s.charges) f.charges = std::vector<double>(s.charges->data(), s.charges->data() + s.charges->size());
    frames.push_back(std::move(f));
  }
  return format_frames(frames);
}

/// Labels every structure with energies and forces from a reference
/// calculator.
inline std::vector<Sample> label_with(const Calculator& calc, const std::vector<Structure>& structures) {
  std::vector<Sample> out;
  for (const auto& s : structures) {
    const auto ev = calc.evaluate(s);
    out.push_back({s, ev.energy, ev.forces, std::nullopt});
  }
  return out;
}

/// Randomly displaced copies of an 8-atom argon cube at the Lennard-Jones
/// pair minimum, labelled with the default Lennard-Jones oracle.
inline std::vector<Sample> lennard_jones_cluster_dataset(std::size_t frames = 30, double amplitude = 0.1,
                                                         std::uint64_t seed = 2024) {
  const LennardJones lj;
  const double a = lj.minimum_distance();
  std::vector<Vec3> base;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) base.emplace_back(a * i, a * j, a * k);
  Rng rng(seed);
  std::vector<Structure> structures;
  for (std::size_t f = 0; f < frames; ++f) {
    auto pos = base;
    for (auto& r : pos) r += rng.vec(-amplitude, amplitude);
    structures.push_back(make_structure(std::vector<int>(8, 18), pos));
  }
  return label_with(lj, structures);
}

struct LossWeights {
  double energy = 100.0;  // per-atom energy MSE (eV²)
  double force = 1.0;    // force-component MSE (eV²/Å²)
  double charge = 100.0;  // charge MSE (e²)
};

struct TrainConfig {
  LossWeights weights;
  double learning_rate = 0.01;
  std::size_t epochs = 2000;
  std::size_t batch_size = 0;  // 0 = full batch
  double momentum = 0.9;
  double backoff = 0.5;   // step multiplier after a rejected step
  double growth = 1.05;   // step multiplier after an accepted step
  double max_learning_rate = 10.0;
  double output_init_scale = 0.1;   // multiplies the initial energy-network output weights
  std::size_t charge_epochs = 200;  // electronegativity-only phase
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  ModelOptions model;
  std::map<int, ElementParams> element_overrides;
  std::optional<double> target_rmse_energy;  // meV/atom; stop early when met together with the force target
  std::optional<double> target_rmse_force;   // meV/Å
};

inline void validate(const TrainConfig& c) {
  const auto& w = c.weights;
  if (w.energy < 0 || w.force < 0 || w.charge < 0) throw ConfigError("loss weights must be >= 0");
  if (w.energy + w.force + w.charge <= 0) throw ConfigError("loss weights are all zero");
  if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0)) throw ConfigError("validation fraction must be in [0, 1)");
  if (!(c.learning_rate > 0.0) || !(c.max_learning_rate >= c.learning_rate))
    throw ConfigError("learning rate must be positive and below the maximum");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(c.backoff > 0.0 && c.backoff < 1.0)) throw ConfigError("backoff must be in (0, 1)");
  if (!(c.growth >= 1.0)) throw ConfigError("growth must be >= 1");
  if (!(c.output_init_scale > 0.0)) throw ConfigError("output initialization scale must be positive");
  validate(c.model.acsf);
}

/// All network weights as one flat vector: energy network, then
/// electronegativity network.
inline std::vector<double> get_parameters(const PotentialModel& m) {
  std::vector<double> p(m.energy_net.params().begin(), m.energy_net.params().end());
  if (!m.chi_net.empty()) p.insert(p.end(), m.chi_net.params().begin(), m.chi_net.params().end());
  return p;
}

inline void set_parameters(PotentialModel& m, std::span<const double> p) {
  if (p.size() != m.num_params()) throw DataError("parameter vector length mismatch");
  std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(m.energy_net.num_params()), m.energy_net.params().begin());
  if (!m.chi_net.empty())
    std::copy(p.begin() + static_cast<std::ptrdiff_t>(m.energy_net.num_params()), p.end(), m.chi_net.params().begin());
}

/// Sums of squared residuals; RMSEs in meV/atom, meV/Å and me.
struct ErrorSums {
  double energy = 0.0, force = 0.0, charge = 0.0;
  double energy_abs = 0.0, force_abs = 0.0, charge_abs = 0.0;
  std::size_t n_energy = 0, n_force = 0, n_charge = 0;

  void add(const ErrorSums& o) {
    energy += o.energy, force += o.force, charge += o.charge;
    energy_abs += o.energy_abs, force_abs += o.force_abs, charge_abs += o.charge_abs;
    n_energy += o.n_energy, n_force += o.n_force, n_charge += o.n_charge;
  }
  static std::optional<double> rms(double sum, std::size_t n) {
    return n ? std::optional<double>(1000.0 * std::sqrt(sum / static_cast<double>(n))) : std::nullopt;
  }
  static std::optional<double> mean(double sum, std::size_t n) {
    return n ? std::optional<double>(1000.0 * sum / static_cast<double>(n)) : std::nullopt;
  }
  std::optional<double> rmse_energy() const { return rms(energy, n_energy); }
  std::optional<double> rmse_force() const { return rms(force, n_force); }
  std::optional<double> rmse_charge() const { return rms(charge, n_charge); }
};

struct LossResult {
  double value = 0.0;
  std::vector<double> gradient;  // same layout as get_parameters
  ErrorSums errors;
};

namespace training_detail {

struct Cached {
  const Sample* sample;
  EvalContext ctx;
};

/// Denominators of the three mean-squared terms over a batch.
struct Norms {
  double energy = 0.0;  // labelled frames
  double force = 0.0;   // labelled force components
  double charge = 0.0;  // labelled atomic charges
};

inline Norms batch_norms(const std::vector<const Cached*>& batch, bool elec) {
  Norms n;
  for (const auto* c : batch) {
    n.energy += 1.0;
    if (c->sample->forces) n.force += 3.0 * static_cast<double>(c->sample->structure.size());
    if (elec && c->sample->charges) n.charge += static_cast<double>(c->sample->structure.size());
  }
  return n;
}

/// Loss contribution of one sample and, optionally, its weight gradient.
///
/// The force term needs ∂F/∂θ. With r = F - F_ref held fixed,
/// Σ r·∂F/∂θ = -d/dt ∂E/∂θ(R + t r), so the weight gradient of the energy is
/// evaluated in forward-mode dual numbers along the displacement field r:
/// descriptors G + tJr, interaction matrix A + tȦ, and charges and adjoints
/// differentiated through the factorized KKT system.
inline double sample_loss(const PotentialModel& m, const Cached& c, const LossWeights& w, const Norms& nm,
                          bool chi_only, ErrorSums& err, std::vector<double>* grad) {
  const Sample& smp = *c.sample;
  const Structure& s = smp.structure;
  const auto& d = c.ctx.descriptors;
  const std::size_t n = s.size(), nf = d.num_features();
  const auto N = static_cast<Eigen::Index>(n);
  const bool elec = m.use_electrostatics;
  const auto p = predict(s, c.ctx, m);

  double loss = 0.0;
  const double de = (p.energy_total - smp.energy) / static_cast<double>(n);
  err.energy += de * de;
  err.energy_abs += std::abs(de);
  err.n_energy += 1;
  double g_e = 0.0;
  if (!chi_only && w.energy > 0.0) {
    loss += w.energy * de * de / nm.energy;
    g_e = 2.0 * w.energy * de / (static_cast<double>(n) * nm.energy);
  }

  std::optional<std::vector<Vec3>> r;
  double cf = 0.0;
  if (smp.forces) {
    std::vector<Vec3> res(n);
    for (std::size_t i = 0; i < n; ++i) {
      res[i] = p.forces[i] - (*smp.forces)[i];
      err.force += res[i].squaredNorm();
      err.force_abs += res[i].cwiseAbs().sum();
    }
    err.n_force += 3 * n;
    if (!chi_only && w.force > 0.0) {
      double sq = 0.0;
      for (const auto& v : res) sq += v.squaredNorm();
      loss += w.force * sq / nm.force;
      cf = 2.0 * w.force / nm.force;
      r = std::move(res);
    }
  }

  Eigen::VectorXd qchi = Eigen::VectorXd::Zero(N);  // ∂L_Q/∂χ
  if (elec && smp.charges) {
    const Eigen::VectorXd dq = p.charges - *smp.charges;
    err.charge += dq.squaredNorm();
    err.charge_abs += dq.cwiseAbs().sum();
    err.n_charge += n;
    if (w.charge > 0.0) {
      loss += w.charge * dq.squaredNorm() / nm.charge;
      qchi = -c.ctx.solver->solve(2.0 * w.charge / nm.charge * dq, 0.0).first;
    }
  }
  if (!grad) return loss;
  const bool energy_path = !chi_only && (g_e != 0.0 || cf != 0.0);
  if (!energy_path && qchi.isZero(0.0)) return loss;

  const Eigen::MatrixXd gdot = r ? descriptor_jvp(d, *r) : Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(nf));
  std::vector<Dual> x;

  // Electronegativities and charges with their tangents.
  std::vector<Mlp::Tape<Dual>> chi_tapes(elec ? n : 0);
  Eigen::VectorXd qdot = Eigen::VectorXd::Zero(N);
  Eigen::MatrixXd adot;
  if (elec) {
    Eigen::VectorXd chidot(N);
    x.resize(nf);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t k = 0; k < nf; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        x[k] = Dual((d.values(ii, kk) - m.chi_input.mean[k]) / m.chi_input.scale[k], gdot(ii, kk) / m.chi_input.scale[k]);
      }
      chidot(ii) = m.chi_net.forward<Dual>(x, chi_tapes[i]).d;
    }
    if (r) {
      adot = kernel_jvp(s, c.ctx.alpha, c.ctx.cutoff, *r);
      qdot = c.ctx.solver->solve(-chidot - adot * p.charges, 0.0).first;
    }
  }

  // Energy network: ∂E/∂θ_E as a dual accumulator, plus ∂E_i/∂Q_i.
  const std::size_t pe = m.energy_net.num_params();
  Eigen::VectorXd sdot = Eigen::VectorXd::Zero(N);
  if (energy_path) {
    std::vector<Dual> acc(pe), gin(m.energy_net.num_inputs());
    Mlp::Tape<Dual> tape;
    x.resize(m.energy_net.num_inputs());
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t k = 0; k < nf; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        x[k] = Dual((d.values(ii, kk) - m.energy_input.mean[k]) / m.energy_input.scale[k],
                    gdot(ii, kk) / m.energy_input.scale[k]);
      }
      if (m.use_charge_input)
        x[nf] = Dual((p.charges(ii) - m.energy_input.mean[nf]) / m.energy_input.scale[nf], qdot(ii) / m.energy_input.scale[nf]);
      m.energy_net.forward<Dual>(x, tape);
      m.energy_net.backward<Dual>(tape, Dual(1.0), acc, m.use_charge_input ? std::span<Dual>(gin) : std::span<Dual>());
      if (m.use_charge_input) sdot(ii) = gin[nf].d / m.energy_input.scale[nf];
    }
    for (std::size_t k = 0; k < pe; ++k) (*grad)[k] += g_e * acc[k].v - cf * acc[k].d;
  }

  if (elec) {
    // ∂E/∂θ_χ = Σ (Q_i - λ_i) ∂χ_i/∂θ_χ; the seed below yields
    // g_e·X - cf·Ẋ + Σ qchi_i ∂χ_i/∂θ_χ in the dual part.
    Eigen::VectorXd lamdot = Eigen::VectorXd::Zero(N);
    if (energy_path && r && m.use_charge_input) lamdot = c.ctx.solver->solve(sdot - adot * p.adjoint, 0.0).first;
    std::vector<Dual> acc(m.chi_net.num_params());
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double wv = 0.0, wd = 0.0;
      if (energy_path) {
        wv = p.charges(ii) - p.adjoint(ii);
        wd = qdot(ii) - lamdot(ii);
      }
      const Dual seed(-cf * wv, g_e * wv - cf * wd + qchi(ii));
      m.chi_net.backward<Dual>(chi_tapes[i], seed, acc, {});
    }
    for (std::size_t k = 0; k < acc.size(); ++k) (*grad)[pe + k] += acc[k].d;
  }
  return loss;
}

inline LossResult batch_loss(const PotentialModel& m, const std::vector<const Cached*>& batch, const LossWeights& w,
                             bool with_gradient, bool chi_only = false) {
  const Norms nm = batch_norms(batch, m.use_electrostatics);
  std::vector<double> losses(batch.size());
  std::vector<ErrorSums> errs(batch.size());
  std::vector<std::vector<double>> grads(with_gradient ? batch.size() : 0);
  parallel_for(batch.size(), [&](std::size_t k) {
    if (with_gradient) grads[k].assign(m.num_params(), 0.0);
    losses[k] = sample_loss(m, *batch[k], w, nm, chi_only, errs[k], with_gradient ? &grads[k] : nullptr);
  }, 2);
  LossResult out;
  if (with_gradient) out.gradient.assign(m.num_params(), 0.0);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.value += losses[k];
    out.errors.add(errs[k]);
    if (with_gradient)
      for (std::size_t j = 0; j < out.gradient.size(); ++j) out.gradient[j] += grads[k][j];
  }
  return out;
}

inline std::vector<Cached> prepare(const PotentialModel& m, std::span<const Sample> samples) {
  std::vector<Cached> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    validate(samples[k]);
    out[k] = Cached{&samples[k], make_context(samples[k].structure, m)};
  }, 2);
  return out;
}

inline std::vector<const Cached*> pointers(const std::vector<Cached>& v) {
  std::vector<const Cached*> out;
  for (const auto& c : v) out.push_back(&c);
  return out;
}

}  // namespace training_detail

/// L = w_E·MSE(E/N) + w_F·MSE(F) + w_Q·MSE(Q) over the batch, with its
/// gradient with respect to get_parameters(m).
inline LossResult loss(const PotentialModel& m, std::span<const Sample> batch, const LossWeights& w,
                       bool with_gradient = true) {
  if (batch.empty()) throw DataError("empty batch");
  const auto cached = training_detail::prepare(m, batch);
  const auto res = training_detail::batch_loss(m, training_detail::pointers(cached), w, with_gradient);
  bool any = w.energy > 0.0;
  for (const auto& s : batch) {
    if (w.force > 0.0 && s.forces) any = true;
    if (w.charge > 0.0 && s.charges && m.use_electrostatics) any = true;
  }
  if (!any) throw DataError("no loss term has labels in this batch");
  return res;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double learning_rate = 0.0;
  bool accepted = true;
  ErrorSums train;
  std::optional<ErrorSums> validation;
};

enum class TrainStatus { Completed, TargetReached, Diverged };

struct TrainResult {
  PotentialModel model;
  std::vector<EpochRecord> history;
  TrainStatus status = TrainStatus::Completed;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> validation_indices;
  double seconds = 0.0;
};

/// Deterministic split: a seeded Fisher–Yates shuffle, the first
/// round(f·n) indices (at most n-1) go to validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed ^ 0x5EEDULL);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  std::size_t nv = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  nv = std::min(nv, n > 0 ? n - 1 : 0);
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(nv));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(nv), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

/// Per-feature mean and standard deviation over the training atoms; a
/// constant feature keeps scale 1.
inline void fit_standardization(PotentialModel& m, const std::vector<const training_detail::Cached*>& train) {
  const std::size_t nf = m.num_descriptor_features();
  std::vector<double> mean(nf, 0.0), sq(nf, 0.0);
  double count = 0.0, qsq = 0.0, qcount = 0.0;
  for (const auto* c : train) {
    const auto& v = c->ctx.descriptors.values;
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (std::size_t k = 0; k < nf; ++k) mean[k] += v(i, static_cast<Eigen::Index>(k));
      count += 1.0;
    }
    if (c->sample->charges) {
      qsq += c->sample->charges->squaredNorm();
      qcount += static_cast<double>(c->sample->charges->size());
    }
  }
  for (auto& x : mean) x /= count;
  for (const auto* c : train) {
    const auto& v = c->ctx.descriptors.values;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      for (std::size_t k = 0; k < nf; ++k) sq[k] += std::pow(v(i, static_cast<Eigen::Index>(k)) - mean[k], 2);
  }
  Standardizer st{mean, std::vector<double>(nf, 1.0)};
  for (std::size_t k = 0; k < nf; ++k) {
    const double sd = std::sqrt(sq[k] / count);
    if (sd > 1e-8) st.scale[k] = sd;
  }
  if (m.use_electrostatics) m.chi_input = st;
  if (m.use_charge_input) {
    st.mean.push_back(0.0);
    const double qs = qcount > 0 ? std::sqrt(qsq / qcount) : 0.0;
    st.scale.push_back(qs > 1e-8 ? qs : 1.0);
  }
  m.energy_input = st;
}

namespace training_detail {

/// Shifts the energy-network output bias so the mean per-atom prediction
/// matches the mean per-atom reference energy.
inline void center_energy_bias(PotentialModel& m, const std::vector<const Cached*>& train) {
  double offset = 0.0;
  for (const auto* c : train) {
    const auto p = predict(c->sample->structure, c->ctx, m);
    offset += (c->sample->energy - p.energy_total) / static_cast<double>(c->sample->structure.size());
  }
  offset /= static_cast<double>(train.size());
  const std::size_t last = m.energy_net.num_layers() - 1;
  m.energy_net.params()[m.energy_net.bias_offset(last)] += offset;
}

inline bool finite(const LossResult& r) {
  if (!std::isfinite(r.value)) return false;
  for (double g : r.gradient)
    if (!std::isfinite(g)) return false;
  return true;
}

}  // namespace training_detail

/// Fits a fresh model to the dataset: optional electronegativity-only phase
/// on reference charges, then joint momentum steepest descent on all loss
/// terms. A step that raises the training loss is undone, the momentum is
/// cleared and the step size shrinks; accepted steps grow it.
inline TrainResult train(const std::vector<Sample>& data, const TrainConfig& cfg) {
  using namespace training_detail;
  validate(cfg);
  if (data.empty()) throw DataError("dataset is empty");
  const auto t0 = std::chrono::steady_clock::now();

  std::set<int> species;
  for (const auto& s : data) species.insert(s.structure.species.begin(), s.structure.species.end());
  TrainResult result;
  PotentialModel& m = result.model;
  ModelOptions mopt = cfg.model;
  mopt.seed = cfg.seed;
  m = make_model(mopt, species);
  for (const auto& [z, e] : cfg.element_overrides)
    if (m.elements.count(z)) m.elements[z] = e;
  validate(m);

  std::tie(result.train_indices, result.validation_indices) = split_indices(data.size(), cfg.val_fraction, cfg.seed);
  const auto cached = prepare(m, data);
  std::vector<const Cached*> train_set, val_set;
  for (auto k : result.train_indices) train_set.push_back(&cached[k]);
  for (auto k : result.validation_indices) val_set.push_back(&cached[k]);
  fit_standardization(m, train_set);
  {
    // Start close to a constant per-atom energy: shrink the output layer.
    const std::size_t last = m.energy_net.num_layers() - 1;
    for (std::size_t k = 0; k < m.energy_net.widths()[last]; ++k)
      m.energy_net.params()[m.energy_net.weight_offset(last) + k] *= cfg.output_init_scale;
  }

  const bool charge_phase = m.use_electrostatics && cfg.weights.charge > 0.0 &&
                            std::any_of(train_set.begin(), train_set.end(), [](const Cached* c) { return c->sample->charges.has_value(); });
  const std::size_t pe = m.energy_net.num_params();

  auto record = [&](std::size_t epoch, const LossResult& tr, double lr, bool accepted) {
    EpochRecord rec{epoch, tr.value, lr, accepted, tr.errors, std::nullopt};
    if (!val_set.empty()) rec.validation = batch_loss(m, val_set, cfg.weights, false).errors;
    result.history.push_back(rec);
  };

  // One optimization phase over `epochs` epochs. Returns false on divergence.
  std::size_t epoch_counter = 0;
  auto run_phase = [&](std::size_t epochs, bool chi_only) {
    std::vector<double> theta = get_parameters(m), velocity(theta.size(), 0.0);
    double lr = cfg.learning_rate;
    auto eval = [&](bool grad) {
      auto r = batch_loss(m, train_set, cfg.weights, grad, chi_only);
      if (chi_only && grad)
        for (std::size_t k = 0; k < pe; ++k) r.gradient[k] = 0.0;
      return r;
    };
    LossResult cur = eval(true);
    if (!finite(cur)) return false;
    if (epoch_counter == 0) record(0, cur, lr, true);
    Rng shuffle(cfg.seed + 17);
    for (std::size_t e = 0; e < epochs; ++e) {
      const std::vector<double> start = theta;
      const bool minibatch = cfg.batch_size > 0 && cfg.batch_size < train_set.size();
      if (!minibatch) {
        for (std::size_t k = 0; k < theta.size(); ++k) {
          velocity[k] = cfg.momentum * velocity[k] - lr * cur.gradient[k];
          theta[k] += velocity[k];
        }
        set_parameters(m, theta);
      } else {
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.index(i)]);
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
          std::vector<const Cached*> batch;
          for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(train_set[order[k]]);
          auto g = batch_loss(m, batch, cfg.weights, true, chi_only);
          if (!finite(g)) return false;
          for (std::size_t k = 0; k < theta.size(); ++k) {
            const double gk = chi_only && k < pe ? 0.0 : g.gradient[k];
            velocity[k] = cfg.momentum * velocity[k] - lr * gk;
            theta[k] += velocity[k];
          }
          set_parameters(m, theta);
        }
      }
      LossResult next = eval(true);
      ++epoch_counter;
      if (!finite(next)) {
        set_parameters(m, start);
        return false;
      }
      const bool accepted = next.value <= cur.value;
      if (accepted) {
        cur = std::move(next);
        lr = std::min(lr * cfg.growth, cfg.max_learning_rate);
      } else {
        theta = start;
        set_parameters(m, theta);
        std::fill(velocity.begin(), velocity.end(), 0.0);
        lr *= cfg.backoff;
      }
      record(epoch_counter, cur, lr, accepted);
      if (!chi_only && cfg.target_rmse_energy && cfg.target_rmse_force) {
        const auto re = cur.errors.rmse_energy(), rf = cur.errors.rmse_force();
        if (re && *re < *cfg.target_rmse_energy && (!rf || *rf < *cfg.target_rmse_force)) {
          result.status = TrainStatus::TargetReached;
          return true;
        }
      }
    }
    return true;
  };

  bool ok = true;
  if (charge_phase) ok = run_phase(cfg.charge_epochs, true);
  if (ok) {
    center_energy_bias(m, train_set);
    ok = run_phase(cfg.epochs, false);
  }
  if (!ok) result.status = TrainStatus::Diverged;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

struct EnergyParityRow {
  std::size_t frame;
  std::size_t atoms;
  double reference;  // eV
  double predicted;  // eV
};

struct ForceParityRow {
  std::size_t frame, atom;
  int axis;
  double reference, predicted;  // eV/Å
};

struct ChargeParityRow {
  std::size_t frame, atom;
  double reference, predicted;  // e
};

struct EvaluationReport {
  ErrorSums errors;
  std::vector<EnergyParityRow> energies;
  std::vector<ForceParityRow> forces;
  std::vector<ChargeParityRow> charges;
};

/// RMSE/MAE per target and parity tables for a dataset.
inline EvaluationReport evaluate(const PotentialModel& m, std::span<const Sample> data) {
  EvaluationReport rep;
  std::vector<Prediction> preds(data.size());
  parallel_for(data.size(), [&](std::size_t k) { preds[k] = predict(data[k].structure, m); }, 2);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& s = data[k];
    const auto& p = preds[k];
    const std::size_t n = s.structure.size();
    rep.energies.push_back({k, n, s.energy, p.energy_total});
    const double de = (p.energy_total - s.energy) / static_cast<double>(n);
    rep.errors.energy += de * de;
    rep.errors.energy_abs += std::abs(de);
    rep.errors.n_energy += 1;
    if (s.forces)
      for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
          const double ref = (*s.forces)[i][a], pred = p.forces[i][a];
          rep.forces.push_back({k, i, a, ref, pred});
          rep.errors.force += (pred - ref) * (pred - ref);
          rep.errors.force_abs += std::abs(pred - ref);
          rep.errors.n_force += 1;
        }
    if (s.charges && m.use_electrostatics)
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double ref = (*s.charges)(ii), pred = p.charges(ii);
        rep.charges.push_back({k, i, ref, pred});
        rep.errors.charge += (pred - ref) * (pred - ref);
        rep.errors.charge_abs += std::abs(pred - ref);
        rep.errors.n_charge += 1;
      }
  }
  return rep;
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = csv_line({"epoch", "rmse_e_train", "rmse_e_val", "rmse_f_train", "rmse_f_val", "rmse_q_train", "rmse_q_val"});
  for (const auto& h : history) {
    const ErrorSums none;
    const ErrorSums& v = h.validation ? *h.validation : none;
    out += csv_line({std::to_string(h.epoch), format_optional(h.train.rmse_energy()), format_optional(v.rmse_energy()),
                     format_optional(h.train.rmse_force()), format_optional(v.rmse_force()),
                     format_optional(h.train.rmse_charge()), format_optional(v.rmse_charge())});
  }
  return out;
}

/// quantity,count,rmse,mae,unit; absent targets have empty rmse/mae cells.
inline std::string metrics_csv(const ErrorSums& e) {
  std::string out = csv_line({"quantity", "count", "rmse", "mae", "unit"});
  out += csv_line({"energy", std::to_string(e.n_energy), format_optional(e.rmse_energy()),
                   format_optional(ErrorSums::mean(e.energy_abs, e.n_energy)), "meV/atom"});
  out += csv_line({"force", std::to_string(e.n_force), format_optional(e.rmse_force()),
                   format_optional(ErrorSums::mean(e.force_abs, e.n_force)), "meV/A"});
  out += csv_line({"charge", std::to_string(e.n_charge), format_optional(e.rmse_charge()),
                   format_optional(ErrorSums::mean(e.charge_abs, e.n_charge)), "me"});
  return out;
}

inline std::string energy_parity_csv(const EvaluationReport& r) {
  std::string out = csv_line({"frame", "n_atoms", "e_ref_ev", "e_pred_ev"});
  for (const auto& row : r.energies)
    out += csv_line({std::to_string(row.frame), std::to_string(row.atoms), format_number(row.reference),
                     format_number(row.predicted)});
  return out;
}

inline std::string force_parity_csv(const EvaluationReport& r) {
  std::string out = csv_line({"frame", "atom", "axis", "f_ref_ev_per_a", "f_pred_ev_per_a"});
  for (const auto& row : r.forces)
    out += csv_line({std::to_string(row.frame), std::to_string(row.atom), std::string(1, "xyz"[row.axis]),
                     format_number(row.reference), format_number(row.predicted)});
  return out;
}

inline std::string charge_parity_csv(const EvaluationReport& r) {
  std::string out = csv_line({"frame", "atom", "q_ref_e", "q_pred_e"});
  for (const auto& row : r.charges)
    out += csv_line({std::to_string(row.frame), std::to_string(row.atom), format_number(row.reference),
                     format_number(row.predicted)});
  return out;
}

}  // namespace mamforge
