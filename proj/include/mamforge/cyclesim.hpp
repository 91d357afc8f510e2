#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mamforge/calculator.hpp"
#include "mamforge/format.hpp"
#include "mamforge/neighbor_list.hpp"
#include "mamforge/random.hpp"
#include "mamforge/structure.hpp"

namespace mamforge {

struct RelaxOptions {
  int max_steps = 500;
  double force_tolerance = 0.01;  // eV/Å
  double step_cap = 0.2;          // Å, largest single-atom move per step
};

inline void validate(const RelaxOptions& o) {
  if (o.max_steps < 0) throw ConfigError("relaxation step budget must be non-negative");
  if (!(o.force_tolerance > 0.0)) throw ConfigError("relaxation force tolerance must be positive");
  if (!(o.step_cap > 0.0)) throw ConfigError("relaxation step cap must be positive");
}

struct RelaxResult {
  Structure structure;
  std::vector<double> energies;  // energy after each accepted step, starting value first
  int accepted = 0;
  int rejected = 0;
  double max_force = 0.0;
  bool converged = false;
};

/// Steepest descent with an adaptive step: a step along the forces is kept
/// when the energy does not rise, growing the step; otherwise it is undone
/// and the step halves. Optional constant external forces enter as the
/// potential -Σ b_i·r_i.
inline RelaxResult relax(const Structure& s, const Calculator& calc, const RelaxOptions& opt,
                         const std::vector<Vec3>* external = nullptr) {
  validate(opt);
  if (external && external->size() != s.size()) throw DataError("external force array length mismatch");
  auto total = [&](const Structure& x, Evaluation& ev) {
    ev = calc.evaluate(x);
    double e = ev.energy;
    if (external)
      for (std::size_t i = 0; i < x.size(); ++i) {
        e -= (*external)[i].dot(x.positions[i]);
        ev.forces[i] += (*external)[i];
      }
    if (!std::isfinite(e)) throw NumericalError("non-finite energy during relaxation");
    for (const auto& f : ev.forces)
      if (!f.allFinite()) throw NumericalError("non-finite force during relaxation");
    return e;
  };

  RelaxResult out;
  out.structure = s;
  Evaluation ev;
  double e = total(out.structure, ev);
  out.energies.push_back(e);
  out.max_force = max_force(ev.forces);
  double step = opt.step_cap / std::max(out.max_force, 1e-12);  // Å per eV/Å
  for (int it = 0; it < opt.max_steps && out.max_force > opt.force_tolerance; ++it) {
    const double move = std::min(step, opt.step_cap / out.max_force);
    Structure trial = out.structure;
    for (std::size_t i = 0; i < trial.size(); ++i) trial.positions[i] += move * ev.forces[i];
    Evaluation tev;
    const double et = total(trial, tev);
    if (et <= e) {
      out.structure = std::move(trial);
      ev = std::move(tev);
      e = et;
      out.energies.push_back(e);
      out.max_force = max_force(ev.forces);
      ++out.accepted;
      step = move * 1.2;
    } else {
      ++out.rejected;
      step = move * 0.5;
      if (move * out.max_force < 1e-14) break;
    }
  }
  out.converged = out.max_force <= opt.force_tolerance;
  return out;
}

/// Folds positions back into the cell along periodic directions.
inline void wrap_positions(Structure& s) {
  if (!s.any_periodic()) return;
  const Mat3 inv = s.cell.inverse();
  for (auto& r : s.positions) {
    Eigen::RowVector3d f = r.transpose() * inv;
    for (int a = 0; a < 3; ++a)
      if (s.periodic[a]) f[a] -= std::floor(f[a]);
    r = (f * s.cell).transpose();
  }
}

/// Static stress of the atoms inside a slab region: Σ virials / region volume.
inline Mat3 region_stress(const Structure& s, const Evaluation& ev, const Region& region) {
  Mat3 w = Mat3::Zero();
  std::size_t count = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (region.contains(s, i)) {
      w += ev.atom_virials[i];
      ++count;
    }
  if (count == 0) throw DataError("region contains no atoms");
  return w / region_volume(s.cell, region);
}

inline Mat3 region_stress(const Structure& s, const Calculator& calc, const Region& region) {
  return region_stress(s, calc.evaluate(s), region);
}

struct CycleConfig {
  int intercalant = 3;
  Region region{2, 0.0, 1.0};                  // insertion slab
  std::optional<Region> stress_region;         // defaults to the insertion slab
  int atoms_per_step = 1;
  double bias = 0.1;                           // eV/Å
  std::optional<Vec3> bias_direction;          // charging direction; default inward normal
  int bias_steps = 50;
  RelaxOptions relax;
  double x_max = 1.0;                          // intercalants per host atom
  double exclusion = 1.5;                      // Å
  int max_attempts = 1000;
  std::uint64_t seed = 1;
};

inline void validate(const CycleConfig& c) {
  (void)element(c.intercalant);
  if (c.atoms_per_step < 1) throw ConfigError("atoms per step must be at least 1");
  if (!(c.bias >= 0.0)) throw ConfigError("bias force must be non-negative");
  if (c.bias_direction && !(c.bias_direction->norm() > 0.0)) throw ConfigError("bias direction must be nonzero");
  if (c.bias_steps < 0) throw ConfigError("bias step budget must be non-negative");
  if (!(c.x_max > 0.0)) throw ConfigError("x_max must be positive");
  if (!(c.exclusion >= 0.0)) throw ConfigError("exclusion radius must be non-negative");
  if (c.max_attempts < 1) throw ConfigError("placement attempts must be at least 1");
  validate(c.relax);
}

/// Structure plus the intercalant flags the protocol needs to track.
struct CycleState {
  Structure structure;
  std::vector<bool> intercalant;
  std::size_t step = 0;

  explicit CycleState(Structure s = {}) : structure(std::move(s)), intercalant(structure.size(), false) {}

  std::size_t intercalant_count() const { return static_cast<std::size_t>(std::count(intercalant.begin(), intercalant.end(), true)); }
  std::size_t host_count() const { return structure.size() - intercalant_count(); }
  double content() const {
    if (host_count() == 0) throw DataError("content x needs at least one host atom");
    return static_cast<double>(intercalant_count()) / static_cast<double>(host_count());
  }
};

/// Unit charging direction: configured, or along the slab axis toward the
/// host centroid.
inline Vec3 charging_direction(const CycleState& st, const CycleConfig& cfg) {
  if (cfg.bias_direction) return cfg.bias_direction->normalized();
  const auto& s = st.structure;
  double c = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!st.intercalant[i]) {
      c += s.positions[i][cfg.region.axis];
      ++n;
    }
  const double mid = 0.5 * (cfg.region.min + cfg.region.max);
  Vec3 d = Vec3::Zero();
  d[cfg.region.axis] = (n == 0 || c / static_cast<double>(n) >= mid) ? 1.0 : -1.0;
  return d;
}

inline Rng step_rng(const CycleConfig& cfg, std::size_t step) {
  return Rng(cfg.seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(step) + 1)));
}

/// Uniform point in the cell with the slab coordinate drawn inside the region.
inline Vec3 sample_in_region(Rng& rng, const Structure& s, const Region& region) {
  if (cell_is_singular(s.cell)) throw DataError("insertion needs a nonsingular (reference) cell");
  const Vec3 f = rng.vec(0.0, 1.0);
  Vec3 r = (f.transpose() * s.cell).transpose();
  r[region.axis] = rng.uniform(region.min, region.max);
  return r;
}

inline CycleState charge_step(CycleState st, const Calculator& calc, const CycleConfig& cfg) {
  validate(cfg);
  Rng rng = step_rng(cfg, st.step);
  const MinimumImage mic(st.structure);
  std::vector<std::size_t> fresh;
  for (int k = 0; k < cfg.atoms_per_step; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const Vec3 r = sample_in_region(rng, st.structure, cfg.region);
      bool clear = true;
      for (const auto& q : st.structure.positions)
        if (mic(r - q).norm() < cfg.exclusion) {
          clear = false;
          break;
        }
      if (!clear) continue;
      st.structure.positions.push_back(r);
      st.structure.species.push_back(cfg.intercalant);
      st.structure.masses.push_back(element(cfg.intercalant).mass);
      if (st.structure.velocities) st.structure.velocities->push_back(Vec3::Zero());
      st.intercalant.push_back(true);
      fresh.push_back(st.structure.size() - 1);
      placed = true;
    }
    if (!placed) throw DataError("could not place intercalant: insertion region too crowded");
  }

  if (cfg.bias > 0.0 && cfg.bias_steps > 0) {
    std::vector<Vec3> ext(st.structure.size(), Vec3::Zero());
    const Vec3 dir = charging_direction(st, cfg);
    for (auto i : fresh) ext[i] = cfg.bias * dir;
    RelaxOptions biased = cfg.relax;
    biased.max_steps = cfg.bias_steps;
    st.structure = relax(st.structure, calc, biased, &ext).structure;
  }
  st.structure = relax(st.structure, calc, cfg.relax).structure;
  wrap_positions(st.structure);
  ++st.step;
  return st;
}

/// Intercalants ordered by distance to the insertion slab, ties by index.
inline std::vector<std::size_t> extraction_order(const CycleState& st, const Region& region) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < st.structure.size(); ++i)
    if (st.intercalant[i]) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return region.distance(st.structure.positions[a]) < region.distance(st.structure.positions[b]);
  });
  return idx;
}

inline CycleState discharge_step(CycleState st, const Calculator& calc, const CycleConfig& cfg) {
  validate(cfg);
  if (st.intercalant_count() == 0) throw DataError("no intercalants to extract");
  if (st.intercalant_count() < static_cast<std::size_t>(cfg.atoms_per_step))
    throw DataError("fewer intercalants present than atoms per step");
  auto order = extraction_order(st, cfg.region);
  order.resize(static_cast<std::size_t>(cfg.atoms_per_step));

  if (cfg.bias > 0.0 && cfg.bias_steps > 0) {
    std::vector<Vec3> ext(st.structure.size(), Vec3::Zero());
    const Vec3 dir = charging_direction(st, cfg);
    for (auto i : order) ext[i] = -cfg.bias * dir;
    RelaxOptions biased = cfg.relax;
    biased.max_steps = cfg.bias_steps;
    st.structure = relax(st.structure, calc, biased, &ext).structure;
  }

  std::vector<bool> drop(st.structure.size(), false);
  for (auto i : order) drop[i] = true;
  CycleState next;
  next.structure = st.structure;
  next.structure.positions.clear();
  next.structure.species.clear();
  next.structure.masses.clear();
  if (next.structure.velocities) next.structure.velocities->clear();
  next.intercalant.clear();
  next.step = st.step;
  for (std::size_t i = 0; i < st.structure.size(); ++i) {
    if (drop[i]) continue;
    next.structure.positions.push_back(st.structure.positions[i]);
    next.structure.species.push_back(st.structure.species[i]);
    next.structure.masses.push_back(st.structure.masses[i]);
    if (st.structure.velocities) next.structure.velocities->push_back((*st.structure.velocities)[i]);
    next.intercalant.push_back(st.intercalant[i]);
  }
  if (next.structure.size() > 0) next.structure = relax(next.structure, calc, cfg.relax).structure;
  wrap_positions(next.structure);
  ++next.step;
  return next;
}

enum class CycleMode { Charge, Discharge };

inline const char* mode_name(CycleMode m) { return m == CycleMode::Charge ? "charge" : "discharge"; }

struct ScheduleEntry {
  CycleMode mode = CycleMode::Charge;
  int steps = 1;
};

struct CycleRecord {
  std::size_t step = 0;
  CycleMode mode = CycleMode::Charge;
  double x = 0.0;
  double energy = 0.0;                 // eV
  std::optional<Mat3> stress;          // eV/Å³, global static
  std::optional<Mat3> region_stress;   // eV/Å³, empty when the region holds no atoms
  double max_force = 0.0;              // eV/Å
};

struct CyclingTrace {
  std::vector<CycleRecord> records;
  std::vector<CycleState> frames;
  std::string stop_reason = "schedule complete";
};

inline std::string trace_csv_header() {
  return "step,mode,x,e_total_ev,sxx,syy,szz,syz,sxz,sxy,rxx,ryy,rzz,ryz,rxz,rxy,fmax";
}

inline std::string trace_csv_row(const CycleRecord& r) {
  std::vector<std::string> cells{std::to_string(r.step), mode_name(r.mode), format_number(r.x), format_number(r.energy)};
  auto put = [&](const std::optional<Mat3>& m) {
    static constexpr int p[6] = {0, 1, 2, 1, 0, 0}, q[6] = {0, 1, 2, 2, 2, 1};
    for (int k = 0; k < 6; ++k) cells.push_back(m ? format_number((*m)(p[k], q[k])) : std::string());
  };
  put(r.stress);
  put(r.region_stress);
  cells.push_back(format_number(r.max_force));
  return csv_line(cells);
}

inline CycleRecord record_state(const CycleState& st, const Calculator& calc, const CycleConfig& cfg, CycleMode mode) {
  const auto ev = calc.evaluate(st.structure);
  CycleRecord r;
  r.step = st.step;
  r.mode = mode;
  r.x = st.content();
  r.energy = ev.energy;
  r.stress = ev.stress;
  r.max_force = max_force(ev.forces);
  const Region& region = cfg.stress_region ? *cfg.stress_region : cfg.region;
  bool any = false;
  for (std::size_t i = 0; i < st.structure.size(); ++i) any = any || region.contains(st.structure, i);
  if (any) r.region_stress = region_stress(st.structure, ev, region);
  return r;
}

/// Executes the schedule and records the state after every step. When a
/// sink is given, each row is written and flushed as soon as it exists.
inline CyclingTrace run_cycle(const Structure& s, const Calculator& calc, const CycleConfig& cfg,
                              const std::vector<ScheduleEntry>& schedule, std::ostream* sink = nullptr) {
  validate(cfg);
  if (schedule.empty()) throw ConfigError("cycling schedule is empty");
  for (const auto& e : schedule)
    if (e.steps < 1) throw ConfigError("schedule entries need at least one step");
  CyclingTrace trace;
  CycleState st(s);
  (void)st.content();
  if (sink) *sink << trace_csv_header() << '\n' << std::flush;
  for (const auto& entry : schedule)
    for (int k = 0; k < entry.steps; ++k) {
      if (entry.mode == CycleMode::Charge) {
        const double next = static_cast<double>(st.intercalant_count() + static_cast<std::size_t>(cfg.atoms_per_step)) /
                            static_cast<double>(st.host_count());
        if (next > cfg.x_max + 1e-12) {
          trace.stop_reason = "x_max reached";
          return trace;
        }
        st = charge_step(std::move(st), calc, cfg);
      } else {
        st = discharge_step(std::move(st), calc, cfg);
      }
      trace.records.push_back(record_state(st, calc, cfg, entry.mode));
      trace.frames.push_back(st);
      if (sink) *sink << trace_csv_row(trace.records.back()) << std::flush;
    }
  return trace;
}

}  // namespace mamforge
