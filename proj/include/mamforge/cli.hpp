#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "mamforge/calculator.hpp"
#include "mamforge/chemomech.hpp"
#include "mamforge/config.hpp"
#include "mamforge/cyclesim.hpp"
#include "mamforge/format.hpp"
#include "mamforge/selftest.hpp"
#include "mamforge/training.hpp"
#include "mamforge/xyz.hpp"

namespace mamforge::cli {

inline constexpr const char* kVersion = "0.1.0";

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("SHA-256 computation failed");
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return s.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << text;
  if (!out) throw DataError("write to '" + path + "' failed");
}

/// Provenance record written once per run.
struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> inputs;  // path -> sha256
  std::map<std::string, std::string> outputs;
  std::optional<std::uint64_t> seed;
  double wall_time_s = 0.0;
  std::string status = "ok";

  void add_input(const std::string& path) { inputs[path] = sha256_hex(read_text_file(path)); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["tool"] = "mamforge";
    j["version"] = kVersion;
    j["subcommand"] = subcommand;
    j["config"] = config;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    j["threads"] = thread_count();
    j["wall_time_s"] = wall_time_s;
    j["status"] = status;
    return j;
  }
};

/// Shared state of one invocation.
struct Session {
  std::ostream& out;
  std::ostream& err;
  RunManifest manifest;
  std::string manifest_path;
  Config config;
  std::vector<std::string> overrides;
  std::string config_path;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  /// File values first, then command-line overrides.
  void load_config() {
    if (!config_path.empty()) {
      config = Config::load(config_path);
      manifest.add_input(config_path);
    }
    for (const auto& o : overrides) config.set(o);
  }

  void finish(const std::string& default_manifest) {
    manifest.config = config.resolved();
    manifest.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text_file(manifest_path.empty() ? default_manifest : manifest_path, manifest.to_json().dump(2) + "\n");
  }
};

// Calculators ----------------------------------------------------------------

inline const std::set<std::string> kLjKeys{"lj.epsilon", "lj.sigma", "lj.cutoff"};

inline std::unique_ptr<Calculator> make_calculator(const std::string& spec, Session& ss) {
  if (spec == "oracle:lj") {
    LennardJonesParams p;
    p.epsilon = ss.config.get_double("lj.epsilon", p.epsilon);
    p.sigma = ss.config.get_double("lj.sigma", p.sigma);
    p.cutoff = ss.config.get_double("lj.cutoff", p.cutoff);
    return std::make_unique<LennardJones>(p);
  }
  auto m = load_model(spec);
  ss.manifest.add_input(spec);
  const auto mode = ss.config.get_string("model.charge_mode", "response");
  if (mode != "response" && mode != "frozen") throw ConfigError("model.charge_mode must be response or frozen");
  return std::make_unique<NeuralCalculator>(std::move(m), mode == "frozen" ? ChargeMode::Frozen : ChargeMode::Response);
}

inline Mat3 total_stress(const Structure& s, const Mat3& static_stress) {
  return s.velocities ? Mat3(static_stress + kinetic_stress(s, volume(s))) : static_stress;
}

inline std::vector<std::string> tensor_cells(const std::optional<Mat3>& m) {
  std::vector<std::string> cells;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cells.push_back(m ? format_number((*m)(r, c)) : std::string());
  return cells;
}

// train / evaluate / predict ------------------------------------------------

inline const std::set<std::string> kTrainKeys{
    "loss.w_e", "loss.w_f", "loss.w_q", "opt.lr", "opt.epochs", "opt.seed", "opt.batch_size", "opt.momentum",
    "opt.max_lr", "opt.backoff", "opt.growth", "opt.charge_epochs", "opt.output_init_scale", "opt.target_rmse_e",
    "opt.target_rmse_f", "data.val_fraction", "elec.enable", "elec.charge_input", "elec.cutoff", "model.cutoff",
    "model.hidden"};

inline std::vector<std::size_t> parse_hidden(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = xyz_detail::trim(item);
    std::size_t pos = 0;
    long v = 0;
    try {
      v = std::stol(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size() || v < 1) throw ConfigError("model.hidden expects comma-separated positive widths");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("model.hidden is empty");
  return out;
}

inline TrainConfig train_config(Config& c) {
  c.check_known(kTrainKeys, {"elec.alpha.", "elec.hardness."});
  TrainConfig t;
  t.weights.energy = c.get_double("loss.w_e", t.weights.energy);
  t.weights.force = c.get_double("loss.w_f", t.weights.force);
  t.weights.charge = c.get_double("loss.w_q", t.weights.charge);
  t.learning_rate = c.get_double("opt.lr", t.learning_rate);
  const auto epochs = c.get_int("opt.epochs", static_cast<long long>(t.epochs));
  if (epochs < 0) throw ConfigError("opt.epochs must be non-negative");
  t.epochs = static_cast<std::size_t>(epochs);
  t.seed = c.get_seed("opt.seed", t.seed);
  const auto batch = c.get_int("opt.batch_size", 0);
  if (batch < 0) throw ConfigError("opt.batch_size must be non-negative");
  t.batch_size = static_cast<std::size_t>(batch);
  t.momentum = c.get_double("opt.momentum", t.momentum);
  t.max_learning_rate = c.get_double("opt.max_lr", t.max_learning_rate);
  t.backoff = c.get_double("opt.backoff", t.backoff);
  t.growth = c.get_double("opt.growth", t.growth);
  const auto ce = c.get_int("opt.charge_epochs", static_cast<long long>(t.charge_epochs));
  if (ce < 0) throw ConfigError("opt.charge_epochs must be non-negative");
  t.charge_epochs = static_cast<std::size_t>(ce);
  t.output_init_scale = c.get_double("opt.output_init_scale", t.output_init_scale);
  t.target_rmse_energy = c.get_optional_double("opt.target_rmse_e");
  t.target_rmse_force = c.get_optional_double("opt.target_rmse_f");
  t.val_fraction = c.get_double("data.val_fraction", t.val_fraction);
  t.model.use_electrostatics = c.get_bool("elec.enable", false);
  t.model.use_charge_input = c.get_bool("elec.charge_input", t.model.use_electrostatics);
  t.model.periodic_elec_cutoff = c.get_double("elec.cutoff", t.model.periodic_elec_cutoff);
  t.model.acsf = default_acsf(c.get_double("model.cutoff", default_acsf().cutoff));
  t.model.hidden = parse_hidden(c.get_string("model.hidden", "24,24"));
  t.model.seed = t.seed;
  for (const auto& key : c.keys_with_prefix("elec.alpha.")) {
    const int z = atomic_number(key.substr(11));
    auto& e = t.element_overrides.try_emplace(z, default_element_params(z)).first->second;
    e.alpha = c.get_double(key, e.alpha);
  }
  for (const auto& key : c.keys_with_prefix("elec.hardness.")) {
    const int z = atomic_number(key.substr(14));
    auto& e = t.element_overrides.try_emplace(z, default_element_params(z)).first->second;
    e.hardness = c.get_double(key, e.hardness);
  }
  validate(t);
  return t;
}

inline const char* status_name(TrainStatus s) {
  switch (s) {
    case TrainStatus::Completed: return "completed";
    case TrainStatus::TargetReached: return "target_reached";
    case TrainStatus::Diverged: return "diverged";
  }
  return "unknown";
}

struct TrainArgs {
  std::string data, model_out, history_out;
};

inline int run_train(Session& ss, const TrainArgs& a) {
  ss.manifest.subcommand = "train";
  ss.load_config();
  const auto cfg = train_config(ss.config);
  ss.manifest.seed = cfg.seed;
  const auto data = load_dataset(a.data);
  ss.manifest.add_input(a.data);
  const auto res = train(data, cfg);
  save_model(res.model, a.model_out);
  const std::string history = a.history_out.empty() ? a.model_out + ".history.csv" : a.history_out;
  write_text_file(history, history_csv(res.history));
  ss.manifest.outputs = {{"model", a.model_out}, {"history", history}};
  ss.manifest.status = status_name(res.status);
  const auto& last = res.history.back();
  ss.out << csv_line({"status", "epochs", "loss", "rmse_e_train_mev_per_atom", "rmse_f_train_mev_per_a", "rmse_q_train_me"});
  ss.out << csv_line({status_name(res.status), std::to_string(last.epoch), format_number(last.loss),
                      format_optional(last.train.rmse_energy()), format_optional(last.train.rmse_force()),
                      format_optional(last.train.rmse_charge())});
  ss.finish(a.model_out + ".manifest.json");
  if (res.status == TrainStatus::Diverged) throw NumericalError("training diverged; last good weights were saved");
  return 0;
}

struct EvaluateArgs {
  std::string data, model, metrics_out, parity_prefix;
};

inline int run_evaluate(Session& ss, const EvaluateArgs& a) {
  ss.manifest.subcommand = "evaluate";
  const auto m = load_model(a.model);
  ss.manifest.add_input(a.model);
  const auto data = load_dataset(a.data);
  ss.manifest.add_input(a.data);
  const auto rep = evaluate(m, data);
  const auto metrics = metrics_csv(rep.errors);
  if (a.metrics_out.empty()) {
    ss.out << metrics;
  } else {
    write_text_file(a.metrics_out, metrics);
    ss.manifest.outputs["metrics"] = a.metrics_out;
  }
  if (!a.parity_prefix.empty()) {
    write_text_file(a.parity_prefix + "energy.csv", energy_parity_csv(rep));
    write_text_file(a.parity_prefix + "force.csv", force_parity_csv(rep));
    write_text_file(a.parity_prefix + "charge.csv", charge_parity_csv(rep));
    ss.manifest.outputs["parity_prefix"] = a.parity_prefix;
  }
  ss.finish(a.metrics_out.empty() ? "mamforge-evaluate.manifest.json" : a.metrics_out + ".manifest.json");
  return 0;
}

struct PredictArgs {
  std::string structure, model, out, summary;
};

inline std::string predict_summary_header() {
  std::vector<std::string> h{"frame", "n_atoms", "e_total_ev", "e_short_ev", "e_elec_ev", "fmax_ev_per_a"};
  for (const char* c : {"sxx", "sxy", "sxz", "syx", "syy", "syz", "szx", "szy", "szz"}) h.push_back(std::string(c) + "_ev_per_a3");
  return csv_line(h);
}

inline int run_predict(Session& ss, const PredictArgs& a) {
  ss.manifest.subcommand = "predict";
  ss.load_config();
  ss.config.check_known(kLjKeys, {"model."});
  const auto frames = read_xyz_file(a.structure);
  ss.manifest.add_input(a.structure);
  const auto calc = make_calculator(a.model, ss);
  const auto* neural = dynamic_cast<const NeuralCalculator*>(calc.get());

  std::vector<Frame> out_frames;
  std::string summary = predict_summary_header();
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const Structure& s = frames[k].structure;
    Frame f{s, {}, {}, {}};
    std::vector<std::string> row{std::to_string(k), std::to_string(s.size())};
    std::optional<Mat3> stress;
    if (neural) {
      const auto p = predict(s, neural->model());
      f.energy = p.energy_total;
      f.forces = p.forces;
      if (neural->model().use_electrostatics) f.charges = std::vector<double>(p.charges.data(), p.charges.data() + p.charges.size());
      row.insert(row.end(), {format_number(p.energy_total), format_number(p.energy_short), format_number(p.energy_elec),
                             format_number(max_force(p.forces))});
      stress = p.stress();
    } else {
      const auto ev = calc->evaluate(s);
      f.energy = ev.energy;
      f.forces = ev.forces;
      row.insert(row.end(), {format_number(ev.energy), "", "", format_number(max_force(ev.forces))});
      if (ev.stress) stress = total_stress(s, *ev.stress);
    }
    for (auto& c : tensor_cells(stress)) row.push_back(c);
    summary += csv_line(row);
    out_frames.push_back(std::move(f));
  }
  const std::string xyz = a.out.empty() ? "" : a.out;
  if (!xyz.empty()) {
    write_text_file(xyz, format_frames(out_frames));
    ss.manifest.outputs["structure"] = xyz;
  }
  if (!a.summary.empty()) {
    write_text_file(a.summary, summary);
    ss.manifest.outputs["summary"] = a.summary;
  } else {
    ss.out << summary;
  }
  ss.finish(!xyz.empty() ? xyz + ".manifest.json"
                         : (!a.summary.empty() ? a.summary + ".manifest.json" : "mamforge-predict.manifest.json"));
  return 0;
}

// analyze ----------------------------------------------------------------------

/// Analyzer with scalar inputs: one flag per field or a CSV batch whose
/// header names the fields.
struct ScalarAnalyzer {
  std::string name;
  std::string help;
  std::vector<std::string> fields;
  std::vector<std::string> headers;
  std::function<std::vector<double>(const std::map<std::string, double>&)> fn;
};

inline long as_count(double v, const char* what) {
  if (v != std::floor(v) || std::abs(v) > 1e15) throw DataError(std::string(what) + " must be an integer");
  return static_cast<long>(v);
}

inline const std::vector<ScalarAnalyzer>& scalar_analyzers() {
  static const std::vector<ScalarAnalyzer> list{
      {"wsep", "work of separation from slab and interface energies", {"e1", "e2", "e12", "area"},
       {"w_sep_ev_per_a2", "w_sep_j_per_m2"},
       [](const auto& v) {
         const auto w = work_of_separation({v.at("e1"), v.at("e2"), v.at("e12"), v.at("area")});
         return std::vector<double>{w.ev_per_a2, w.j_per_m2};
       }},
      {"pgrad", "potential gradient across an interface gap", {"u1", "u2", "d"}, {"dphi_dz_v_per_a"},
       [](const auto& v) { return std::vector<double>{potential_gradient(v.at("u1"), v.at("u2"), v.at("d"))}; }},
      {"ef", "interphase formation energy", {"ed", "eel"}, {"e_f_ev"},
       [](const auto& v) { return std::vector<double>{interphase_formation_energy(v.at("ed"), v.at("eel"))}; }},
      {"sei", "SEI formation energy per reacted atom", {"esei", "ex", "eel", "nx"}, {"e_f_sei_ev_per_atom"},
       [](const auto& v) {
         return std::vector<double>{sei_formation_energy(v.at("esei"), v.at("ex"), v.at("eel"), as_count(v.at("nx"), "nx"))};
       }},
      {"voltage", "intercalation voltage", {"def", "n"}, {"voltage_v"},
       [](const auto& v) { return std::vector<double>{intercalation_voltage(v.at("def"), as_count(v.at("n"), "n"))}; }},
      {"kinetics", "diffusion time and rate limit (lambda in cm, D in cm^2/s)", {"lambda", "D"}, {"tau_s", "c_rate_per_h"},
       [](const auto& v) {
         const auto k = diffusion_kinetics(v.at("lambda"), v.at("D"));
         return std::vector<double>{k.tau_s, k.c_rate_per_h};
       }},
  };
  return list;
}

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : split_lines(read_text_file(path))) {
    const auto t = xyz_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(xyz_detail::trim(cell));
    if (!t.empty() && t.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw DataError("'" + path + "' has no rows");
  return rows;
}

inline double csv_number(const std::string& s, const std::string& what) {
  try {
    return xyz_detail::to_double(s, what.c_str());
  } catch (const DataError&) {
    throw DataError("bad number '" + s + "' for " + what);
  }
}

inline int run_scalar(Session& ss, const ScalarAnalyzer& an, const std::map<std::string, std::optional<double>>& flags,
                      const std::string& batch) {
  ss.manifest.subcommand = "analyze " + an.name;
  std::string text = csv_line(an.headers);
  if (!batch.empty()) {
    ss.manifest.add_input(batch);
    const auto rows = read_csv(batch);
    std::vector<std::size_t> col;
    for (const auto& f : an.fields) {
      const auto it = std::find(rows[0].begin(), rows[0].end(), f);
      if (it == rows[0].end()) throw DataError("batch file lacks column '" + f + "'");
      col.push_back(static_cast<std::size_t>(it - rows[0].begin()));
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
      std::map<std::string, double> v;
      for (std::size_t k = 0; k < an.fields.size(); ++k) {
        if (col[k] >= rows[r].size()) throw DataError("batch row " + std::to_string(r) + " is short");
        v[an.fields[k]] = csv_number(rows[r][col[k]], an.fields[k]);
      }
      std::vector<std::string> cells;
      for (double x : an.fn(v)) cells.push_back(format_number(x));
      text += csv_line(cells);
    }
  } else {
    std::map<std::string, double> v;
    for (const auto& f : an.fields) {
      const auto& x = flags.at(f);
      if (!x) throw UsageError("analyze " + an.name + " needs --" + f + " (or --batch)");
      v[f] = *x;
      ss.config.set(f, format_number(*x));
      (void)ss.config.get_double(f, *x);
    }
    std::vector<std::string> cells;
    for (double x : an.fn(v)) cells.push_back(format_number(x));
    text += csv_line(cells);
  }
  ss.out << text;
  ss.finish("mamforge-analyze.manifest.json");
  return 0;
}

inline VoigtTensor read_voigt_csv(const std::string& path) {
  const auto rows = read_csv(path);
  std::vector<double> vals;
  for (const auto& r : rows)
    for (const auto& c : r)
      if (!c.empty()) vals.push_back(csv_number(c, "stiffness entry"));
  if (vals.size() != 36) throw DataError("stiffness file must hold 36 numbers (6 rows of 6)");
  VoigtTensor c;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) c(i, j) = vals[static_cast<std::size_t>(6 * i + j)];
  return c;
}

struct ModuliArgs {
  std::string tensor_file;
  std::vector<double> cubic;
};

inline int run_moduli(Session& ss, const ModuliArgs& a) {
  ss.manifest.subcommand = "analyze moduli";
  VoigtTensor c = VoigtTensor::Zero();
  if (!a.tensor_file.empty()) {
    ss.manifest.add_input(a.tensor_file);
    c = read_voigt_csv(a.tensor_file);
  } else if (a.cubic.size() == 3) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) c(i, j) = a.cubic[1];
      c(i, i) = a.cubic[0];
      c(i + 3, i + 3) = a.cubic[2];
    }
    ss.config.set("cubic", format_number(a.cubic[0]) + "," + format_number(a.cubic[1]) + "," + format_number(a.cubic[2]));
    (void)ss.config.get_string("cubic", "");
  } else {
    throw UsageError("analyze moduli needs --tensor <csv> or --cubic C11,C12,C44");
  }
  const auto m = voigt_moduli(c);
  ss.out << csv_line({"b_gpa", "g_gpa", "e_young_gpa"});
  ss.out << csv_line({format_number(m.bulk), format_number(m.shear), format_optional(m.young)});
  ss.finish("mamforge-analyze.manifest.json");
  return 0;
}

struct ElasticArgs {
  std::string structure, model;
  double delta = 1e-3;
  std::size_t frame = 0;
};

inline Structure pick_frame(const std::string& path, std::size_t index) {
  const auto frames = read_xyz_file(path);
  if (index >= frames.size()) throw DataError("frame " + std::to_string(index) + " not in '" + path + "'");
  return frames[index].structure;
}

inline int run_elastic(Session& ss, const ElasticArgs& a) {
  ss.manifest.subcommand = "analyze elastic";
  ss.load_config();
  ss.config.check_known(kLjKeys, {"model."});
  const auto s = pick_frame(a.structure, a.frame);
  ss.manifest.add_input(a.structure);
  const auto calc = make_calculator(a.model, ss);
  const auto r = elastic_constants(s, *calc, a.delta);
  ss.config.set("delta", format_number(a.delta));
  (void)ss.config.get_double("delta", a.delta);
  ss.config.set("relax_force_tolerance_ev_per_a", format_number(r.force_tolerance));
  (void)ss.config.get_double("relax_force_tolerance_ev_per_a", r.force_tolerance);
  ss.config.set("reference_max_force_ev_per_a", format_number(r.max_force));
  (void)ss.config.get_double("reference_max_force_ev_per_a", r.max_force);
  ss.out << csv_line({"i", "c1_gpa", "c2_gpa", "c3_gpa", "c4_gpa", "c5_gpa", "c6_gpa"});
  for (int i = 0; i < 6; ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (int j = 0; j < 6; ++j) row.push_back(format_number(r.c(i, j)));
    ss.out << csv_line(row);
  }
  ss.finish("mamforge-analyze.manifest.json");
  return 0;
}

struct SlidingArgs {
  std::string profile, traction_out;
};

inline int run_sliding(Session& ss, const SlidingArgs& a) {
  ss.manifest.subcommand = "analyze sliding";
  ss.manifest.add_input(a.profile);
  const auto rows = read_csv(a.profile);
  std::size_t start = 0;
  if (!rows.empty() && !rows[0].empty()) {
    try {
      (void)csv_number(rows[0][0], "l");
    } catch (const DataError&) {
      start = 1;  // header row
    }
  }
  std::vector<SlidingSample> p;
  for (std::size_t r = start; r < rows.size(); ++r) {
    if (rows[r].size() < 2) throw DataError("sliding profile rows need l and W_sep");
    p.push_back({csv_number(rows[r][0], "l"), csv_number(rows[r][1], "w_sep")});
  }
  const auto t = sliding_traction(p);
  if (!a.traction_out.empty()) {
    std::string text = csv_line({"l_a", "w_sep_j_per_m2", "traction_j_per_m2_per_a"});
    for (std::size_t k = 0; k < p.size(); ++k)
      text += csv_line({format_number(p[k].l), format_number(p[k].w_sep), format_number(t.traction[k])});
    write_text_file(a.traction_out, text);
    ss.manifest.outputs["traction"] = a.traction_out;
  }
  ss.out << csv_line({"n_samples", "tau_max_j_per_m2_per_a"});
  ss.out << csv_line({std::to_string(p.size()), format_number(t.tau_max)});
  ss.finish("mamforge-analyze.manifest.json");
  return 0;
}

struct DistortionArgs {
  std::string structure;
  std::size_t frame = 0;
  std::size_t center = 0;
  std::vector<std::size_t> ligands;
};

inline int run_distortion(Session& ss, const DistortionArgs& a) {
  ss.manifest.subcommand = "analyze distortion";
  if (a.ligands.size() != 6) throw UsageError("analyze distortion needs exactly 6 --ligands indices");
  const auto s = pick_frame(a.structure, a.frame);
  ss.manifest.add_input(a.structure);
  std::array<std::size_t, 6> lig{};
  std::copy(a.ligands.begin(), a.ligands.end(), lig.begin());
  const auto d = octahedral_distortion(s, a.center, lig);
  ss.out << csv_line({"angle_variance_deg2", "quadratic_elongation", "off_center_a"});
  ss.out << csv_line({format_number(d.angle_variance), format_number(d.quadratic_elongation), format_number(d.off_center)});
  ss.finish("mamforge-analyze.manifest.json");
  return 0;
}

// cycle ------------------------------------------------------------------------

inline const std::set<std::string> kCycleKeys{
    "cycle.intercalant", "cycle.axis", "cycle.region_min", "cycle.region_max", "cycle.stress_region_min",
    "cycle.stress_region_max", "cycle.atoms_per_step", "cycle.bias", "cycle.bias_direction", "cycle.bias_steps",
    "cycle.x_max", "cycle.exclusion", "cycle.max_attempts", "cycle.seed", "cycle.schedule", "relax.max_steps",
    "relax.fmax", "relax.step_cap"};

inline int parse_axis(const std::string& s) {
  if (s == "x" || s == "0") return 0;
  if (s == "y" || s == "1") return 1;
  if (s == "z" || s == "2") return 2;
  throw ConfigError("axis must be x, y or z");
}

inline std::vector<ScheduleEntry> parse_schedule(const std::string& text) {
  std::vector<ScheduleEntry> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = xyz_detail::trim(item);
    const auto colon = item.find(':');
    const std::string mode = xyz_detail::trim(item.substr(0, colon));
    ScheduleEntry e;
    if (mode == "charge") e.mode = CycleMode::Charge;
    else if (mode == "discharge") e.mode = CycleMode::Discharge;
    else throw ConfigError("schedule entries look like charge:N or discharge:N");
    if (colon != std::string::npos) {
      const std::string n = xyz_detail::trim(item.substr(colon + 1));
      std::size_t pos = 0;
      try {
        e.steps = std::stoi(n, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != n.size()) throw ConfigError("bad step count in schedule entry '" + item + "'");
    }
    out.push_back(e);
  }
  return out;
}

inline CycleConfig cycle_config(Config& c) {
  CycleConfig cfg;
  cfg.intercalant = atomic_number(c.get_string("cycle.intercalant", "Li"));
  const int axis = parse_axis(c.get_string("cycle.axis", "z"));
  if (!c.has("cycle.region_min") || !c.has("cycle.region_max"))
    throw ConfigError("cycle.region_min and cycle.region_max are required");
  cfg.region = Region(axis, c.get_double("cycle.region_min", 0.0), c.get_double("cycle.region_max", 0.0));
  if (c.has("cycle.stress_region_min") != c.has("cycle.stress_region_max"))
    throw ConfigError("set both cycle.stress_region_min and cycle.stress_region_max");
  if (c.has("cycle.stress_region_min"))
    cfg.stress_region = Region(axis, c.get_double("cycle.stress_region_min", 0.0), c.get_double("cycle.stress_region_max", 0.0));
  cfg.atoms_per_step = static_cast<int>(c.get_int("cycle.atoms_per_step", cfg.atoms_per_step));
  cfg.bias = c.get_double("cycle.bias", cfg.bias);
  if (c.has("cycle.bias_direction")) {
    const auto parts = xyz_detail::split_ws(c.get_string("cycle.bias_direction", ""));
    if (parts.size() != 3) throw ConfigError("cycle.bias_direction expects three numbers");
    Vec3 d;
    for (int k = 0; k < 3; ++k) {
      try {
        d[k] = xyz_detail::to_double(parts[static_cast<std::size_t>(k)], "bias direction");
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    }
    cfg.bias_direction = d;
  }
  cfg.bias_steps = static_cast<int>(c.get_int("cycle.bias_steps", cfg.bias_steps));
  cfg.x_max = c.get_double("cycle.x_max", cfg.x_max);
  cfg.exclusion = c.get_double("cycle.exclusion", cfg.exclusion);
  cfg.max_attempts = static_cast<int>(c.get_int("cycle.max_attempts", cfg.max_attempts));
  cfg.seed = c.get_seed("cycle.seed", cfg.seed);
  cfg.relax.max_steps = static_cast<int>(c.get_int("relax.max_steps", cfg.relax.max_steps));
  cfg.relax.force_tolerance = c.get_double("relax.fmax", cfg.relax.force_tolerance);
  cfg.relax.step_cap = c.get_double("relax.step_cap", cfg.relax.step_cap);
  validate(cfg);
  return cfg;
}

struct CycleArgs {
  std::string structure, model, trace_out, frames_out;
};

inline int run_cycle_cmd(Session& ss, const CycleArgs& a) {
  ss.manifest.subcommand = "cycle";
  ss.load_config();
  ss.config.check_known([] {
    auto k = kCycleKeys;
    k.insert(kLjKeys.begin(), kLjKeys.end());
    return k;
  }(), {"model."});
  auto cfg = cycle_config(ss.config);
  if (!ss.config.has("cycle.schedule")) throw ConfigError("cycle.schedule is required, e.g. charge:3,discharge:3");
  const auto schedule = parse_schedule(ss.config.get_string("cycle.schedule", ""));
  ss.manifest.seed = cfg.seed;
  const auto s = pick_frame(a.structure, 0);
  ss.manifest.add_input(a.structure);
  const auto calc = make_calculator(a.model, ss);
  ss.manifest.outputs["trace"] = a.trace_out;
  std::ofstream trace_file(a.trace_out, std::ios::binary);
  if (!trace_file) throw DataError("cannot write '" + a.trace_out + "'");
  CyclingTrace trace;
  try {
    trace = run_cycle(s, *calc, cfg, schedule, &trace_file);
  } catch (const Error& e) {
    ss.manifest.status = std::string("failed: ") + category_name(e.kind());
    ss.finish(a.trace_out + ".manifest.json");
    throw;
  }
  if (!a.frames_out.empty()) {
    std::vector<Frame> frames;
    for (const auto& f : trace.frames) frames.push_back({f.structure, {}, {}, {}});
    write_text_file(a.frames_out, format_frames(frames));
    ss.manifest.outputs["frames"] = a.frames_out;
  }
  ss.manifest.status = trace.stop_reason;
  ss.out << csv_line({"steps", "stop_reason"}) << csv_line({std::to_string(trace.records.size()), trace.stop_reason});
  ss.finish(a.trace_out + ".manifest.json");
  return 0;
}

inline int run_selftest(Session& ss) {
  ss.manifest.subcommand = "selftest";
  const bool ok = selftest::run_all(ss.out);
  ss.manifest.status = ok ? "pass" : "fail";
  ss.finish("mamforge-selftest.manifest.json");
  ss.out << (ok ? "selftest: all criteria passed\n" : "selftest: FAILED\n");
  return ok ? 0 : 1;
}

// dispatch -------------------------------------------------------------------

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Neural-network interatomic potentials with charge equilibration, stress and electro-chemo-mechanics analysis", "mamforge"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Session ss{out, err, {}, {}, {}, {}, {}};
  auto common = [&](CLI::App* sub, bool with_config) {
    sub->add_option("--manifest", ss.manifest_path, "where to write the run manifest (JSON)");
    if (with_config) {
      sub->add_option("--config", ss.config_path, "flat key=value config file")->check(CLI::ExistingFile);
      sub->add_option("--set", ss.overrides, "override a config key (key=value); repeatable");
    }
  };
  std::function<int()> action;

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "fit a model to an extended-XYZ dataset");
  train_cmd->add_option("--data", ta.data, "training frames (extended XYZ)")->required();
  train_cmd->add_option("--model-out", ta.model_out, "model file to write")->required();
  train_cmd->add_option("--history-out", ta.history_out, "per-epoch RMSE CSV (default <model-out>.history.csv)");
  common(train_cmd, true);
  train_cmd->callback([&] { action = [&] { return run_train(ss, ta); }; });

  EvaluateArgs ea;
  auto* eval_cmd = app.add_subcommand("evaluate", "error metrics and parity tables of a model on a dataset");
  eval_cmd->add_option("--data", ea.data)->required();
  eval_cmd->add_option("--model", ea.model)->required();
  eval_cmd->add_option("--metrics-out", ea.metrics_out, "metrics CSV (default stdout)");
  eval_cmd->add_option("--parity-prefix", ea.parity_prefix, "write <prefix>energy.csv, force.csv, charge.csv");
  common(eval_cmd, false);
  eval_cmd->callback([&] { action = [&] { return run_evaluate(ss, ea); }; });

  PredictArgs pa;
  auto* pred_cmd = app.add_subcommand("predict", "energies, forces, charges and stress for structures");
  pred_cmd->add_option("--structure", pa.structure)->required();
  pred_cmd->add_option("--model", pa.model, "model file or oracle:lj")->required();
  pred_cmd->add_option("--out", pa.out, "annotated extended XYZ");
  pred_cmd->add_option("--summary", pa.summary, "summary CSV (default stdout)");
  common(pred_cmd, true);
  pred_cmd->callback([&] { action = [&] { return run_predict(ss, pa); }; });

  auto* analyze = app.add_subcommand("analyze", "closed-form electro-chemo-mechanics analyzers");
  analyze->require_subcommand(1);
  std::map<std::string, std::map<std::string, std::optional<double>>> scalar_flags;
  std::string batch;
  for (const auto& an : scalar_analyzers()) {
    auto* sub = analyze->add_subcommand(an.name, an.help);
    auto& flags = scalar_flags[an.name];
    for (const auto& f : an.fields) sub->add_option("--" + f, flags[f]);
    sub->add_option("--batch", batch, "CSV whose header names the fields; one output row per input row");
    common(sub, false);
    sub->callback([&, name = an.name] {
      action = [&, name] {
        for (const auto& x : scalar_analyzers())
          if (x.name == name) return run_scalar(ss, x, scalar_flags[name], batch);
        return 64;
      };
    });
  }
  ModuliArgs ma;
  auto* moduli = analyze->add_subcommand("moduli", "Voigt bulk, shear and Young's moduli from a stiffness tensor");
  moduli->add_option("--tensor", ma.tensor_file, "CSV with 6 rows of 6 C_ij in GPa");
  moduli->add_option("--cubic", ma.cubic, "C11,C12,C44 of a cubic crystal (GPa)")->delimiter(',')->expected(3);
  common(moduli, false);
  moduli->callback([&] { action = [&] { return run_moduli(ss, ma); }; });

  ElasticArgs ela;
  auto* elastic = analyze->add_subcommand("elastic", "stiffness tensor from stress under small strains");
  elastic->add_option("--structure", ela.structure)->required();
  elastic->add_option("--frame", ela.frame);
  elastic->add_option("--model", ela.model, "model file or oracle:lj")->required();
  elastic->add_option("--delta", ela.delta, "strain amplitude in [1e-4, 1e-2]");
  common(elastic, true);
  elastic->callback([&] { action = [&] { return run_elastic(ss, ela); }; });

  SlidingArgs sa;
  auto* sliding = analyze->add_subcommand("sliding", "interface traction along a sliding path");
  sliding->add_option("--profile", sa.profile, "CSV of l (A), W_sep (J/m^2)")->required();
  sliding->add_option("--traction-out", sa.traction_out, "per-sample traction CSV");
  common(sliding, false);
  sliding->callback([&] { action = [&] { return run_sliding(ss, sa); }; });

  DistortionArgs da;
  auto* dist = analyze->add_subcommand("distortion", "octahedral distortion measures");
  dist->add_option("--structure", da.structure)->required();
  dist->add_option("--frame", da.frame);
  dist->add_option("--center", da.center, "center atom index (0-based)")->required();
  dist->add_option("--ligands", da.ligands, "six ligand indices (0-based)")->delimiter(',')->required();
  common(dist, false);
  dist->callback([&] { action = [&] { return run_distortion(ss, da); }; });

  CycleArgs ca;
  auto* cycle = app.add_subcommand("cycle", "charge/discharge protocol with stress traces");
  cycle->add_option("--structure", ca.structure)->required();
  cycle->add_option("--model", ca.model, "model file or oracle:lj")->required();
  cycle->add_option("--trace-out", ca.trace_out, "trace CSV")->required();
  cycle->add_option("--frames-out", ca.frames_out, "structure after every step (extended XYZ)");
  common(cycle, true);
  cycle->callback([&] { action = [&] { return run_cycle_cmd(ss, ca); }; });

  auto* self = app.add_subcommand("selftest", "run the numbered acceptance checks");
  common(self, false);
  self->callback([&] { action = [&] { return run_selftest(ss); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "mamforge: error[usage]: " << e.what() << "\n\n" << app.help();
    return exit_code(ErrorKind::Usage);
  }

  try {
    if (!action) throw UsageError("no subcommand given");
    return action();
  } catch (const Error& e) {
    err << "mamforge: error[" << category_name(e.kind()) << "]: " << e.what() << '\n';
    if (e.kind() == ErrorKind::Usage) err << '\n' << app.help();
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "mamforge: error[config]: " << e.what() << '\n';
    return exit_code(ErrorKind::Config);
  } catch (const std::exception& e) {
    err << "mamforge: error[numerical]: " << e.what() << '\n';
    return exit_code(ErrorKind::Numerical);
  }
}

}  // namespace mamforge::cli
