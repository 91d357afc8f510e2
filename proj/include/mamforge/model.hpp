#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mamforge/acsf.hpp"
#include "mamforge/network.hpp"

namespace mamforge {

inline constexpr int kModelFormatVersion = 1;
inline constexpr double kDefaultHardness = 10.0;        // eV/e²
inline constexpr double kDefaultPeriodicElecCutoff = 15.0;  // Å

struct ElementParams {
  double alpha;     // Gaussian charge width (Å)
  double hardness;  // J (eV/e²)
};

inline ElementParams default_element_params(int z) {
  return {element(z).covalent_radius, kDefaultHardness};
}

/// Per-feature affine input normalization x' = (x - mean) / scale.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer identity(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }
  std::size_t size() const { return mean.size(); }
};

/// Shared atomic network model. The energy network maps [G_i, (Q_i)] to the
/// atomic energy E_i (eV); the electronegativity network maps G_i to χ_i (V).
/// Both networks are the same for every species; species enter through the
/// scaled atomic-number feature.
struct PotentialModel {
  AcsfParams acsf;
  std::vector<std::size_t> hidden{24, 24};
  Mlp energy_net;
  Mlp chi_net;
  Standardizer energy_input;
  Standardizer chi_input;
  std::map<int, ElementParams> elements;
  bool use_electrostatics = false;
  bool use_charge_input = false;
  double periodic_elec_cutoff = kDefaultPeriodicElecCutoff;
  std::uint64_t seed = 0;

  std::size_t num_descriptor_features() const { return acsf.num_features(); }
  std::size_t num_params() const { return energy_net.num_params() + chi_net.num_params(); }

  bool supports(int z) const { return elements.count(z) > 0; }
  const ElementParams& element_params(int z) const {
    auto it = elements.find(z);
    if (it == elements.end())
      throw DataError("model has no parameters for element " + std::string(element(z).symbol));
    return it->second;
  }
};

inline void validate(const PotentialModel& m) {
  validate(m.acsf);
  const std::size_t nf = m.num_descriptor_features();
  if (m.energy_net.empty()) throw ConfigError("model has no energy network");
  if (m.use_charge_input && !m.use_electrostatics)
    throw ConfigError("charge input requires electrostatics");
  if (m.energy_net.num_inputs() != nf + (m.use_charge_input ? 1 : 0))
    throw ConfigError("energy network input width does not match descriptors");
  if (m.use_electrostatics && (m.chi_net.empty() || m.chi_net.num_inputs() != nf))
    throw ConfigError("electronegativity network input width does not match descriptors");
  if (m.energy_input.size() != m.energy_net.num_inputs() ||
      (m.use_electrostatics && m.chi_input.size() != m.chi_net.num_inputs()))
    throw ConfigError("standardization vectors do not match network inputs");
  for (const auto* s : {&m.energy_input, &m.chi_input})
    for (double v : s->scale)
      if (!(v > 0.0)) throw ConfigError("standardization scales must be positive");
  for (const auto& [z, e] : m.elements)
    if (!(e.alpha > 0.0) || !(e.hardness > 0.0))
      throw ConfigError("element alpha and hardness must be positive");
  for (const auto* net : {&m.energy_net, &m.chi_net})
    for (double w : net->params())
      if (!std::isfinite(w)) throw ConfigError("non-finite network weight");
  if (m.elements.empty()) throw ConfigError("model supports no elements");
}

struct ModelOptions {
  AcsfParams acsf = default_acsf();
  std::vector<std::size_t> hidden{24, 24};
  bool use_electrostatics = false;
  std::optional<bool> use_charge_input;  // defaults to use_electrostatics
  double periodic_elec_cutoff = kDefaultPeriodicElecCutoff;
  std::uint64_t seed = 1;
};

/// Freshly initialized model for the given element set.
inline PotentialModel make_model(const ModelOptions& opt, const std::set<int>& species) {
  PotentialModel m;
  m.acsf = opt.acsf;
  m.hidden = opt.hidden;
  m.use_electrostatics = opt.use_electrostatics;
  m.use_charge_input = opt.use_charge_input.value_or(opt.use_electrostatics);
  m.periodic_elec_cutoff = opt.periodic_elec_cutoff;
  m.seed = opt.seed;
  const std::size_t nf = m.acsf.num_features();
  m.energy_net = Mlp(nf + (m.use_charge_input ? 1 : 0), m.hidden);
  m.energy_net.initialize(opt.seed);
  m.energy_input = Standardizer::identity(m.energy_net.num_inputs());
  if (m.use_electrostatics) {
    m.chi_net = Mlp(nf, m.hidden);
    m.chi_net.initialize(opt.seed ^ 0x9E3779B97F4A7C15ULL);
    m.chi_input = Standardizer::identity(nf);
  }
  for (int z : species) m.elements[z] = default_element_params(z);
  validate(m);
  return m;
}

namespace model_detail {

using nlohmann::json;

inline json net_to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t in = net.widths()[l], out = net.widths()[l + 1];
    auto p = net.params();
    std::vector<double> w(p.begin() + static_cast<std::ptrdiff_t>(net.weight_offset(l)),
                          p.begin() + static_cast<std::ptrdiff_t>(net.weight_offset(l) + in * out));
    std::vector<double> b(p.begin() + static_cast<std::ptrdiff_t>(net.bias_offset(l)),
                          p.begin() + static_cast<std::ptrdiff_t>(net.bias_offset(l) + out));
    layers.push_back({{"rows", out}, {"cols", in}, {"weights", w}, {"biases", b}});
  }
  return {{"layers", layers}};
}

inline Mlp net_from_json(const json& j, const std::vector<std::size_t>& hidden) {
  const auto& layers = j.at("layers");
  if (layers.empty()) throw ConfigError("network has no layers");
  Mlp net(layers.at(0).at("cols").get<std::size_t>(), hidden);
  if (layers.size() != net.num_layers()) throw ConfigError("network layer count mismatch");
  auto p = net.params();
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& L = layers[l];
    const std::size_t in = net.widths()[l], out = net.widths()[l + 1];
    const auto w = L.at("weights").get<std::vector<double>>();
    const auto b = L.at("biases").get<std::vector<double>>();
    if (L.at("rows").get<std::size_t>() != out || L.at("cols").get<std::size_t>() != in || w.size() != in * out ||
        b.size() != out)
      throw ConfigError("network layer shape mismatch");
    std::copy(w.begin(), w.end(), p.begin() + static_cast<std::ptrdiff_t>(net.weight_offset(l)));
    std::copy(b.begin(), b.end(), p.begin() + static_cast<std::ptrdiff_t>(net.bias_offset(l)));
  }
  return net;
}

}  // namespace model_detail

inline nlohmann::json to_json(const PotentialModel& m) {
  using nlohmann::json;
  using namespace model_detail;
  json radial = json::array(), angular = json::array();
  for (const auto& f : m.acsf.radial) radial.push_back({{"eta", f.eta}, {"rs", f.rs}});
  for (const auto& f : m.acsf.angular) angular.push_back({{"eta", f.eta}, {"zeta", f.zeta}, {"lambda", f.lambda}});
  json elements = json::object();
  for (const auto& [z, e] : m.elements)
    elements[std::string(element(z).symbol)] = {{"z", z}, {"alpha", e.alpha}, {"hardness", e.hardness}};
  json j;
  j["format_version"] = kModelFormatVersion;
  j["seed"] = m.seed;
  j["acsf"] = {{"cutoff", m.acsf.cutoff},
               {"element_resolved", m.acsf.element_resolved},
               {"radial", radial},
               {"angular", angular}};
  j["network"] = {{"hidden", m.hidden}, {"activation", "tanh"}};
  j["energy_net"] = net_to_json(m.energy_net);
  j["chi_net"] = m.chi_net.empty() ? json(nullptr) : net_to_json(m.chi_net);
  j["standardization"] = {{"energy", {{"mean", m.energy_input.mean}, {"scale", m.energy_input.scale}}},
                          {"chi", {{"mean", m.chi_input.mean}, {"scale", m.chi_input.scale}}}};
  j["elements"] = elements;
  j["flags"] = {{"use_electrostatics", m.use_electrostatics}, {"use_charge_input", m.use_charge_input}};
  j["electrostatics"] = {{"periodic_cutoff", m.periodic_elec_cutoff}};
  return j;
}

inline PotentialModel model_from_json(const nlohmann::json& j) {
  using namespace model_detail;
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion)
      throw ConfigError("unsupported model format_version");
    PotentialModel m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& a = j.at("acsf");
    m.acsf.cutoff = a.at("cutoff").get<double>();
    m.acsf.element_resolved = a.at("element_resolved").get<bool>();
    for (const auto& f : a.at("radial")) m.acsf.radial.push_back({f.at("eta").get<double>(), f.at("rs").get<double>()});
    for (const auto& f : a.at("angular"))
      m.acsf.angular.push_back({f.at("eta").get<double>(), f.at("zeta").get<double>(), f.at("lambda").get<double>()});
    const auto& net = j.at("network");
    if (net.at("activation").get<std::string>() != "tanh") throw ConfigError("unsupported activation");
    m.hidden = net.at("hidden").get<std::vector<std::size_t>>();
    m.energy_net = net_from_json(j.at("energy_net"), m.hidden);
    if (!j.at("chi_net").is_null()) m.chi_net = net_from_json(j.at("chi_net"), m.hidden);
    const auto& st = j.at("standardization");
    m.energy_input = {st.at("energy").at("mean").get<std::vector<double>>(),
                      st.at("energy").at("scale").get<std::vector<double>>()};
    m.chi_input = {st.at("chi").at("mean").get<std::vector<double>>(),
                   st.at("chi").at("scale").get<std::vector<double>>()};
    for (const auto& [sym, e] : j.at("elements").items()) {
      const int z = e.at("z").get<int>();
      if (atomic_number(sym) != z) throw ConfigError("element table symbol/Z mismatch for " + sym);
      m.elements[z] = {e.at("alpha").get<double>(), e.at("hardness").get<double>()};
    }
    m.use_electrostatics = j.at("flags").at("use_electrostatics").get<bool>();
    m.use_charge_input = j.at("flags").at("use_charge_input").get<bool>();
    m.periodic_elec_cutoff = j.at("electrostatics").at("periodic_cutoff").get<double>();
    validate(m);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model file: ") + e.what());
  }
}

inline std::string serialize_model(const PotentialModel& m) { return to_json(m).dump(1) + "\n"; }

inline PotentialModel parse_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const PotentialModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  out << serialize_model(m);
}

inline PotentialModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace mamforge
