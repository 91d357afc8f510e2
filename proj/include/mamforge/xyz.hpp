#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mamforge/format.hpp"
#include "mamforge/structure.hpp"

namespace mamforge {

/// One extended-XYZ record: a structure plus the optional per-frame labels.
struct Frame {
  Structure structure;
  std::optional<double> energy;
  std::optional<std::vector<Vec3>> forces;
  std::optional<std::vector<double>> charges;
};

namespace xyz_detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

/// Splits the comment line into key=value pairs; values may be double-quoted.
inline std::map<std::string, std::string> parse_header(std::string_view line) {
  std::map<std::string, std::string> kv;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    std::size_t k0 = i;
    while (i < line.size() && line[i] != '=' && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::string key = lower(line.substr(k0, i - k0));
    if (i >= line.size() || line[i] != '=') {
      kv[key] = "T";  // bare flag
      continue;
    }
    ++i;
    std::string value;
    if (i < line.size() && line[i] == '"') {
      std::size_t end = line.find('"', i + 1);
      if (end == std::string_view::npos) throw DataError("unterminated quote in extended-XYZ header");
      value = std::string(line.substr(i + 1, end - i - 1));
      i = end + 1;
    } else {
      std::size_t v0 = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      value = std::string(line.substr(v0, i - v0));
    }
    kv[key] = value;
  }
  return kv;
}

inline double to_double(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("malformed number for ") + what + ": '" + s + "'");
  }
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

inline bool parse_flag(const std::string& t) {
  const std::string l = lower(t);
  if (l == "t" || l == "true" || l == "1") return true;
  if (l == "f" || l == "false" || l == "0") return false;
  throw DataError("malformed pbc flag '" + t + "'");
}

struct Column {
  std::string name;
  char type;
  int count;
};

inline std::vector<Column> parse_properties(const std::string& spec) {
  std::vector<Column> cols;
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  if (parts.size() % 3 != 0) throw DataError("malformed Properties '" + spec + "'");
  for (std::size_t i = 0; i < parts.size(); i += 3) {
    Column c{lower(parts[i]), parts[i + 1].empty() ? '?' : static_cast<char>(std::toupper(parts[i + 1][0])), 0};
    try {
      c.count = std::stoi(parts[i + 2]);
    } catch (const std::exception&) {
      throw DataError("malformed Properties count in '" + spec + "'");
    }
    if (c.count < 1) throw DataError("malformed Properties count in '" + spec + "'");
    cols.push_back(c);
  }
  return cols;
}

}  // namespace xyz_detail

/// Parses one frame starting at `lines[pos]`; advances pos past the frame.
inline Frame parse_frame_lines(const std::vector<std::string>& lines, std::size_t& pos) {
  using namespace xyz_detail;
  if (pos >= lines.size()) throw DataError("missing atom-count line");
  const std::string count_line = trim(lines[pos]);
  long long n = 0;
  try {
    std::size_t used = 0;
    n = std::stoll(count_line, &used);
    if (used != count_line.size()) throw std::invalid_argument(count_line);
  } catch (const std::exception&) {
    throw DataError("malformed header: atom count line '" + count_line + "'");
  }
  if (n < 1) throw DataError("malformed header: atom count must be positive");
  if (pos + 1 >= lines.size()) throw DataError("malformed header: missing comment line");
  const auto kv = parse_header(lines[pos + 1]);
  if (pos + 2 + static_cast<std::size_t>(n) > lines.size())
    throw DataError("count mismatch: header declares " + std::to_string(n) + " atoms");

  Frame frame;
  Structure& s = frame.structure;
  const bool has_lattice = kv.count("lattice") > 0;
  if (has_lattice) {
    const auto v = split_ws(kv.at("lattice"));
    if (v.size() != 9) throw DataError("malformed header: Lattice needs 9 numbers");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s.cell(r, c) = to_double(v[3 * r + c], "Lattice");
  }
  if (kv.count("pbc")) {
    const auto v = split_ws(kv.at("pbc"));
    if (v.size() != 3) throw DataError("malformed header: pbc needs 3 flags");
    for (int a = 0; a < 3; ++a) s.periodic[a] = parse_flag(v[a]);
  } else {
    s.periodic = {has_lattice, has_lattice, has_lattice};
  }
  if (s.any_periodic() && !has_lattice)
    throw DataError("malformed header: periodic frame without Lattice");
  if (s.any_periodic() && cell_is_singular(s.cell)) throw DataError("singular cell with periodic flag set");
  if (kv.count("energy")) frame.energy = to_double(kv.at("energy"), "energy");
  if (kv.count("total_charge")) s.total_charge = to_double(kv.at("total_charge"), "total_charge");

  const auto columns = parse_properties(kv.count("properties") ? kv.at("properties") : "species:S:1:pos:R:3");
  int width = 0;
  bool have_species = false, have_pos = false;
  for (const auto& c : columns) {
    width += c.count;
    have_species |= c.name == "species";
    have_pos |= c.name == "pos";
  }
  if (!have_species || !have_pos) throw DataError("malformed header: Properties lacks species or pos");

  const auto un = static_cast<std::size_t>(n);
  s.positions.resize(un);
  s.species.resize(un);
  s.masses.resize(un);
  bool have_masses = false;
  for (std::size_t i = 0; i < un; ++i) {
    const auto tok = split_ws(lines[pos + 2 + i]);
    if (static_cast<int>(tok.size()) != width)
      throw DataError("count mismatch: atom line " + std::to_string(i + 1) + " has " +
                      std::to_string(tok.size()) + " columns, expected " + std::to_string(width));
    std::size_t t = 0;
    for (const auto& c : columns) {
      auto vec3 = [&](const char* what) {
        if (c.count != 3) throw DataError(std::string("malformed Properties: ") + what + " needs 3 columns");
        return Vec3(to_double(tok[t], what), to_double(tok[t + 1], what), to_double(tok[t + 2], what));
      };
      if (c.name == "species") {
        s.species[i] = atomic_number(tok[t]);
      } else if (c.name == "pos") {
        s.positions[i] = vec3("pos");
      } else if (c.name == "vel" || c.name == "velocities") {
        if (!s.velocities) s.velocities.emplace(un, Vec3::Zero());
        (*s.velocities)[i] = vec3("vel");
      } else if (c.name == "forces" || c.name == "force") {
        if (!frame.forces) frame.forces.emplace(un, Vec3::Zero());
        (*frame.forces)[i] = vec3("forces");
      } else if (c.name == "charge" || c.name == "charges") {
        if (!frame.charges) frame.charges.emplace(un, 0.0);
        (*frame.charges)[i] = to_double(tok[t], "charge");
      } else if (c.name == "masses" || c.name == "mass") {
        have_masses = true;
        s.masses[i] = to_double(tok[t], "masses");
      }
      t += static_cast<std::size_t>(c.count);
    }
    if (!have_masses) s.masses[i] = element(s.species[i]).mass;
  }
  validate(s);
  pos += 2 + un;
  return frame;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string line(text.substr(start, end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

/// Splits a multi-frame extended-XYZ document into frames.
inline std::vector<Frame> parse_frames(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<Frame> frames;
  std::size_t pos = 0;
  while (true) {
    while (pos < lines.size() && xyz_detail::trim(lines[pos]).empty()) ++pos;
    if (pos >= lines.size()) break;
    frames.push_back(parse_frame_lines(lines, pos));
  }
  if (frames.empty()) throw DataError("no frames in extended-XYZ input");
  return frames;
}

/// Parses a single extended-XYZ record.
inline Structure parse_structure(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t pos = 0;
  while (pos < lines.size() && xyz_detail::trim(lines[pos]).empty()) ++pos;
  return parse_frame_lines(lines, pos).structure;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<Frame> read_xyz_file(const std::string& path) {
  return parse_frames(read_text_file(path));
}

/// Writes one frame; numbers use the shortest exact round-trip form.
inline void write_frame(std::ostream& out, const Frame& frame) {
  const Structure& s = frame.structure;
  out << s.size() << '\n';
  std::string props = "species:S:1:pos:R:3";
  if (s.velocities) props += ":vel:R:3";
  if (frame.forces) props += ":forces:R:3";
  if (frame.charges) props += ":charge:R:1";
  bool standard_masses = true;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.masses[i] != element(s.species[i]).mass) standard_masses = false;
  if (!standard_masses) props += ":masses:R:1";

  if (!cell_is_singular(s.cell) || s.any_periodic()) {
    out << "Lattice=\"";
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out << (r || c ? " " : "") << format_number(s.cell(r, c));
    out << "\" ";
  }
  out << "Properties=" << props << " pbc=\"" << (s.periodic[0] ? 'T' : 'F') << ' '
      << (s.periodic[1] ? 'T' : 'F') << ' ' << (s.periodic[2] ? 'T' : 'F') << '"';
  if (frame.energy) out << " energy=" << format_number(*frame.energy);
  if (s.total_charge != 0.0) out << " total_charge=" << format_number(s.total_charge);
  out << '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << element(s.species[i]).symbol;
    auto put = [&](const Vec3& v) { out << ' ' << format_number(v[0]) << ' ' << format_number(v[1]) << ' ' << format_number(v[2]); };
    put(s.positions[i]);
    if (s.velocities) put((*s.velocities)[i]);
    if (frame.forces) put((*frame.forces)[i]);
    if (frame.charges) out << ' ' << format_number((*frame.charges)[i]);
    if (!standard_masses) out << ' ' << format_number(s.masses[i]);
    out << '\n';
  }
}

inline std::string format_frames(const std::vector<Frame>& frames) {
  std::ostringstream out;
  for (const auto& f : frames) write_frame(out, f);
  return out.str();
}

inline std::string format_structure(const Structure& s) {
  return format_frames({Frame{s, {}, {}, {}}});
}

}  // namespace mamforge
