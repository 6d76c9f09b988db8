// Point-cloud file ingestion (ascii XYZ / OFF / PLY, positions only) and
// the CSV emitters. Doubles are printed with 17 significant digits so a
// write-read cycle reproduces values exactly.
#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dipv/geometry.hpp"
#include "dipv/spectrum.hpp"

namespace dipv {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline bool parse_double(const std::string& tok, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(tok, &used);
    return used == tok.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> toks;
  std::istringstream ss(line);
  std::string t;
  while (ss >> t) toks.push_back(t);
  return toks;
}

inline bool skippable(const std::string& line) {
  for (char ch : line)
    if (!std::isspace(static_cast<unsigned char>(ch))) return ch == '#';
  return true;
}

[[noreturn]] inline void fail_line(const std::string& path, std::size_t line_no,
                                   const std::string& msg) {
  throw IoError(path + ":" + std::to_string(line_no) + ": " + msg);
}

}  // namespace detail

// One "x y z" triple per line; extra trailing fields are tolerated,
// comment lines start with '#'.
inline PointCloud read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  PointCloud cloud;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::skippable(line)) continue;
    const auto toks = detail::split_ws(line);
    if (toks.size() < 3) detail::fail_line(path, line_no, "expected at least 3 fields");
    Vec3 p;
    for (int i = 0; i < 3; ++i)
      if (!detail::parse_double(toks[i], p[i]))
        detail::fail_line(path, line_no, "field " + std::to_string(i + 1) + " is not a finite number");
    cloud.points.push_back(p);
  }
  if (cloud.points.empty()) throw IoError(path + ": no points found");
  return cloud;
}

inline void write_xyz(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const Vec3& p : cloud.points)
    out << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << '\n';
}

// OFF with the counts on the line after the keyword (or inline after it);
// faces are ignored.
inline PointCloud read_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;

  auto next_content = [&](std::string& out_line) -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!detail::skippable(line)) {
        out_line = line;
        return true;
      }
    }
    return false;
  };

  std::string header;
  if (!next_content(header)) throw IoError(path + ": empty file");
  auto toks = detail::split_ws(header);
  if (toks.empty() || toks[0] != "OFF") detail::fail_line(path, line_no, "missing OFF header");
  std::vector<std::string> counts(toks.begin() + 1, toks.end());
  if (counts.empty()) {
    std::string count_line;
    if (!next_content(count_line)) detail::fail_line(path, line_no, "missing count line");
    counts = detail::split_ws(count_line);
  }
  if (counts.size() < 2) detail::fail_line(path, line_no, "expected vertex and face counts");
  double nv_d = 0;
  if (!detail::parse_double(counts[0], nv_d) || nv_d < 1)
    detail::fail_line(path, line_no, "bad vertex count");
  const std::size_t nv = static_cast<std::size_t>(nv_d);

  PointCloud cloud;
  cloud.points.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    std::string vline;
    if (!next_content(vline)) detail::fail_line(path, line_no, "unexpected end of vertex list");
    const auto vt = detail::split_ws(vline);
    if (vt.size() < 3) detail::fail_line(path, line_no, "vertex needs 3 coordinates");
    Vec3 p;
    for (int c = 0; c < 3; ++c)
      if (!detail::parse_double(vt[c], p[c]))
        detail::fail_line(path, line_no, "vertex coordinate is not a finite number");
    cloud.points.push_back(p);
  }
  return cloud;
}

// ascii PLY; reads the x/y/z properties of the vertex element and skips
// everything else (faces, colors, normals).
inline PointCloud read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;

  auto getline_checked = [&](const std::string& what) {
    if (!std::getline(in, line)) throw IoError(path + ": unexpected end of file (" + what + ")");
    ++line_no;
  };

  getline_checked("magic");
  if (detail::split_ws(line) != std::vector<std::string>{"ply"})
    detail::fail_line(path, line_no, "not a PLY file");

  std::size_t vertex_count = 0;
  std::vector<std::string> vertex_props;
  bool in_vertex_element = false;
  bool ascii = false;
  while (true) {
    getline_checked("header");
    auto toks = detail::split_ws(line);
    if (toks.empty()) continue;
    if (toks[0] == "comment") continue;
    if (toks[0] == "format") {
      if (toks.size() < 2 || toks[1] != "ascii")
        detail::fail_line(path, line_no, "only ascii PLY is supported");
      ascii = true;
    } else if (toks[0] == "element") {
      in_vertex_element = toks.size() >= 3 && toks[1] == "vertex";
      if (in_vertex_element) {
        double n = 0;
        if (!detail::parse_double(toks[2], n) || n < 1)
          detail::fail_line(path, line_no, "bad vertex count");
        vertex_count = static_cast<std::size_t>(n);
      }
    } else if (toks[0] == "property" && in_vertex_element) {
      if (toks.size() >= 2 && toks[1] == "list")
        detail::fail_line(path, line_no, "list property not allowed on vertices");
      vertex_props.push_back(toks.back());
    } else if (toks[0] == "end_header") {
      break;
    }
  }
  if (!ascii) detail::fail_line(path, line_no, "missing format line");
  if (vertex_count == 0) detail::fail_line(path, line_no, "no vertex element");

  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex_props.size(); ++i) {
    if (vertex_props[i] == "x") ix = static_cast<int>(i);
    if (vertex_props[i] == "y") iy = static_cast<int>(i);
    if (vertex_props[i] == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw IoError(path + ": vertex element lacks x/y/z properties");

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    getline_checked("vertex data");
    const auto toks = detail::split_ws(line);
    if (toks.size() < vertex_props.size())
      detail::fail_line(path, line_no, "vertex line has too few fields");
    Vec3 p;
    if (!detail::parse_double(toks[static_cast<std::size_t>(ix)], p.x) ||
        !detail::parse_double(toks[static_cast<std::size_t>(iy)], p.y) ||
        !detail::parse_double(toks[static_cast<std::size_t>(iz)], p.z))
      detail::fail_line(path, line_no, "vertex coordinate is not a finite number");
    cloud.points.push_back(p);
  }
  return cloud;
}

// Dispatch on the lowercase extension.
inline PointCloud read_cloud(const std::string& path) {
  std::string ext;
  const auto pos = path.find_last_of('.');
  if (pos != std::string::npos) {
    ext = path.substr(pos + 1);
    for (char& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (ext == "off") return read_off(path);
  if (ext == "ply") return read_ply(path);
  return read_xyz(path);
}

// Two blocks: the full energy table, then the radial profile.
//   r,omega_index,omega_x,omega_y,omega_z,energy
//   ...
//   r,G
//   ...
inline void write_spectrum_csv(std::ostream& out, const SpectrumGrid& spectrum,
                               const DirectionSet& dirs, const FrequencyGrid& freqs) {
  out << "r,omega_index,omega_x,omega_y,omega_z,energy\n";
  for (std::size_t k = 0; k < spectrum.radii(); ++k) {
    for (std::size_t l = 0; l < spectrum.directions(); ++l) {
      const Vec3& w = dirs.omegas[l];
      out << format_double(freqs.radii[k]) << ',' << l << ',' << format_double(w.x) << ','
          << format_double(w.y) << ',' << format_double(w.z) << ','
          << format_double(spectrum.energies(k, l)) << '\n';
    }
  }
  out << "r,G\n";
  for (std::size_t k = 0; k < spectrum.radii(); ++k)
    out << format_double(freqs.radii[k]) << ',' << format_double(spectrum.radial_profile[k])
        << '\n';
}

inline void write_spectrum_csv(const std::string& path, const SpectrumGrid& spectrum,
                               const DirectionSet& dirs, const FrequencyGrid& freqs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_spectrum_csv(out, spectrum, dirs, freqs);
}

}  // namespace dipv
