#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "measure_flow/curve.hpp"
#include "measure_flow/error.hpp"
#include "measure_flow/measure.hpp"

namespace measure_flow {

// Shortest round-trippable rendering, as printf("%.17g").
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '"')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '"' || cell.back() == '\r')) cell.remove_suffix(1);
    out.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

inline std::string write_measure_csv_string(const ParticleMeasure& mu) {
  std::string out;
  for (std::size_t k = 0; k < mu.dim(); ++k) out += "x_" + std::to_string(k + 1) + ",";
  out += "weight\n";
  for (std::size_t i = 0; i < mu.size(); ++i) {
    for (double c : mu.point(i)) out += format_double(c) + ",";
    out += format_double(mu.weight(i)) + "\n";
  }
  return out;
}

// One particle per row `x_1,...,x_d,weight`. A non-numeric first row is taken as a
// header. dim == 0 infers the dimension from the column count.
inline ParticleMeasure read_measure_csv_string(const std::string& text, std::size_t dim) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> coords, weights;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_line(line);
    std::vector<double> vals(cells.size());
    bool numeric = true;
    for (std::size_t c = 0; c < cells.size(); ++c) numeric &= detail::parse_double(cells[c], vals[c]);
    if (!numeric) {
      if (line_no == 1) continue;
      throw Error(Errc::io_error, "line " + std::to_string(line_no) + ": non-numeric cell");
    }
    if (dim == 0) {
      if (cells.size() < 2) throw Error(Errc::io_error, "line " + std::to_string(line_no) + ": need at least 2 columns");
      dim = cells.size() - 1;
    }
    if (cells.size() != dim + 1) {
      throw Error(Errc::io_error, "line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) + " columns");
    }
    for (double v : vals) {
      if (!std::isfinite(v)) throw Error(Errc::non_finite, "line " + std::to_string(line_no) + ": value is not finite");
    }
    coords.insert(coords.end(), vals.begin(), vals.end() - 1);
    weights.push_back(vals.back());
  }
  return ParticleMeasure(dim == 0 ? 1 : dim, std::move(coords), std::move(weights));
}

inline ParticleMeasure read_measure_csv(const std::string& path, std::size_t dim) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::io_error, "cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return read_measure_csv_string(ss.str(), dim);
}

// [{"position": [x_1, ..., x_d], "weight": a}, ...]
inline nlohmann::json measure_to_json(const ParticleMeasure& mu) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    auto p = mu.point(i);
    arr.push_back({{"position", std::vector<double>(p.begin(), p.end())}, {"weight", mu.weight(i)}});
  }
  return arr;
}

inline ParticleMeasure measure_from_json(const nlohmann::json& j, std::size_t dim = 0) {
  if (!j.is_array()) throw Error(Errc::io_error, "measure JSON must be an array of particles");
  std::vector<double> coords, weights;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    if (!p.is_object() || !p.contains("position") || !p.contains("weight") || !p["weight"].is_number() ||
        !p["position"].is_array()) {
      throw Error(Errc::io_error, "particle " + std::to_string(i) + " needs numeric `position` array and `weight`");
    }
    if (dim == 0) dim = p["position"].size();
    if (p["position"].size() != dim) throw Error(Errc::dim_mismatch, "particle " + std::to_string(i) + " has wrong dimension");
    for (const auto& c : p["position"]) {
      if (!c.is_number()) throw Error(Errc::io_error, "non-numeric coordinate");
      coords.push_back(c.get<double>());
    }
    weights.push_back(p["weight"].get<double>());
  }
  for (double v : coords) if (!std::isfinite(v)) throw Error(Errc::non_finite, "coordinate is not finite");
  for (double v : weights) if (!std::isfinite(v)) throw Error(Errc::non_finite, "weight is not finite");
  return ParticleMeasure(dim == 0 ? 1 : dim, std::move(coords), std::move(weights));
}

// Curve CSV: t,particle_id,x_1..x_d,weight
inline std::string write_curve_csv_string(const MeasureCurve& curve) {
  std::string out = "t,particle_id";
  const std::size_t d = curve.dim();
  for (std::size_t k = 0; k < d; ++k) out += ",x_" + std::to_string(k + 1);
  out += ",weight\n";
  for (std::size_t n = 0; n < curve.snapshots.size(); ++n) {
    const auto& mu = curve.snapshots[n];
    const std::string t = format_double(curve.grid.time(n));
    for (std::size_t i = 0; i < mu.size(); ++i) {
      out += t + "," + std::to_string(i);
      for (double c : mu.point(i)) out += "," + format_double(c);
      out += "," + format_double(mu.weight(i)) + "\n";
    }
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_error, "cannot write " + path);
  f << text;
}

}  // namespace measure_flow
