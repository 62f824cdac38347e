#pragma once

// Sample CSV files and JSON-lines metric records.

#include "nisk/core.hpp"

#include <nlohmann/json.hpp>

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace nisk {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// %.17g round-trips every finite double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Header x0..x{D-1}, one sample (column of `samples`) per row.
inline std::string samples_to_csv(const Matrix& samples) {
  std::string out;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    if (i > 0) out += ',';
    out += "x" + std::to_string(i);
  }
  out += '\n';
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      if (i > 0) out += ',';
      out += format_double(samples(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

inline void append_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw IoError("cannot open " + path + " for appending");
  f << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_samples_csv(const std::string& path, const Matrix& samples) {
  write_text(path, samples_to_csv(samples));
}

// Parses the samples.csv layout back into a D x n matrix.
inline Matrix read_samples_csv(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  Eigen::Index dim = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      if (cell != "x" + std::to_string(dim))
        throw IoError(path + ": bad header column '" + cell + "'");
      ++dim;
    }
  }
  if (dim == 0) throw IoError(path + ": empty header");
  std::vector<double> vals;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream rs(line);
    std::string cell;
    Eigen::Index k = 0;
    while (std::getline(rs, cell, ',')) {
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE)
        throw IoError(path + ":" + std::to_string(line_no) + ": cannot parse '" + cell + "'");
      vals.push_back(v);
      ++k;
    }
    if (k != dim)
      throw IoError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                    " columns, got " + std::to_string(k));
  }
  const auto n = static_cast<Eigen::Index>(vals.size()) / dim;
  Matrix out(dim, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) out(i, j) = vals[static_cast<std::size_t>(j * dim + i)];
  return out;
}

struct MetricRecord {
  std::string name;
  double value = 0.0;
  long n_samples = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::optional<int> iter;  // set for periodic in-training records

  MetricRecord(std::string n, double v, long count, std::uint64_t s, std::string hash,
               std::optional<int> at = std::nullopt)
      : name(std::move(n)), value(v), n_samples(count), seed(s), config_hash(std::move(hash)), iter(at) {
    require(std::isfinite(value), "metric '" + name + "' is not finite");
  }

  std::string to_json_line() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["value"] = value;
    j["n_samples"] = n_samples;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    if (iter) j["iter"] = *iter;
    return j.dump() + "\n";
  }
};

inline void append_metrics(const std::string& path, const std::vector<MetricRecord>& records) {
  std::string text;
  for (const auto& r : records) text += r.to_json_line();
  append_text(path, text);
}

// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace nisk
