#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mpmdse/common.hpp"

namespace golden {

inline std::filesystem::path path(const std::string& name) { return std::filesystem::path(MPMDSE_GOLDEN_DIR) / name; }

/// Set MPMDSE_UPDATE_GOLDEN=1 to rewrite golden files from the current output.
inline bool updating() {
  const char* v = std::getenv("MPMDSE_UPDATE_GOLDEN");
  return v && *v && std::string(v) != "0";
}

/// Returns the stored text, writing `actual` first when updating or when the
/// file does not exist yet.
inline std::string load_or_write(const std::string& name, const std::string& actual) {
  const auto p = path(name);
  if (updating() || !std::filesystem::exists(p)) mpmdse::write_text_file(p, actual);
  return mpmdse::read_text_file(p);
}

inline std::string format_matrix(const mpmdse::Matrix& m) {
  std::string out;
  char buf[32];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out += (j ? " " : "") + std::string(buf);
    }
    out += "\n";
  }
  return out;
}

inline std::vector<double> parse_numbers(const std::string& text) {
  std::istringstream in(text);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  return out;
}

/// Largest absolute difference between a stored numeric golden and `m`;
/// infinity on a size mismatch.
inline double matrix_deviation(const std::string& name, const mpmdse::Matrix& m) {
  const auto stored = parse_numbers(load_or_write(name, format_matrix(m)));
  if (stored.size() != static_cast<std::size_t>(m.size())) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      worst = std::max(worst, std::abs(stored[i * m.cols() + j] - m(i, j)));
    }
  }
  return worst;
}

}  // namespace golden
