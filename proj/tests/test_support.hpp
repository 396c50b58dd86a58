#pragma once

// Shared oracles and helpers for the unit tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ddam/pseudo_am.hpp"

namespace testing_support {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ddam_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

/// Central differences of f around x, one coordinate at a time.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Off-diagonal central differences of pl_loss; diagonal entries stay 0.
inline std::vector<double> finite_difference_am(const ddam::am::CouplingMatrix& w, const ddam::am::PatternSet& set,
                                                double h) {
  const std::size_t n = w.length();
  std::vector<double> g(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto up = w;
      up.set(i, j, w(i, j) + h);
      auto down = w;
      down.set(i, j, w(i, j) - h);
      g[i * n + j] = (ddam::am::pl_loss(up, set) - ddam::am::pl_loss(down, set)) / (2.0 * h);
    }
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out;
  if (v.size() < window) return out;
  for (std::size_t i = 0; i + window <= v.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + window; ++j) s += v[j];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace testing_support
