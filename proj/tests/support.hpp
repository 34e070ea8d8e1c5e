#pragma once

// Shared fixtures for the test binaries.

#include "slam/data_model.hpp"
#include "slam/rng.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline Eigen::VectorXd unit_grid(int n) { return Eigen::VectorXd::LinSpaced(n, 0.0, 1.0); }

// G groups of S subjects each, values drawn N(0, 1).
inline slam::WaveformDataset noise_dataset(int groups, int subjects, int n, std::uint64_t seed) {
  slam::WaveformDataset ds;
  ds.grid.points = unit_grid(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  for (int g = 0; g < groups; ++g) {
    ds.groups.push_back("g" + std::to_string(g + 1));
    for (int s = 0; s < subjects; ++s) {
      Eigen::VectorXd y(n);
      for (int i = 0; i < n; ++i) y(i) = z(rng);
      ds.series.push_back({static_cast<std::size_t>(g), std::to_string(s + 1), y});
    }
  }
  return ds;
}

inline slam::SearchWindows halves() { return slam::SearchWindows{{{0.0, 0.5}, {0.5, 1.0}}}; }

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("slam_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Central differences of f on `points`.
inline Eigen::VectorXd slope(const Eigen::VectorXd& f, const Eigen::VectorXd& x) {
  Eigen::VectorXd d(f.size());
  const Eigen::Index n = f.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index lo = i == 0 ? 0 : i - 1;
    const Eigen::Index hi = i == n - 1 ? n - 1 : i + 1;
    d(i) = (f(hi) - f(lo)) / (x(hi) - x(lo));
  }
  return d;
}

}  // namespace testing
