#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace slam {

struct TimeGrid {
  Eigen::VectorXd points;

  Eigen::Index size() const { return points.size(); }
  double front() const { return points(0); }
  double back() const { return points(points.size() - 1); }
  double span() const { return back() - front(); }
  // Mean spacing; equals the step on a regular grid.
  double step() const { return span() / static_cast<double>(size() - 1); }
};

struct Series {
  std::size_t group{0};
  std::string subject;
  Eigen::VectorXd y;
};

// Observations y_igs on a shared grid.  Series are stored group by group;
// `group_b` is filled only for two-way layouts (factor-B level of each group).
struct WaveformDataset {
  TimeGrid grid;
  std::vector<std::string> groups;
  std::vector<std::string> group_b;
  std::vector<Series> series;
  std::string time_unit{"design"};

  std::size_t group_count() const { return groups.size(); }
  std::size_t series_count() const { return series.size(); }
  std::size_t subjects_in(std::size_t g) const;
  // Indices of the series belonging to group g, in storage order.
  std::vector<std::size_t> series_of(std::size_t g) const;
  // 1-based position of series i within its group.
  std::size_t position_in_group(std::size_t i) const;
};

struct Window {
  double a{0.0};
  double b{1.0};

  double width() const { return b - a; }
  bool contains(double x) const { return x > a && x < b; }
};

struct SearchWindows {
  std::vector<Window> windows;

  std::size_t size() const { return windows.size(); }
  const Window& operator[](std::size_t m) const { return windows[m]; }
};

// Windows given on the normalized (0,1) scale mapped onto the grid's span.
SearchWindows windows_from_normalized(const SearchWindows& normalized, const TimeGrid& grid);

struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
  std::string message() const;
};

ValidationReport validate_dataset(const WaveformDataset& dataset, const SearchWindows& windows);

enum class DesignKind { one_way, two_way };

// Reference (baseline) dummy coding of the group-level factors, optionally
// extended by real-valued group covariates.  Row g of `z` holds the design
// values of group g; the baseline group (or cell) encodes to all zeros.
struct FactorDesign {
  DesignKind kind{DesignKind::one_way};
  std::vector<std::string> groups;
  std::vector<std::string> columns;
  Eigen::MatrixXd z;

  std::size_t group_count() const { return groups.size(); }
  std::size_t column_count() const { return columns.size(); }
  // Group whose dummy row matches `row` exactly; throws if none.
  const std::string& decode(const Eigen::RowVectorXd& row) const;
  FactorDesign with_covariate(const std::string& name, const Eigen::VectorXd& values) const;
};

// One-way: groups are the factor levels.  The baseline defaults to the first
// label; duplicates throw std::invalid_argument.
FactorDesign encode_one_way(const std::vector<std::string>& groups,
                            const std::optional<std::string>& baseline = std::nullopt);

// Two-way main effects: each group is a (level A, level B) cell.  Cells must
// be distinct and form a fully crossed layout.
FactorDesign encode_two_way(const std::vector<std::pair<std::string, std::string>>& cells,
                            const std::optional<std::string>& baseline_a = std::nullopt,
                            const std::optional<std::string>& baseline_b = std::nullopt);

FactorDesign encode_design(const WaveformDataset& dataset, DesignKind kind,
                           const std::optional<std::string>& baseline = std::nullopt);

// Long-format CSV, header `subject,group,time,y` with optional `group2`.
// Groups keep first-appearance order (with `group2`, cells are labeled
// "A:B"); subjects are sorted within each group; time values must agree
// across all series.  Throws std::runtime_error with the path on failure.
WaveformDataset read_long_csv(const std::filesystem::path& path);
void write_long_csv(const WaveformDataset& dataset, const std::filesystem::path& path);

}  // namespace slam
