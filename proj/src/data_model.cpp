#include "slam/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace slam {

std::size_t WaveformDataset::subjects_in(std::size_t g) const {
  return static_cast<std::size_t>(
      std::count_if(series.begin(), series.end(), [g](const Series& s) { return s.group == g; }));
}

std::vector<std::size_t> WaveformDataset::series_of(std::size_t g) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < series.size(); ++i)
    if (series[i].group == g) out.push_back(i);
  return out;
}

std::size_t WaveformDataset::position_in_group(std::size_t i) const {
  std::size_t pos = 0;
  for (std::size_t k = 0; k <= i; ++k)
    if (series[k].group == series[i].group) ++pos;
  return pos;
}

SearchWindows windows_from_normalized(const SearchWindows& normalized, const TimeGrid& grid) {
  SearchWindows out;
  for (const Window& w : normalized.windows)
    out.windows.push_back({grid.front() + w.a * grid.span(), grid.front() + w.b * grid.span()});
  return out;
}

std::string ValidationReport::message() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) os << (i ? "; " : "") << violations[i];
  return os.str();
}

ValidationReport validate_dataset(const WaveformDataset& dataset, const SearchWindows& windows) {
  ValidationReport report;
  auto add = [&report](std::string v) { report.violations.push_back(std::move(v)); };

  const auto& x = dataset.grid.points;
  const Eigen::Index n = x.size();
  if (n < 3) add("grid has fewer than 3 points");
  if (!x.allFinite()) add("grid contains non-finite values");
  for (Eigen::Index i = 1; i < n; ++i)
    if (!(x(i) > x(i - 1))) {
      add("grid not increasing at index " + std::to_string(i));
      break;
    }

  if (dataset.groups.empty()) add("dataset has no groups");
  for (std::size_t g = 0; g < dataset.groups.size(); ++g)
    if (dataset.subjects_in(g) == 0) add("group '" + dataset.groups[g] + "' has no subjects");

  for (const Series& s : dataset.series) {
    if (s.group >= dataset.groups.size()) {
      add("series '" + s.subject + "' refers to an unknown group");
      continue;
    }
    const std::string who = "series (" + dataset.groups[s.group] + ", " + s.subject + ")";
    if (s.y.size() != n)
      add("ragged series: " + who + " has " + std::to_string(s.y.size()) + " values, grid has " +
          std::to_string(n));
    else if (!s.y.allFinite())
      add("missing or non-finite observations in " + who);
  }

  if (windows.size() == 0) add("no search windows");
  for (std::size_t m = 0; m < windows.size(); ++m) {
    const Window& w = windows[m];
    const std::string which = "window " + std::to_string(m + 1);
    if (!(w.a < w.b)) add(which + " has a >= b");
    if (n > 0 && !(w.a < x(n - 1) && w.b > x(0))) add(which + " lies outside the grid span");
  }
  for (std::size_t m = 1; m < windows.size(); ++m) {
    if (windows[m].a < windows[m - 1].a) {
      add("windows are not in increasing order");
      break;
    }
  }
  for (std::size_t m = 0; m < windows.size(); ++m)
    for (std::size_t k = m + 1; k < windows.size(); ++k) {
      const Window& u = windows[m];
      const Window& v = windows[k];
      if (u.a < v.b && v.a < u.b) add("windows overlap: " + std::to_string(m + 1) + " and " +
                                      std::to_string(k + 1));
    }
  return report;
}

const std::string& FactorDesign::decode(const Eigen::RowVectorXd& row) const {
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (z.row(static_cast<Eigen::Index>(g)) == row) return groups[g];
  throw std::invalid_argument("design row does not match any group");
}

FactorDesign FactorDesign::with_covariate(const std::string& name,
                                          const Eigen::VectorXd& values) const {
  if (static_cast<std::size_t>(values.size()) != groups.size())
    throw std::invalid_argument("covariate '" + name + "' needs one value per group");
  FactorDesign out = *this;
  out.columns.push_back(name);
  out.z.conservativeResize(Eigen::NoChange, z.cols() + 1);
  out.z.col(z.cols()) = values;
  return out;
}

namespace {

std::vector<std::string> levels_with_baseline(const std::vector<std::string>& seen,
                                              const std::optional<std::string>& baseline) {
  std::vector<std::string> levels = seen;
  if (baseline) {
    auto it = std::find(levels.begin(), levels.end(), *baseline);
    if (it == levels.end()) throw std::invalid_argument("baseline level '" + *baseline + "' not found");
    std::rotate(levels.begin(), it, it + 1);
  }
  return levels;
}

}  // namespace

FactorDesign encode_one_way(const std::vector<std::string>& groups,
                            const std::optional<std::string>& baseline) {
  if (groups.empty()) throw std::invalid_argument("design needs at least one group");
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = i + 1; j < groups.size(); ++j)
      if (groups[i] == groups[j]) throw std::invalid_argument("duplicate group label '" + groups[i] + "'");

  const auto levels = levels_with_baseline(groups, baseline);
  FactorDesign d;
  d.kind = DesignKind::one_way;
  d.groups = groups;
  d.columns.assign(levels.begin() + 1, levels.end());
  d.z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(groups.size()),
                              static_cast<Eigen::Index>(d.columns.size()));
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t c = 0; c < d.columns.size(); ++c)
      if (groups[g] == d.columns[c]) d.z(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(c)) = 1.0;
  return d;
}

FactorDesign encode_two_way(const std::vector<std::pair<std::string, std::string>>& cells,
                            const std::optional<std::string>& baseline_a,
                            const std::optional<std::string>& baseline_b) {
  if (cells.empty()) throw std::invalid_argument("design needs at least one group");
  std::vector<std::string> seen_a, seen_b;
  for (const auto& [la, lb] : cells) {
    if (std::find(seen_a.begin(), seen_a.end(), la) == seen_a.end()) seen_a.push_back(la);
    if (std::find(seen_b.begin(), seen_b.end(), lb) == seen_b.end()) seen_b.push_back(lb);
  }
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (std::size_t j = i + 1; j < cells.size(); ++j)
      if (cells[i] == cells[j])
        throw std::invalid_argument("duplicate cell '" + cells[i].first + ":" + cells[i].second + "'");
  if (cells.size() != seen_a.size() * seen_b.size())
    throw std::invalid_argument("two-way cells do not form a crossed layout");

  const auto levels_a = levels_with_baseline(seen_a, baseline_a);
  const auto levels_b = levels_with_baseline(seen_b, baseline_b);
  FactorDesign d;
  d.kind = DesignKind::two_way;
  for (const auto& [la, lb] : cells) d.groups.push_back(la + ":" + lb);
  for (std::size_t i = 1; i < levels_a.size(); ++i) d.columns.push_back("A:" + levels_a[i]);
  for (std::size_t i = 1; i < levels_b.size(); ++i) d.columns.push_back("B:" + levels_b[i]);
  d.z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cells.size()),
                              static_cast<Eigen::Index>(d.columns.size()));
  const std::size_t offset_b = levels_a.size() - 1;
  for (std::size_t g = 0; g < cells.size(); ++g) {
    const auto row = static_cast<Eigen::Index>(g);
    for (std::size_t i = 1; i < levels_a.size(); ++i)
      if (cells[g].first == levels_a[i]) d.z(row, static_cast<Eigen::Index>(i - 1)) = 1.0;
    for (std::size_t i = 1; i < levels_b.size(); ++i)
      if (cells[g].second == levels_b[i]) d.z(row, static_cast<Eigen::Index>(offset_b + i - 1)) = 1.0;
  }
  return d;
}

FactorDesign encode_design(const WaveformDataset& dataset, DesignKind kind,
                           const std::optional<std::string>& baseline) {
  if (kind == DesignKind::one_way) return encode_one_way(dataset.groups, baseline);
  if (dataset.group_b.size() != dataset.groups.size())
    throw std::invalid_argument("two-way design needs a second factor (group2 column)");
  std::vector<std::pair<std::string, std::string>> cells;
  for (std::size_t g = 0; g < dataset.groups.size(); ++g) {
    const std::string& label = dataset.groups[g];
    const std::string& lb = dataset.group_b[g];
    cells.emplace_back(label.substr(0, label.size() - lb.size() - 1), lb);
  }
  std::optional<std::string> base_a, base_b;
  if (baseline) {
    const auto colon = baseline->find(':');
    if (colon == std::string::npos) {
      base_a = baseline;
    } else {
      base_a = baseline->substr(0, colon);
      base_b = baseline->substr(colon + 1);
    }
  }
  return encode_two_way(cells, base_a, base_b);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw std::runtime_error(context + ": cannot parse number '" + s + "'");
  return v;
}

bool numeric_label(const std::string& s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool subject_less(const std::string& a, const std::string& b) {
  long long ia = 0, ib = 0;
  if (numeric_label(a, ia) && numeric_label(b, ib) && ia != ib) return ia < ib;
  return a < b;
}

}  // namespace

WaveformDataset read_long_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file '" + path.string() + "'");
  const std::string where = "data file '" + path.string() + "'";

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(where + " is empty");
  const auto header = split_csv_line(line);
  int col_subject = -1, col_group = -1, col_group2 = -1, col_time = -1, col_y = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    int* slot = h == "subject" ? &col_subject
                : h == "group" ? &col_group
                : h == "group2" ? &col_group2
                : h == "time" ? &col_time
                : h == "y" ? &col_y
                : nullptr;
    if (!slot || *slot >= 0)
      throw std::runtime_error(where + ": header must be subject,group,time,y (optional group2)");
    *slot = static_cast<int>(c);
  }
  if (col_subject < 0 || col_group < 0 || col_time < 0 || col_y < 0)
    throw std::runtime_error(where + ": header must be subject,group,time,y (optional group2)");

  WaveformDataset ds;
  std::vector<std::vector<std::string>> subjects;  // per group, first-appearance
  std::map<std::pair<std::size_t, std::string>, std::vector<std::pair<double, double>>> obs;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    const std::string ctx = where + " line " + std::to_string(line_no);
    if (f.size() != header.size()) throw std::runtime_error(ctx + ": expected " +
                                                           std::to_string(header.size()) + " fields");
    std::string label = f[static_cast<std::size_t>(col_group)];
    std::string level_b;
    if (col_group2 >= 0) {
      level_b = f[static_cast<std::size_t>(col_group2)];
      label += ":" + level_b;
    }
    auto it = std::find(ds.groups.begin(), ds.groups.end(), label);
    std::size_t g;
    if (it == ds.groups.end()) {
      g = ds.groups.size();
      ds.groups.push_back(label);
      if (col_group2 >= 0) ds.group_b.push_back(level_b);
      subjects.emplace_back();
    } else {
      g = static_cast<std::size_t>(it - ds.groups.begin());
    }
    const std::string& subject = f[static_cast<std::size_t>(col_subject)];
    auto key = std::make_pair(g, subject);
    if (!obs.count(key)) subjects[g].push_back(subject);
    const double t = parse_double(f[static_cast<std::size_t>(col_time)], ctx);
    const double y = parse_double(f[static_cast<std::size_t>(col_y)], ctx);
    if (!std::isfinite(y)) throw std::runtime_error(ctx + ": missing or non-finite observation");
    obs[key].emplace_back(t, y);
  }
  if (ds.groups.empty()) throw std::runtime_error(where + " has no observations");

  std::vector<double> times;
  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    auto& subs = subjects[g];
    std::sort(subs.begin(), subs.end(), subject_less);
    for (const auto& subject : subs) {
      auto rows = obs[{g, subject}];
      std::sort(rows.begin(), rows.end());
      std::vector<double> t(rows.size());
      Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        t[i] = rows[i].first;
        y(static_cast<Eigen::Index>(i)) = rows[i].second;
      }
      if (times.empty()) {
        times = t;
      } else if (t != times) {
        throw std::runtime_error(where + ": series (" + ds.groups[g] + ", " + subject +
                                 ") has time values that differ from the first series");
      }
      ds.series.push_back(Series{g, subject, std::move(y)});
    }
  }
  ds.grid.points = Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
  return ds;
}

void write_long_csv(const WaveformDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write data file '" + path.string() + "'");
  const bool two_way = dataset.group_b.size() == dataset.groups.size() && !dataset.group_b.empty();
  out << (two_way ? "subject,group,group2,time,y\n" : "subject,group,time,y\n");
  char buf[64];
  auto num = [&buf](double v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  };
  for (const Series& s : dataset.series) {
    std::string group = dataset.groups[s.group];
    std::string level_b;
    if (two_way) {
      level_b = dataset.group_b[s.group];
      group = group.substr(0, group.size() - level_b.size() - 1);
    }
    for (Eigen::Index i = 0; i < s.y.size(); ++i) {
      out << s.subject << ',' << group << ',';
      if (two_way) out << level_b << ',';
      out << num(dataset.grid.points(i)) << ',' << num(s.y(i)) << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing data file '" + path.string() + "'");
}

}  // namespace slam
