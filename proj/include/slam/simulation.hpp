#pragma once

// Synthetic data with known latencies and amplitudes, and the replicate study
// that scores fitted estimates against them.
//
// sine-cosine: two groups on x_i = (i - 1) / (n - 1),
//   sine   f_s(x) = -2 sin(2 pi x + s / 15 - 0.3)
//   cosine f_s(x) = cos(2 pi x + s / 10 + 1.2) - 3 x
// each with a dip in (0, 0.5) and a peak in (0.5, 1).
//
// model-based: group locations r = link^-1(beta0 + beta1 z), subject latencies
// t^m ~ gbeta(r, eta, window m) and the piecewise quadratic
//   f(x) = c (x - t1)^2                                 x < w
//   f(x) = c [-(x - t2)^2 + (w - t1)^2 + (w - t2)^2]    x >= w
// with w the boundary between the two windows.

#include "slam/mcem.hpp"
#include "slam/posterior.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace slam {

enum class GeneratorKind { sine_cosine, model_based };

std::string to_string(GeneratorKind kind);
GeneratorKind parse_generator_kind(const std::string& s);

struct GeneratorSpec {
  GeneratorKind kind{GeneratorKind::sine_cosine};
  int n{100};
  int subjects{10};  // per group
  double sigma{0.25};
  // model-based only
  Eigen::Vector2d beta0{0.3, -0.3};
  Eigen::Vector2d beta1{-0.5, 1.0};
  double eta{8.0};
  SearchWindows windows{{{0.0, 0.5}, {0.5, 1.0}}};
  double curvature{20.0};
  LinkKind link{LinkKind::logit};

  void validate() const;
};

struct GroundTruth {
  Eigen::MatrixXd curves;     // series x n
  Eigen::MatrixXd latency;    // series x M
  Eigen::MatrixXd amplitude;  // series x M
  Eigen::MatrixXd r;          // G x M (model-based only)
  std::vector<Orientation> orientation;
};

struct Simulated {
  WaveformDataset data;
  SearchWindows windows;
  GroundTruth truth;
};

Simulated generate_sine_cosine(const GeneratorSpec& spec, std::uint64_t seed);
Simulated generate_model_based(const GeneratorSpec& spec, std::uint64_t seed);
Simulated generate(const GeneratorSpec& spec, std::uint64_t seed);

// Noise-free curves (and their derivatives) used by the generators.
double sine_curve(double x, int subject);
double sine_slope(double x, int subject);
double cosine_curve(double x, int subject);
double cosine_slope(double x, int subject);
double model_based_curve(double x, double t1, double t2, double boundary, double curvature);

// Stationary point of `slope` inside `window` of the requested kind, by a
// scan for sign changes followed by bisection to 1e-12.  Throws if none.
double stationary_point(const std::function<double(double)>& slope, const Window& window, Orientation kind);

// Model for a simulated dataset: one-way design on the first group, logit
// link, default priors.
Model simulated_model(const Simulated& sim, LinkKind link = LinkKind::logit);

struct Estimates {
  Eigen::MatrixXd latency;    // series x M
  Eigen::MatrixXd amplitude;  // series x M
};

// Argmin (dip) / argmax (peak) of the raw data over the grid points of each window.
Estimates naive_estimates(const Simulated& sim);

// Root mean squared error over the subjects of group g and all components.
double group_rmse(const WaveformDataset& data, const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth,
                  std::size_t g);

struct SlamEstimates {
  Estimates mean;
  Estimates median;
};

// Posterior mean / median of t and of the Max Peak amplitude samples
// (per-subject window, truth orientations, baseline 0).
SlamEstimates slam_estimates(const Model& model, const McemResult& fit, const std::vector<Orientation>& orientation,
                             std::uint64_t seed, int max_draws = 2000);

struct ReplicateRow {
  int replicate{0};
  std::uint64_t seed{0};
  std::string method;
  std::string group;
  double latency_rmse{0.0};
  double amplitude_rmse{0.0};
  bool failed{false};
  std::string message;
  bool converged{false};
  int em_iterations{0};
};

struct TableRow {
  std::string method;
  std::string group;
  double latency_rmse_mean{0.0};
  double latency_rmse_sd{0.0};
  double amplitude_rmse_mean{0.0};
  double amplitude_rmse_sd{0.0};
  int replicates{0};  // contributing (non-failed) replicates
};

struct ReplicateOptions {
  int replicates{10};
  std::uint64_t master_seed{1};
  int threads{1};  // replicates run concurrently, each fit single-threaded
  int max_draws{2000};
};

struct ReplicateReport {
  std::vector<ReplicateRow> detail;  // per replicate x group x method
  std::vector<TableRow> table;       // per method x group
  int failures{0};
};

using ReplicateProgress = std::function<void(int replicate, bool ok)>;

ReplicateReport run_replicates(const GeneratorSpec& spec, const McemConfig& fit, const ReplicateOptions& options,
                               const ReplicateProgress& progress = {});

// Mean and sd across replicates of the non-failed detail rows.
std::vector<TableRow> summarize_replicates(const std::vector<ReplicateRow>& detail);

}  // namespace slam
