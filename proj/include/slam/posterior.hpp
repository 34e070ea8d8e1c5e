#pragma once

// Posterior summaries over the retained draws of one or more chains:
// latency summaries and contrasts, amplitude samples (max peak, half-integral
// peak, window mean), pointwise curve bands and split-chain R-hat.

#include "slam/mcem.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace slam {

struct IntervalSummary {
  double mean{0.0};
  double median{0.0};
  double sd{0.0};
  double lo{0.0};
  double hi{0.0};
};

// Linear-interpolation quantile of unsorted values, p in [0, 1].
double quantile(std::vector<double> values, double p);
// Equal-tailed (1 - alpha) interval; throws on empty input.
IntervalSummary summarize_values(const std::vector<double>& values, double alpha = 0.05);

// Retained draws of all chains, chain by chain.
std::vector<const LatentState*> pooled_draws(const std::vector<PosteriorChain>& chains);
// At most `max_count` draws, evenly spaced (all of them when max_count <= 0).
std::vector<const LatentState*> thin_draws(const std::vector<const LatentState*>& draws, int max_count);

struct LatencySummary {
  std::vector<std::vector<IntervalSummary>> subject;     // [series][m], t
  std::vector<std::vector<IntervalSummary>> group_r;     // [g][m], r
  std::vector<std::vector<IntervalSummary>> group_time;  // [g][m], (1 - r) a + r b
};

LatencySummary latency_summary(const Model& model, const std::vector<const LatentState*>& draws,
                               double alpha = 0.05);

// Difference time(g1, m1) - time(g2, m2) of group-level latencies on the time scale.
struct ContrastRequest {
  std::size_t g1{0};
  std::size_t m1{0};
  std::size_t g2{0};
  std::size_t m2{0};
};

struct ContrastSummary {
  ContrastRequest request;
  std::vector<double> draws;
  IntervalSummary diff;
  double prob_positive{0.0};
};

ContrastSummary group_contrast(const Model& model, const std::vector<const LatentState*>& draws,
                               const ContrastRequest& request, double alpha = 0.05);

// Posterior function draws for one series: one path per latent-state draw,
// from N(mean, cov) of f given (y, t^(d), sigma2^(d), theta).
class CurveSampler {
 public:
  CurveSampler(const Model& model, const Theta& theta);

  Eigen::MatrixXd paths(Eigen::Index series, const std::vector<const LatentState*>& draws,
                        const Eigen::VectorXd& points, Rng& rng) const;
  // Conditional posterior means instead of sampled paths.
  Eigen::MatrixXd mean_curves(Eigen::Index series, const std::vector<const LatentState*>& draws,
                              const Eigen::VectorXd& points) const;
  // Posterior mean curve at a single state.
  Eigen::VectorXd mean_curve(Eigen::Index series, const LatentState& state, const Eigen::VectorXd& points) const;

 private:
  const Model* model_;
  ScaledMarginal marginal_;
};

// Window end points plus interior points at `density` times the grid density.
Eigen::VectorXd refine_points(const Window& window, double grid_step, int density = 10);

enum class Orientation { peak, dip };
enum class AmplitudeMethod { max_peak, half_integral, mean_window };

std::string to_string(Orientation o);
std::string to_string(AmplitudeMethod m);
Orientation parse_orientation(const std::string& s);
AmplitudeMethod parse_amplitude_method(const std::string& s);

struct AmplitudeSamples {
  AmplitudeMethod method{AmplitudeMethod::max_peak};
  Orientation orientation{Orientation::peak};
  Window window;
  std::string baseline{"0"};
  std::vector<double> values;
  std::vector<double> locations;  // where each value was read off
  std::vector<bool> flagged;      // half-integral: integrand changes sign
};

// Rows of `paths` are curves evaluated at `points` (increasing, spanning the
// window).  `baseline` has one entry per row or a single shared entry.
AmplitudeSamples max_peak(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points, Orientation orientation,
                          const Eigen::VectorXd& baseline);
AmplitudeSamples half_integral_peak(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points,
                                    const Eigen::VectorXd& baseline);
// Trapezoidal mean; a window narrower than `min_width` is read at the point
// nearest its midpoint.
AmplitudeSamples mean_window_amplitude(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points,
                                       const Eigen::VectorXd& baseline, double min_width = 0.0);

// Half-point of the integral of the piecewise-linear curve through (points, f):
// smallest t with int_a^t f = (1/2) int_a^b f.  Sets `sign_change` when f
// changes sign on the window.
double half_integral_point(const Eigen::VectorXd& points, const Eigen::VectorXd& f, bool& sign_change);
double interpolate(const Eigen::VectorXd& points, const Eigen::VectorXd& f, double x);

enum class WindowSource { subject, group };

// Window for a component: (min, max) of the subject's t draws, or of the
// group's latency-time draws.
Window latency_range(const Model& model, const std::vector<const LatentState*>& draws, Eigen::Index series,
                     Eigen::Index m, WindowSource source);

struct BaselineSpec {
  double constant{0.0};
  std::optional<std::size_t> component;  // use that component's max-peak value per draw
};

struct AmplitudeRequest {
  std::size_t component{0};
  AmplitudeMethod method{AmplitudeMethod::max_peak};
  Orientation orientation{Orientation::peak};
  BaselineSpec baseline;
  WindowSource window_source{WindowSource::subject};
  std::optional<Window> fixed_window;  // mean_window: explicit window
};

// Amplitude samples for one series; paths are drawn with the given stream.
AmplitudeSamples amplitude_samples(const Model& model, const CurveSampler& sampler,
                                   const std::vector<const LatentState*>& draws, Eigen::Index series,
                                   const AmplitudeRequest& request,
                                   const std::vector<Orientation>& orientations, Rng& rng);

struct CurveBand {
  Eigen::VectorXd x;
  Eigen::VectorXd mean;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

CurveBand curve_band(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points, double alpha = 0.05);

// Split-chain potential scale reduction for one scalar; chains must have
// equal length >= 4.
double split_rhat(const std::vector<std::vector<double>>& chains);

// Flat parameter vector of a state and matching names (1-based indices):
// t_<g>_<s>_<m>, beta0_<m>, beta_<p>_<m>, eta_<g>_<m>, sigma2, r_<g>_<m>.
std::vector<std::string> parameter_names(const Model& model);
Eigen::VectorXd flatten(const Model& model, const LatentState& state);
LatentState unflatten(const Model& model, const Eigen::VectorXd& values);

struct RhatEntry {
  std::string parameter;
  double rhat{1.0};
};

std::vector<RhatEntry> rhat_table(const Model& model, const std::vector<PosteriorChain>& chains);

}  // namespace slam
