#pragma once

// Metropolis-within-Gibbs sampler over the latent state (t, beta, eta, sigma2)
// at fixed kernel hyperparameters (tau0, h).  One sweep updates
//   t_gs     per series, as one block: componentwise truncated-normal proposals,
//            joint accept/reject against N(0, sigma2 A_gs) x prod_m gbeta(t^m)
//   beta0^m  Gaussian random walk
//   beta_p^m Gaussian random walk
//   eta_g^m  random walk on log eta (with Jacobian), unless eta is fixed
//   sigma2   Gibbs, IG(n N / 2 + alpha, sum_gs y'A^-1 y / 2 + beta)
// and r is recomputed through the inverse link whenever beta moves.

#include "slam/data_model.hpp"
#include "slam/dgp.hpp"
#include "slam/distributions.hpp"
#include "slam/latent_anova.hpp"
#include "slam/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace slam {

struct Priors {
  CoefficientPrior coefficients;
  double eta_shape{0.5};  // Gamma(shape, rate)
  double eta_rate{0.5};
  double sigma_shape{0.5};  // InverseGamma(shape, scale)
  double sigma_scale{0.5};
  // When set, every eta_g^m is held at this value.
  std::optional<double> fixed_eta;
};

struct Model {
  WaveformDataset data;
  SearchWindows windows;  // grid units
  FactorDesign design;
  Link link;
  Priors priors;

  Eigen::Index components() const { return static_cast<Eigen::Index>(windows.size()); }
  Eigen::Index columns() const { return static_cast<Eigen::Index>(design.column_count()); }
  Eigen::Index groups() const { return static_cast<Eigen::Index>(data.group_count()); }
  Eigen::Index series() const { return static_cast<Eigen::Index>(data.series_count()); }
};

// Validates the pieces against each other; throws std::invalid_argument.
Model make_model(WaveformDataset data, SearchWindows windows, FactorDesign design, Link link, Priors priors);
// Series indices sorted by (group, subject label).  Reductions over series run
// in this order so they do not depend on how the dataset is stored.
std::vector<Eigen::Index> canonical_series_order(const WaveformDataset& data);
// Priors with N(0, 1) coefficients and the default Gamma / InverseGamma hyperparameters.
Priors default_priors(const FactorDesign& design, std::size_t components);

struct LatentState {
  Eigen::MatrixXd t;  // series x M, rows in dataset order
  AnovaCoefficients beta;
  Eigen::MatrixXd eta;  // G x M
  double sigma2{1.0};
  Eigen::MatrixXd r;  // G x M, always link^-1 of the linear predictor

  bool inside_windows(const SearchWindows& windows) const;
};

struct InitOptions {
  double eta{1.0};
  double sigma2{1.0};
};

// t uniform in each window, beta = 0, eta and sigma2 from `options`.
LatentState initial_state(const Model& model, const InitOptions& options, Rng& rng);

struct ProposalScales {
  Eigen::MatrixXd t;  // series x M
  Eigen::VectorXd beta0;
  Eigen::MatrixXd beta;     // P x M
  Eigen::MatrixXd log_eta;  // G x M

  static ProposalScales initial(const Model& model);
};

struct Counter {
  std::uint64_t accepted{0};
  std::uint64_t attempted{0};

  void record(bool ok) {
    ++attempted;
    if (ok) ++accepted;
  }
  void merge(const Counter& other) {
    accepted += other.accepted;
    attempted += other.attempted;
  }
  double rate() const { return attempted ? static_cast<double>(accepted) / static_cast<double>(attempted) : 0.0; }
};

struct AcceptanceStats {
  std::vector<Counter> t;      // per series
  std::vector<Counter> beta0;  // per component
  std::vector<Counter> beta;   // p * M + m
  std::vector<Counter> eta;    // g * M + m

  static AcceptanceStats sized(const Model& model);
  void merge(const AcceptanceStats& other);
  static Counter total(const std::vector<Counter>& family);
};

struct AdaptSettings {
  int every{40};
  double factor{1.25};
  double t_low{0.25};
  double t_high{0.45};
  double low{0.20};
  double high{0.40};
};

// Scales a proposal up (down) by `factor` when its windowed acceptance rate is
// above (below) its band.  Identity once frozen.
ProposalScales adapt_proposals(const AcceptanceStats& window, const ProposalScales& scales,
                               const AdaptSettings& settings, bool frozen);

struct SamplerOptions {
  bool likelihood{true};  // false: t, sigma2 see only their priors (testing)
  bool update_t{true};
  bool update_beta{true};
  bool update_eta{true};
  bool update_sigma2{true};
  double uniform_mix{0.1};               // probability of a uniform t proposal, per component
  double min_separation_fraction{1e-3};  // of the grid span
};

// One stream per series (keyed by group and subject labels, so results do not
// depend on storage order) plus one for the shared parameters.
struct ChainStreams {
  std::vector<Rng> series;
  Rng shared;

  static ChainStreams make(const Model& model, std::uint64_t seed, std::uint64_t key);
};

// Per (g, m): count, sum log u, sum log(1 - u) with u the position of t in its window.
struct GbetaStats {
  Eigen::MatrixXd count;
  Eigen::MatrixXd sum_log_u;
  Eigen::MatrixXd sum_log_v;
};

// `order`, when given, fixes the summation order over series.
GbetaStats gbeta_stats(const Model& model, const Eigen::MatrixXd& t,
                       const std::vector<Eigen::Index>* order = nullptr);
// sum over the subjects of group g of gbeta_logpdf(t_gs^m | r, eta)
double gbeta_group_loglik(const GbetaStats& stats, Eigen::Index g, Eigen::Index m, double r, double eta,
                          const Window& window);

// MH rule on a log acceptance ratio; always consumes exactly one uniform.
bool mh_accept(double log_ratio, Rng& rng);

// Sampler for a single chain.  Keeps y'A^-1y and log|A| of every series in
// step with the t it was last given.
class ChainSampler {
 public:
  ChainSampler(const Model& model, double tau0, double h, SamplerOptions options = {});

  // Must be called before sweeping a state not produced by this sampler.
  void reset(const LatentState& state);
  void sweep(LatentState& state, const ProposalScales& scales, ChainStreams& streams, AcceptanceStats& stats);

  // log p(y_i | t, sigma2) at this sampler's hyperparameters; nullopt if degenerate.
  std::optional<double> series_loglik(Eigen::Index i, const Eigen::VectorXd& t, double sigma2) const;
  double total_loglik(double sigma2) const;
  double sum_quad() const;

  const Model& model() const { return *model_; }
  const ScaledMarginal& marginal() const { return marginal_; }
  const SamplerOptions& options() const { return options_; }
  // Series indices sorted by (group, subject label); all sums run in this order.
  const std::vector<Eigen::Index>& canonical_order() const { return order_; }

 private:
  void update_t(LatentState& state, const ProposalScales& scales, ChainStreams& streams, AcceptanceStats& stats);
  void update_beta(LatentState& state, const ProposalScales& scales, const GbetaStats& gb, Rng& rng,
                   AcceptanceStats& stats);
  void update_eta(LatentState& state, const ProposalScales& scales, const GbetaStats& gb, Rng& rng,
                  AcceptanceStats& stats);
  void update_sigma2(LatentState& state, Rng& rng);
  double beta_target(const AnovaCoefficients& beta, const Eigen::MatrixXd& eta, const GbetaStats& gb,
                     Eigen::MatrixXd& r_out) const;

  const Model* model_;
  ScaledMarginal marginal_;
  SamplerOptions options_;
  std::vector<ScaledMarginal::Prepared> prepared_;
  std::vector<ScaledMarginal::Terms> terms_;
  std::vector<Eigen::Index> order_;
  double min_separation_;
};

struct RunSchedule {
  int sweeps{2100};
  int burn_in{100};
  int thin{1};
  bool adapt{true};  // during burn-in only
  AdaptSettings adapt_settings;
};

struct RunResult {
  std::vector<LatentState> draws;  // retained draws
  AcceptanceStats stats;           // retained sweeps only
  ProposalScales scales;           // as frozen at the end of burn-in
  LatentState last;
};

using DrawSink = std::function<void(std::size_t index, const LatentState& state)>;

RunResult run_chain(ChainSampler& sampler, LatentState init, ProposalScales scales, const RunSchedule& schedule,
                    ChainStreams& streams, const DrawSink& sink = {}, bool keep_draws = true);

// One Monte Carlo E-step at (tau0, h).
RunResult estep_sample(const Model& model, const LatentState& init, double tau0, double h,
                       const ProposalScales& scales, const RunSchedule& schedule, ChainStreams& streams,
                       const SamplerOptions& options = {});

}  // namespace slam
