#pragma once

// Monte Carlo EM over the kernel hyperparameters theta = (tau0, h), with
// tau^2 = tau0^2 sigma2.  The E-step samples the latent state at the current
// theta; the M-step maximizes
//   Q(theta) = sum_l w_l sum_gs log p(y_gs | t_gs^(l), sigma2^(l), theta)
// over a subsample of L draws by Nelder-Mead in (log tau0, log h).
//
// Two phases.  While the estimate is still moving, every iteration runs a
// fresh E-step (w_l = 1/L).  Once the step size falls below
// `reweight_switch` the last draws are kept as an anchor sampled at theta_a,
// and later E-steps reweight them by importance weights
//   w_l ~ p(y | t^(l), sigma2^(l), theta) / p(y | t^(l), sigma2^(l), theta_a),
// which makes the update map smooth in theta so the iteration can settle to
// the convergence threshold.  The anchor is refreshed with a new E-step when
// the effective sample size of the weights drops below `min_ess_fraction`.

#include "slam/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace slam {

struct NelderMeadOptions {
  double initial_step{0.1};
  double xtol{1e-8};
  int max_evaluations{400};
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value{0.0};
  int evaluations{0};
  bool converged{false};
};

// Maximizes f; non-finite values rank below every finite one.  The starting
// point is a vertex of the initial simplex, so value >= f(x0).
NelderMeadResult nelder_mead_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                                      const Eigen::VectorXd& x0, const NelderMeadOptions& options);

struct SubsampleDraw {
  Eigen::MatrixXd t;  // series x M
  double sigma2{1.0};
};

// Per-draw marginal log-likelihood sum_gs log p(y_gs | t^(l), sigma2^(l), theta).
class MstepObjective {
 public:
  MstepObjective(const Model& model, std::vector<SubsampleDraw> draws);

  // -inf entries mark draws whose t cannot be conditioned on at this theta.
  Eigen::VectorXd per_draw(double log_tau0, double log_h) const;
  // sum_l w_l per_draw_l
  double value(double log_tau0, double log_h, const Eigen::VectorXd& weights) const;

  std::size_t size() const { return draws_.size(); }
  const std::vector<SubsampleDraw>& draws() const { return draws_; }

 private:
  const Model* model_;
  std::vector<SubsampleDraw> draws_;
  std::vector<Eigen::Index> order_;
  // Per series: distinct t rows and the distinct index used by each draw.
  std::vector<Eigen::MatrixXd> unique_t_;
  std::vector<std::vector<Eigen::Index>> draw_to_unique_;
};

struct Theta {
  double tau0{1.0};
  double h{0.1};

  double distance(const Theta& other) const;  // Euclidean in (log tau0, log h)
};

struct MstepResult {
  Theta theta;
  double value{0.0};
  double start_value{0.0};
  int evaluations{0};
  int restarts{0};
  bool flagged{false};  // optimizer failed; theta is the starting point
};

MstepResult mstep_optimize(const MstepObjective& objective, const Eigen::VectorXd& weights, const Theta& start,
                           const NelderMeadOptions& options);

struct FinalChainConfig {
  int chains{4};
  int total{21000};
  int burn_in{1000};
  int thin{10};
};

struct McemConfig {
  std::uint64_t seed{1};
  int estep_draws{2100};
  int estep_burn_in{100};
  int subsample{500};
  double epsilon{1e-5};
  int max_iterations{100};
  int warmup_sweeps{1000};
  double reweight_switch{1e-2};
  int reweight_after{15};  // switch to reweighting after this many fresh E-steps regardless
  double min_ess_fraction{0.5};
  std::optional<double> tau0_init;
  std::optional<double> h_init;
  double step_floor{1e-4};
  double step_ceiling{0.1};
  AdaptSettings adapt;
  SamplerOptions sampler;
  InitOptions init;
  NelderMeadOptions optimizer;
  FinalChainConfig final_chains;
  int threads{1};

  void validate() const;
};

struct FamilyRates {
  double t{0.0};
  double beta0{0.0};
  double beta{0.0};
  double eta{0.0};
};

FamilyRates family_rates(const AcceptanceStats& stats);

struct EmIteration {
  int index{0};
  Theta theta;  // estimate after this iteration's M-step
  double delta{0.0};
  double objective{0.0};
  double start_objective{0.0};
  double ess{0.0};
  bool reweighted{false};
  FamilyRates acceptance;
  int evaluations{0};
  bool optimizer_flag{false};
};

struct EmTrace {
  Theta initial;
  std::vector<EmIteration> iterations;
  bool converged{false};
  Theta theta;  // final estimate
};

struct PosteriorChain {
  int id{0};
  std::vector<LatentState> draws;
  AcceptanceStats stats;
  ProposalScales scales;
};

using ChainSink = std::function<void(int chain, std::size_t draw, const LatentState& state)>;
using ProgressLog = std::function<void(const EmIteration& iteration)>;

// Default starting point: tau0 = sd(y) / sqrt(sigma2_init), h = span / 10.
Theta initial_theta(const Model& model, const McemConfig& config);

EmTrace run_em(const Model& model, const McemConfig& config, const ProgressLog& log = {});

// Independent chains at fixed theta, run on up to `config.threads` threads.
// The sink is called from the thread running the chain; calls for different
// chains may overlap.
std::vector<PosteriorChain> run_final_chains(const Model& model, const Theta& theta, const McemConfig& config,
                                             const ChainSink& sink = {});

struct McemResult {
  EmTrace trace;
  std::vector<PosteriorChain> chains;
};

McemResult run_mcem(const Model& model, const McemConfig& config, const ChainSink& sink = {},
                    const ProgressLog& log = {});

}  // namespace slam
