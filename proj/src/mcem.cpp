#include "slam/mcem.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace slam {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Purpose : std::uint64_t { warmup = 0, estep = 1, final_chain = 2 };

std::uint64_t stream_key(Purpose purpose, std::uint64_t index) {
  return (static_cast<std::uint64_t>(purpose) << 32) | index;
}

double sample_sd(const WaveformDataset& data) {
  double sum = 0.0, sum2 = 0.0, count = 0.0;
  for (const Series& s : data.series) {
    sum += s.y.sum();
    sum2 += s.y.squaredNorm();
    count += static_cast<double>(s.y.size());
  }
  if (count < 2.0) return 1.0;
  const double mean = sum / count;
  const double var = (sum2 - count * mean * mean) / (count - 1.0);
  return var > 0.0 ? std::sqrt(var) : 1.0;
}

// Uniform subsample of `count` indices from [0, total) without replacement,
// returned in increasing order.
std::vector<std::size_t> subsample_indices(std::size_t total, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= total) return idx;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Anchor {
  MstepObjective objective;
  Eigen::VectorXd base;  // per-draw log-likelihood at the anchor theta
  FamilyRates rates;
};

// Self-normalized importance weights; returns ESS through `ess`.
Eigen::VectorXd importance_weights(const Eigen::VectorXd& current, const Eigen::VectorXd& base, double& ess) {
  Eigen::VectorXd logw = current - base;
  double top = -kInf;
  for (Eigen::Index l = 0; l < logw.size(); ++l)
    if (std::isfinite(logw(l))) top = std::max(top, logw(l));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(logw.size());
  if (!std::isfinite(top)) {
    ess = 0.0;
    return w;
  }
  for (Eigen::Index l = 0; l < logw.size(); ++l)
    if (std::isfinite(logw(l))) w(l) = std::exp(logw(l) - top);
  w /= w.sum();
  ess = 1.0 / w.squaredNorm();
  return w;
}

}  // namespace

NelderMeadResult nelder_mead_maximize(const std::function<double(const Eigen::VectorXd&)>& f,
                                      const Eigen::VectorXd& x0, const NelderMeadOptions& options) {
  const Eigen::Index n = x0.size();
  NelderMeadResult out;
  auto cost = [&](const Eigen::VectorXd& x) {
    ++out.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? -v : kInf;
  };
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  vals[0] = cost(x0);
  for (Eigen::Index i = 0; i < n; ++i) {
    pts[static_cast<std::size_t>(i + 1)](i) += options.initial_step;
    vals[static_cast<std::size_t>(i + 1)] = cost(pts[static_cast<std::size_t>(i + 1)]);
  }
  std::vector<std::size_t> order(pts.size());
  while (true) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    {
      std::vector<Eigen::VectorXd> p2;
      std::vector<double> v2;
      for (std::size_t k : order) {
        p2.push_back(pts[k]);
        v2.push_back(vals[k]);
      }
      pts = std::move(p2);
      vals = std::move(v2);
    }
    double size = 0.0;
    for (std::size_t k = 1; k < pts.size(); ++k) size = std::max(size, (pts[k] - pts[0]).cwiseAbs().maxCoeff());
    if (size < options.xtol) {
      out.converged = true;
      break;
    }
    if (out.evaluations >= options.max_evaluations) break;

    const std::size_t worst = pts.size() - 1;
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < worst; ++k) centroid += pts[k];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd xr = centroid + (centroid - pts[worst]);
    const double fr = cost(xr);
    if (fr < vals[0]) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = cost(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[worst - 1]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    bool shrink = false;
    if (fr < vals[worst]) {
      const Eigen::VectorXd xc = centroid + 0.5 * (xr - centroid);
      const double fc = cost(xc);
      if (fc <= fr) {
        pts[worst] = xc;
        vals[worst] = fc;
      } else {
        shrink = true;
      }
    } else {
      const Eigen::VectorXd xc = centroid + 0.5 * (pts[worst] - centroid);
      const double fc = cost(xc);
      if (fc < vals[worst]) {
        pts[worst] = xc;
        vals[worst] = fc;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (std::size_t k = 1; k < pts.size(); ++k) {
        pts[k] = pts[0] + 0.5 * (pts[k] - pts[0]);
        vals[k] = cost(pts[k]);
      }
    }
  }
  out.x = pts[0];
  out.value = -vals[0];
  return out;
}

MstepObjective::MstepObjective(const Model& model, std::vector<SubsampleDraw> draws)
    : model_(&model), draws_(std::move(draws)), order_(canonical_series_order(model.data)) {
  if (draws_.empty()) throw std::invalid_argument("M-step needs at least one draw");
  const Eigen::Index S = model.series();
  const Eigen::Index M = model.components();
  unique_t_.resize(static_cast<std::size_t>(S));
  draw_to_unique_.resize(static_cast<std::size_t>(S));
  for (Eigen::Index i = 0; i < S; ++i) {
    std::map<std::vector<double>, Eigen::Index> seen;
    std::vector<std::vector<double>> rows;
    auto& map = draw_to_unique_[static_cast<std::size_t>(i)];
    for (const SubsampleDraw& d : draws_) {
      if (d.t.rows() != S || d.t.cols() != M) throw std::invalid_argument("M-step draw has the wrong shape");
      std::vector<double> key(static_cast<std::size_t>(M));
      for (Eigen::Index m = 0; m < M; ++m) key[static_cast<std::size_t>(m)] = d.t(i, m);
      const auto [it, inserted] = seen.emplace(key, static_cast<Eigen::Index>(rows.size()));
      if (inserted) rows.push_back(key);
      map.push_back(it->second);
    }
    Eigen::MatrixXd u(static_cast<Eigen::Index>(rows.size()), M);
    for (std::size_t k = 0; k < rows.size(); ++k)
      for (Eigen::Index m = 0; m < M; ++m) u(static_cast<Eigen::Index>(k), m) = rows[k][static_cast<std::size_t>(m)];
    unique_t_[static_cast<std::size_t>(i)] = std::move(u);
  }
}

Eigen::VectorXd MstepObjective::per_draw(double log_tau0, double log_h) const {
  const auto L = static_cast<Eigen::Index>(draws_.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(L);
  const double tau0 = std::exp(log_tau0);
  const double h = std::exp(log_h);
  if (!std::isfinite(tau0) || !std::isfinite(h) || !(tau0 > 0.0) || !(h > 0.0))
    return Eigen::VectorXd::Constant(L, -kInf);
  const Eigen::Index n = model_->data.grid.size();
  try {
    const ScaledMarginal marginal(model_->data.grid.points, tau0, h);
    for (Eigen::Index i : order_) {
      const auto prepared = marginal.prepare(model_->data.series[static_cast<std::size_t>(i)].y);
      const auto terms = marginal.terms_batch(prepared, unique_t_[static_cast<std::size_t>(i)]);
      const auto& map = draw_to_unique_[static_cast<std::size_t>(i)];
      for (Eigen::Index l = 0; l < L; ++l) {
        const auto& tm = terms[static_cast<std::size_t>(map[static_cast<std::size_t>(l)])];
        out(l) += tm ? ScaledMarginal::log_density(*tm, n, draws_[static_cast<std::size_t>(l)].sigma2) : -kInf;
      }
    }
  } catch (const std::exception&) {
    return Eigen::VectorXd::Constant(L, -kInf);
  }
  return out;
}

double MstepObjective::value(double log_tau0, double log_h, const Eigen::VectorXd& weights) const {
  if (weights.size() != static_cast<Eigen::Index>(draws_.size()))
    throw std::invalid_argument("weight count does not match the draws");
  const Eigen::VectorXd ll = per_draw(log_tau0, log_h);
  double s = 0.0;
  for (Eigen::Index l = 0; l < ll.size(); ++l) {
    if (weights(l) == 0.0) continue;
    if (!std::isfinite(ll(l))) return -kInf;
    s += weights(l) * ll(l);
  }
  return s;
}

double Theta::distance(const Theta& other) const {
  const double a = std::log(tau0) - std::log(other.tau0);
  const double b = std::log(h) - std::log(other.h);
  return std::sqrt(a * a + b * b);
}

MstepResult mstep_optimize(const MstepObjective& objective, const Eigen::VectorXd& weights, const Theta& start,
                           const NelderMeadOptions& options) {
  MstepResult out;
  out.theta = start;
  const auto f = [&](const Eigen::VectorXd& x) { return objective.value(x(0), x(1), weights); };
  Eigen::VectorXd x0(2);
  x0 << std::log(start.tau0), std::log(start.h);
  out.start_value = f(x0);
  out.value = out.start_value;
  out.evaluations = 1;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    Eigen::VectorXd from = x0;
    if (attempt > 0) {
      // deterministic perturbations of the start
      const double d = 0.05 * attempt;
      from(0) += (attempt % 2 ? d : -d);
      from(1) += d;
      out.restarts = attempt;
    }
    const NelderMeadResult nm = nelder_mead_maximize(f, from, options);
    out.evaluations += nm.evaluations;
    if (std::isfinite(nm.value) && (!std::isfinite(out.start_value) || nm.value >= out.start_value)) {
      out.theta = Theta{std::exp(nm.x(0)), std::exp(nm.x(1))};
      out.value = nm.value;
      return out;
    }
  }
  out.flagged = true;
  return out;
}

void McemConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  need(estep_burn_in >= 0 && estep_draws > estep_burn_in, "E-step draws must exceed the E-step burn-in");
  need(subsample >= 1, "M-step subsample size must be at least 1");
  need(epsilon > 0.0, "convergence threshold epsilon must be positive");
  need(max_iterations >= 1, "maximum EM iterations must be at least 1");
  need(warmup_sweeps >= 0, "warm-up sweeps must be non-negative");
  need(reweight_switch >= 0.0 && reweight_after >= 1, "invalid reweighting settings");
  need(min_ess_fraction > 0.0 && min_ess_fraction <= 1.0, "min_ess_fraction must lie in (0, 1]");
  need(!tau0_init || *tau0_init > 0.0, "initial tau0 must be positive");
  need(!h_init || *h_init > 0.0, "initial h must be positive");
  need(step_floor > 0.0 && step_ceiling >= step_floor, "invalid optimizer step bounds");
  need(adapt.every >= 1 && adapt.factor > 1.0, "invalid adaptation settings");
  need(adapt.t_low < adapt.t_high && adapt.low < adapt.high, "acceptance bands must be ordered");
  need(sampler.uniform_mix >= 0.0 && sampler.uniform_mix <= 1.0, "uniform_mix must lie in [0, 1]");
  need(sampler.min_separation_fraction >= 0.0, "min separation must be non-negative");
  need(init.eta > 0.0 && init.sigma2 > 0.0, "initial eta and sigma2 must be positive");
  need(optimizer.initial_step > 0.0 && optimizer.xtol > 0.0 && optimizer.max_evaluations >= 3,
       "invalid optimizer settings");
  need(final_chains.chains >= 1, "at least one chain is required");
  need(final_chains.burn_in >= 0 && final_chains.total > final_chains.burn_in,
       "total draws must exceed the burn-in");
  need(final_chains.thin >= 1, "thinning must be at least 1");
  need(threads >= 1, "threads must be at least 1");
}

FamilyRates family_rates(const AcceptanceStats& stats) {
  return {AcceptanceStats::total(stats.t).rate(), AcceptanceStats::total(stats.beta0).rate(),
          AcceptanceStats::total(stats.beta).rate(), AcceptanceStats::total(stats.eta).rate()};
}

Theta initial_theta(const Model& model, const McemConfig& config) {
  Theta theta;
  theta.tau0 = config.tau0_init.value_or(sample_sd(model.data) / std::sqrt(config.init.sigma2));
  theta.h = config.h_init.value_or(0.1 * model.data.grid.span());
  return theta;
}

EmTrace run_em(const Model& model, const McemConfig& config, const ProgressLog& log) {
  config.validate();
  EmTrace trace;
  Theta theta = initial_theta(model, config);
  trace.initial = theta;
  trace.theta = theta;

  Rng init_rng = make_stream(config.seed, StreamKind::init, {stream_key(Purpose::warmup, 0)});
  LatentState state = initial_state(model, config.init, init_rng);
  ProposalScales scales = ProposalScales::initial(model);

  if (config.warmup_sweeps > 0) {
    ChainSampler sampler(model, theta.tau0, theta.h, config.sampler);
    ChainStreams streams = ChainStreams::make(model, config.seed, stream_key(Purpose::warmup, 0));
    const RunSchedule warm{config.warmup_sweeps, config.warmup_sweeps, 1, true, config.adapt};
    RunResult r = run_chain(sampler, state, scales, warm, streams, {}, false);
    state = std::move(r.last);
    scales = std::move(r.scales);
  }

  std::optional<Anchor> anchor;
  bool reweighting = false;
  int fresh = 0;
  double last_delta = kInf;
  const auto L = static_cast<std::size_t>(config.subsample);

  for (int j = 1; j <= config.max_iterations; ++j) {
    EmIteration it;
    it.index = j;
    Eigen::VectorXd weights;
    bool refresh = !reweighting || !anchor;
    if (!refresh) {
      const Eigen::VectorXd current = anchor->objective.per_draw(std::log(theta.tau0), std::log(theta.h));
      weights = importance_weights(current, anchor->base, it.ess);
      refresh = it.ess < config.min_ess_fraction * static_cast<double>(anchor->objective.size());
      it.reweighted = !refresh;
    }
    if (refresh) {
      ChainSampler sampler(model, theta.tau0, theta.h, config.sampler);
      ChainStreams streams =
          ChainStreams::make(model, config.seed, stream_key(Purpose::estep, static_cast<std::uint64_t>(j)));
      const RunSchedule sched{config.estep_draws, config.estep_burn_in, 1, true, config.adapt};
      RunResult r = run_chain(sampler, state, scales, sched, streams);
      state = r.last;
      scales = r.scales;

      Rng sub_rng = make_stream(config.seed, StreamKind::subsample, {static_cast<std::uint64_t>(j)});
      const auto picks = subsample_indices(r.draws.size(), L, sub_rng);
      std::vector<SubsampleDraw> draws;
      draws.reserve(picks.size());
      for (std::size_t k : picks) draws.push_back({r.draws[k].t, r.draws[k].sigma2});
      MstepObjective objective(model, std::move(draws));
      Eigen::VectorXd base = objective.per_draw(std::log(theta.tau0), std::log(theta.h));
      anchor.emplace(Anchor{std::move(objective), std::move(base), family_rates(r.stats)});
      weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(anchor->objective.size()),
                                          1.0 / static_cast<double>(anchor->objective.size()));
      it.ess = static_cast<double>(anchor->objective.size());
      ++fresh;
    }
    it.acceptance = anchor->rates;

    NelderMeadOptions nm = config.optimizer;
    nm.initial_step = std::clamp(std::isfinite(last_delta) ? 10.0 * last_delta : config.step_ceiling,
                                 config.step_floor, config.step_ceiling);
    const MstepResult step = mstep_optimize(anchor->objective, weights, theta, nm);
    it.theta = step.theta;
    it.objective = step.value;
    it.start_objective = step.start_value;
    it.evaluations = step.evaluations;
    it.optimizer_flag = step.flagged;
    it.delta = theta.distance(step.theta);
    theta = step.theta;
    last_delta = it.delta;
    trace.iterations.push_back(it);
    trace.theta = theta;
    if (log) log(it);
    if (it.delta < config.epsilon) {
      trace.converged = true;
      break;
    }
    if (!reweighting && (it.delta < config.reweight_switch || fresh >= config.reweight_after)) reweighting = true;
  }
  return trace;
}

std::vector<PosteriorChain> run_final_chains(const Model& model, const Theta& theta, const McemConfig& config,
                                             const ChainSink& sink) {
  config.validate();
  const int chains = config.final_chains.chains;
  std::vector<PosteriorChain> out(static_cast<std::size_t>(chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
  std::atomic<int> next{0};

  auto worker = [&]() {
    for (int k = next++; k < chains; k = next++) {
      try {
        const std::uint64_t key = stream_key(Purpose::final_chain, static_cast<std::uint64_t>(k));
        Rng init_rng = make_stream(config.seed, StreamKind::init, {key});
        LatentState state = initial_state(model, config.init, init_rng);
        ChainStreams streams = ChainStreams::make(model, config.seed, key);
        ChainSampler sampler(model, theta.tau0, theta.h, config.sampler);
        const RunSchedule sched{config.final_chains.total, config.final_chains.burn_in, config.final_chains.thin,
                                true, config.adapt};
        DrawSink draw_sink;
        if (sink) draw_sink = [&, k](std::size_t d, const LatentState& s) { sink(k + 1, d, s); };
        RunResult r = run_chain(sampler, std::move(state), ProposalScales::initial(model), sched, streams, draw_sink);
        PosteriorChain& c = out[static_cast<std::size_t>(k)];
        c.id = k + 1;
        c.draws = std::move(r.draws);
        c.stats = std::move(r.stats);
        c.scales = std::move(r.scales);
      } catch (...) {
        errors[static_cast<std::size_t>(k)] = std::current_exception();
      }
    }
  };

  const int workers = std::min(config.threads, chains);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

McemResult run_mcem(const Model& model, const McemConfig& config, const ChainSink& sink, const ProgressLog& log) {
  McemResult out;
  out.trace = run_em(model, config, log);
  out.chains = run_final_chains(model, out.trace.theta, config, sink);
  return out;
}

}  // namespace slam
