#include "slam/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace slam {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

double canonical(Rng& rng) { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; }

double t_proposal_logpdf(double to, double from, double sd, const Window& w, double mix) {
  const double tn = trunc_normal_logpdf(to, from, sd, w.a, w.b);
  if (mix <= 0.0) return tn;
  return std::log(mix / w.width() + (1.0 - mix) * std::exp(tn));
}

}  // namespace

Priors default_priors(const FactorDesign& design, std::size_t components) {
  Priors p;
  p.coefficients = CoefficientPrior::uniform(static_cast<Eigen::Index>(design.column_count()),
                                             static_cast<Eigen::Index>(components));
  return p;
}

std::vector<Eigen::Index> canonical_series_order(const WaveformDataset& data) {
  std::vector<Eigen::Index> order(data.series_count());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const Series& x = data.series[static_cast<std::size_t>(a)];
    const Series& y = data.series[static_cast<std::size_t>(b)];
    if (x.group != y.group) return x.group < y.group;
    return x.subject < y.subject;
  });
  return order;
}

Model make_model(WaveformDataset data, SearchWindows windows, FactorDesign design, Link link, Priors priors) {
  const ValidationReport report = validate_dataset(data, windows);
  if (!report.ok()) throw std::invalid_argument(report.message());
  if (design.group_count() != data.group_count())
    throw std::invalid_argument("design has " + std::to_string(design.group_count()) + " groups, data has " +
                                std::to_string(data.group_count()));
  priors.coefficients.validate(static_cast<Eigen::Index>(design.column_count()),
                               static_cast<Eigen::Index>(windows.size()));
  if (!(priors.eta_shape > 0.0 && priors.eta_rate > 0.0))
    throw std::invalid_argument("eta prior shape and rate must be positive");
  if (!(priors.sigma_shape > 0.0 && priors.sigma_scale > 0.0))
    throw std::invalid_argument("sigma2 prior shape and scale must be positive");
  if (priors.fixed_eta && !(*priors.fixed_eta > 0.0)) throw std::invalid_argument("fixed eta must be positive");
  return Model{std::move(data), std::move(windows), std::move(design), link, std::move(priors)};
}

bool LatentState::inside_windows(const SearchWindows& windows) const {
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index m = 0; m < t.cols(); ++m)
      if (!windows[static_cast<std::size_t>(m)].contains(t(i, m))) return false;
  return (eta.array() > 0.0).all() && sigma2 > 0.0;
}

LatentState initial_state(const Model& model, const InitOptions& options, Rng& rng) {
  LatentState s;
  const Eigen::Index M = model.components();
  s.t.resize(model.series(), M);
  // One draw from `rng`, then a stream per series keyed by its labels, so the
  // start does not depend on how the series are stored.
  const std::uint64_t base = rng();
  for (Eigen::Index i = 0; i < s.t.rows(); ++i) {
    const Series& x = model.data.series[static_cast<std::size_t>(i)];
    Rng own(mix64(base ^ mix64(hash_label(model.data.groups[x.group]) + 0x9e3779b97f4a7c15ULL * hash_label(x.subject))));
    for (Eigen::Index m = 0; m < M; ++m) {
      const Window& w = model.windows[static_cast<std::size_t>(m)];
      s.t(i, m) = uniform_sample(w.a, w.b, own);
    }
  }
  s.beta = AnovaCoefficients::zero(model.columns(), M);
  s.eta = Eigen::MatrixXd::Constant(model.groups(), M, model.priors.fixed_eta.value_or(options.eta));
  s.sigma2 = options.sigma2;
  s.r = locations_from_coefficients(s.beta, model.design, model.link).r;
  return s;
}

ProposalScales ProposalScales::initial(const Model& model) {
  ProposalScales p;
  const Eigen::Index M = model.components();
  p.t.resize(model.series(), M);
  for (Eigen::Index m = 0; m < M; ++m)
    p.t.col(m).setConstant(model.windows[static_cast<std::size_t>(m)].width() / 10.0);
  p.beta0 = Eigen::VectorXd::Constant(M, 0.5);
  p.beta = Eigen::MatrixXd::Constant(model.columns(), M, 0.5);
  p.log_eta = Eigen::MatrixXd::Constant(model.groups(), M, 0.5);
  return p;
}

AcceptanceStats AcceptanceStats::sized(const Model& model) {
  const auto M = static_cast<std::size_t>(model.components());
  AcceptanceStats s;
  s.t.resize(static_cast<std::size_t>(model.series()));
  s.beta0.resize(M);
  s.beta.resize(static_cast<std::size_t>(model.columns()) * M);
  s.eta.resize(static_cast<std::size_t>(model.groups()) * M);
  return s;
}

void AcceptanceStats::merge(const AcceptanceStats& other) {
  auto add = [](std::vector<Counter>& a, const std::vector<Counter>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("acceptance stats of different shapes");
    for (std::size_t i = 0; i < a.size(); ++i) a[i].merge(b[i]);
  };
  add(t, other.t);
  add(beta0, other.beta0);
  add(beta, other.beta);
  add(eta, other.eta);
}

Counter AcceptanceStats::total(const std::vector<Counter>& family) {
  Counter c;
  for (const Counter& x : family) c.merge(x);
  return c;
}

ProposalScales adapt_proposals(const AcceptanceStats& window, const ProposalScales& scales,
                               const AdaptSettings& settings, bool frozen) {
  ProposalScales out = scales;
  if (frozen) return out;
  auto step = [&](const Counter& c, double lo, double hi) {
    if (c.attempted == 0) return 1.0;
    const double rate = c.rate();
    if (rate > hi) return settings.factor;
    if (rate < lo) return 1.0 / settings.factor;
    return 1.0;
  };
  const Eigen::Index M = scales.beta0.size();
  for (Eigen::Index i = 0; i < out.t.rows(); ++i)
    out.t.row(i) *= step(window.t[static_cast<std::size_t>(i)], settings.t_low, settings.t_high);
  for (Eigen::Index m = 0; m < M; ++m) {
    out.beta0(m) *= step(window.beta0[static_cast<std::size_t>(m)], settings.low, settings.high);
    for (Eigen::Index p = 0; p < out.beta.rows(); ++p)
      out.beta(p, m) *= step(window.beta[static_cast<std::size_t>(p * M + m)], settings.low, settings.high);
    for (Eigen::Index g = 0; g < out.log_eta.rows(); ++g)
      out.log_eta(g, m) *= step(window.eta[static_cast<std::size_t>(g * M + m)], settings.low, settings.high);
  }
  return out;
}

ChainStreams ChainStreams::make(const Model& model, std::uint64_t seed, std::uint64_t key) {
  ChainStreams s;
  s.series.reserve(model.data.series_count());
  for (const Series& x : model.data.series)
    s.series.push_back(make_stream(seed, StreamKind::t_update,
                                   {key, hash_label(model.data.groups[x.group]), hash_label(x.subject)}));
  s.shared = make_stream(seed, StreamKind::coefficients, {key});
  return s;
}

GbetaStats gbeta_stats(const Model& model, const Eigen::MatrixXd& t, const std::vector<Eigen::Index>* order) {
  const Eigen::Index G = model.groups();
  const Eigen::Index M = model.components();
  GbetaStats s{Eigen::MatrixXd::Zero(G, M), Eigen::MatrixXd::Zero(G, M), Eigen::MatrixXd::Zero(G, M)};
  for (Eigen::Index k = 0; k < t.rows(); ++k) {
    const Eigen::Index i = order ? (*order)[static_cast<std::size_t>(k)] : k;
    const auto g = static_cast<Eigen::Index>(model.data.series[static_cast<std::size_t>(i)].group);
    for (Eigen::Index m = 0; m < M; ++m) {
      const Window& w = model.windows[static_cast<std::size_t>(m)];
      s.count(g, m) += 1.0;
      s.sum_log_u(g, m) += std::log((t(i, m) - w.a) / w.width());
      s.sum_log_v(g, m) += std::log((w.b - t(i, m)) / w.width());
    }
  }
  return s;
}

double gbeta_group_loglik(const GbetaStats& stats, Eigen::Index g, Eigen::Index m, double r, double eta,
                          const Window& window) {
  const double s1 = r * eta;
  const double s2 = (1.0 - r) * eta;
  if (!(s1 > 0.0 && s2 > 0.0)) return kNegInf;
  return (s1 - 1.0) * stats.sum_log_u(g, m) + (s2 - 1.0) * stats.sum_log_v(g, m) -
         stats.count(g, m) * (log_beta_fn(s1, s2) + std::log(window.width()));
}

bool mh_accept(double log_ratio, Rng& rng) {
  const double u = canonical(rng);
  return std::isfinite(log_ratio) ? std::log(u) < log_ratio : log_ratio > 0.0;
}

ChainSampler::ChainSampler(const Model& model, double tau0, double h, SamplerOptions options)
    : model_(&model),
      marginal_(model.data.grid.points, tau0, h),
      options_(options),
      min_separation_(options.min_separation_fraction * model.data.grid.span()) {
  prepared_.reserve(model.data.series_count());
  for (const Series& s : model.data.series) prepared_.push_back(marginal_.prepare(s.y));
  order_ = canonical_series_order(model.data);
}

void ChainSampler::reset(const LatentState& state) {
  if (state.t.rows() != model_->series() || state.t.cols() != model_->components())
    throw std::invalid_argument("latent state does not match the model");
  terms_.assign(prepared_.size(), ScaledMarginal::Terms{});
  if (!options_.likelihood) return;
  for (Eigen::Index i = 0; i < state.t.rows(); ++i) {
    const auto tm = marginal_.terms(prepared_[static_cast<std::size_t>(i)], state.t.row(i).transpose());
    if (!tm) {
      const Eigen::VectorXd row = state.t.row(i).transpose();
      const auto [a, b] = closest_pair(row);
      throw DegenerateConditioning(a, b);
    }
    terms_[static_cast<std::size_t>(i)] = *tm;
  }
}

std::optional<double> ChainSampler::series_loglik(Eigen::Index i, const Eigen::VectorXd& t, double sigma2) const {
  const auto tm = marginal_.terms(prepared_[static_cast<std::size_t>(i)], t);
  if (!tm) return std::nullopt;
  return ScaledMarginal::log_density(*tm, model_->data.grid.size(), sigma2);
}

double ChainSampler::total_loglik(double sigma2) const {
  double s = 0.0;
  for (Eigen::Index i : order_)
    s += ScaledMarginal::log_density(terms_[static_cast<std::size_t>(i)], model_->data.grid.size(), sigma2);
  return s;
}

double ChainSampler::sum_quad() const {
  double s = 0.0;
  for (Eigen::Index i : order_) s += terms_[static_cast<std::size_t>(i)].quad;
  return s;
}

void ChainSampler::sweep(LatentState& state, const ProposalScales& scales, ChainStreams& streams,
                         AcceptanceStats& stats) {
  if (terms_.size() != prepared_.size()) reset(state);
  if (options_.update_t) update_t(state, scales, streams, stats);
  const bool coefficients = options_.update_beta || (options_.update_eta && !model_->priors.fixed_eta);
  if (coefficients) {
    const GbetaStats gb = gbeta_stats(*model_, state.t, &order_);
    if (options_.update_beta) update_beta(state, scales, gb, streams.shared, stats);
    if (options_.update_eta && !model_->priors.fixed_eta) update_eta(state, scales, gb, streams.shared, stats);
  }
  if (options_.update_sigma2) update_sigma2(state, streams.shared);
}

void ChainSampler::update_t(LatentState& state, const ProposalScales& scales, ChainStreams& streams,
                            AcceptanceStats& stats) {
  const Eigen::Index M = model_->components();
  const Eigen::Index n = model_->data.grid.size();
  Eigen::VectorXd cur(M), prop(M);
  for (Eigen::Index i = 0; i < state.t.rows(); ++i) {
    Rng& rng = streams.series[static_cast<std::size_t>(i)];
    const auto g = static_cast<Eigen::Index>(model_->data.series[static_cast<std::size_t>(i)].group);
    cur = state.t.row(i).transpose();
    double log_ratio = 0.0;
    for (Eigen::Index m = 0; m < M; ++m) {
      const Window& w = model_->windows[static_cast<std::size_t>(m)];
      const double sd = scales.t(i, m);
      const bool uniform = options_.uniform_mix > 0.0 && canonical(rng) < options_.uniform_mix;
      prop(m) = uniform ? uniform_sample(w.a, w.b, rng) : trunc_normal_sample(cur(m), sd, w.a, w.b, rng);
      const GeneralBeta prior{state.r(g, m), state.eta(g, m), w.a, w.b};
      log_ratio += gbeta_logpdf(prop(m), prior) - gbeta_logpdf(cur(m), prior);
      log_ratio += t_proposal_logpdf(cur(m), prop(m), sd, w, options_.uniform_mix) -
                   t_proposal_logpdf(prop(m), cur(m), sd, w, options_.uniform_mix);
    }
    bool separated = true;
    for (Eigen::Index m = 0; m < M && separated; ++m)
      for (Eigen::Index k = m + 1; k < M; ++k)
        if (std::abs(prop(m) - prop(k)) < min_separation_) {
          separated = false;
          break;
        }

    std::optional<ScaledMarginal::Terms> tm;
    if (separated && options_.likelihood) {
      tm = marginal_.terms(prepared_[static_cast<std::size_t>(i)], prop);
      if (tm)
        log_ratio += ScaledMarginal::log_density(*tm, n, state.sigma2) -
                     ScaledMarginal::log_density(terms_[static_cast<std::size_t>(i)], n, state.sigma2);
    }
    const bool valid = separated && (!options_.likelihood || tm.has_value());
    const bool ok = mh_accept(valid ? log_ratio : kNegInf, rng) && valid;
    stats.t[static_cast<std::size_t>(i)].record(ok);
    if (ok) {
      state.t.row(i) = prop.transpose();
      if (tm) terms_[static_cast<std::size_t>(i)] = *tm;
    }
  }
}

double ChainSampler::beta_target(const AnovaCoefficients& beta, const Eigen::MatrixXd& eta, const GbetaStats& gb,
                                 Eigen::MatrixXd& r_out) const {
  r_out = locations_from_coefficients(beta, model_->design, model_->link).r;
  double lp = coefficient_logprior(beta, model_->priors.coefficients);
  for (Eigen::Index g = 0; g < r_out.rows(); ++g)
    for (Eigen::Index m = 0; m < r_out.cols(); ++m)
      lp += gbeta_group_loglik(gb, g, m, r_out(g, m), eta(g, m), model_->windows[static_cast<std::size_t>(m)]);
  return lp;
}

void ChainSampler::update_beta(LatentState& state, const ProposalScales& scales, const GbetaStats& gb, Rng& rng,
                               AcceptanceStats& stats) {
  const Eigen::Index M = model_->components();
  Eigen::MatrixXd r_prop;
  Eigen::MatrixXd r_cur;
  double current = beta_target(state.beta, state.eta, gb, r_cur);
  auto attempt = [&](double& slot, double scale, Counter& counter) {
    const double old = slot;
    slot = old + scale * normal_sample(0.0, 1.0, rng);
    const double proposed = beta_target(state.beta, state.eta, gb, r_prop);
    const bool ok = mh_accept(proposed - current, rng);
    counter.record(ok);
    if (ok) {
      current = proposed;
      r_cur = r_prop;
    } else {
      slot = old;
    }
  };
  for (Eigen::Index m = 0; m < M; ++m) {
    attempt(state.beta.beta0(m), scales.beta0(m), stats.beta0[static_cast<std::size_t>(m)]);
    for (Eigen::Index p = 0; p < state.beta.beta.rows(); ++p)
      attempt(state.beta.beta(p, m), scales.beta(p, m), stats.beta[static_cast<std::size_t>(p * M + m)]);
  }
  state.r = r_cur;
}

void ChainSampler::update_eta(LatentState& state, const ProposalScales& scales, const GbetaStats& gb, Rng& rng,
                              AcceptanceStats& stats) {
  const Eigen::Index M = model_->components();
  const Priors& pr = model_->priors;
  for (Eigen::Index g = 0; g < state.eta.rows(); ++g)
    for (Eigen::Index m = 0; m < M; ++m) {
      const Window& w = model_->windows[static_cast<std::size_t>(m)];
      const double cur = state.eta(g, m);
      const double prop = cur * std::exp(scales.log_eta(g, m) * normal_sample(0.0, 1.0, rng));
      double log_ratio = gbeta_group_loglik(gb, g, m, state.r(g, m), prop, w) -
                         gbeta_group_loglik(gb, g, m, state.r(g, m), cur, w);
      log_ratio += gamma_logpdf(prop, pr.eta_shape, pr.eta_rate) - gamma_logpdf(cur, pr.eta_shape, pr.eta_rate);
      log_ratio += std::log(prop) - std::log(cur);
      const bool ok = mh_accept(log_ratio, rng);
      stats.eta[static_cast<std::size_t>(g * M + m)].record(ok);
      if (ok) state.eta(g, m) = prop;
    }
}

void ChainSampler::update_sigma2(LatentState& state, Rng& rng) {
  const Priors& pr = model_->priors;
  double shape = pr.sigma_shape;
  double scale = pr.sigma_scale;
  if (options_.likelihood) {
    shape += 0.5 * static_cast<double>(model_->data.grid.size() * model_->series());
    scale += 0.5 * sum_quad();
  }
  state.sigma2 = invgamma_sample(shape, scale, rng);
}

RunResult run_chain(ChainSampler& sampler, LatentState init, ProposalScales scales, const RunSchedule& schedule,
                    ChainStreams& streams, const DrawSink& sink, bool keep_draws) {
  if (schedule.sweeps < 0 || schedule.burn_in < 0 || schedule.thin < 1 || schedule.adapt_settings.every < 1)
    throw std::invalid_argument("invalid sampling schedule");
  const Model& model = sampler.model();
  RunResult out;
  out.stats = AcceptanceStats::sized(model);
  AcceptanceStats window = AcceptanceStats::sized(model);
  LatentState state = std::move(init);
  sampler.reset(state);
  std::size_t retained = 0;
  for (int k = 0; k < schedule.sweeps; ++k) {
    const bool burning = k < schedule.burn_in;
    if (burning) {
      sampler.sweep(state, scales, streams, window);
      if (schedule.adapt && (k + 1) % schedule.adapt_settings.every == 0) {
        scales = adapt_proposals(window, scales, schedule.adapt_settings, false);
        window = AcceptanceStats::sized(model);
      }
      continue;
    }
    sampler.sweep(state, scales, streams, out.stats);
    if ((k - schedule.burn_in + 1) % schedule.thin != 0) continue;
    if (sink) sink(retained, state);
    if (keep_draws) out.draws.push_back(state);
    ++retained;
  }
  out.scales = std::move(scales);
  out.last = std::move(state);
  return out;
}

RunResult estep_sample(const Model& model, const LatentState& init, double tau0, double h,
                       const ProposalScales& scales, const RunSchedule& schedule, ChainStreams& streams,
                       const SamplerOptions& options) {
  ChainSampler sampler(model, tau0, h, options);
  return run_chain(sampler, init, scales, schedule, streams);
}

}  // namespace slam
