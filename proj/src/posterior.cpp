#include "slam/posterior.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace slam {

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Eigen::VectorXd baseline_row(const Eigen::VectorXd& baseline, Eigen::Index rows) {
  if (baseline.size() == 1) return Eigen::VectorXd::Constant(rows, baseline(0));
  if (baseline.size() != rows) throw std::invalid_argument("baseline needs one value per draw or a single value");
  return baseline;
}

void check_paths(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points) {
  if (points.size() == 0 || paths.cols() != points.size())
    throw std::invalid_argument("paths and points do not match");
}

double trapezoid(const Eigen::VectorXd& x, const Eigen::VectorXd& f) {
  double s = 0.0;
  for (Eigen::Index j = 0; j + 1 < x.size(); ++j) s += 0.5 * (x(j + 1) - x(j)) * (f(j) + f(j + 1));
  return s;
}

}  // namespace

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(p, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

IntervalSummary summarize_values(const std::vector<double>& values, double alpha) {
  if (values.empty()) throw std::invalid_argument("cannot summarize an empty sample");
  IntervalSummary s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.median = quantile(values, 0.5);
  s.lo = quantile(values, alpha / 2.0);
  s.hi = quantile(values, 1.0 - alpha / 2.0);
  return s;
}

std::vector<const LatentState*> pooled_draws(const std::vector<PosteriorChain>& chains) {
  std::vector<const LatentState*> out;
  for (const PosteriorChain& c : chains)
    for (const LatentState& s : c.draws) out.push_back(&s);
  return out;
}

std::vector<const LatentState*> thin_draws(const std::vector<const LatentState*>& draws, int max_count) {
  if (max_count <= 0 || draws.size() <= static_cast<std::size_t>(max_count)) return draws;
  std::vector<const LatentState*> out;
  out.reserve(static_cast<std::size_t>(max_count));
  const auto k = static_cast<std::size_t>(max_count);
  for (std::size_t i = 0; i < k; ++i) out.push_back(draws[i * draws.size() / k]);
  return out;
}

LatencySummary latency_summary(const Model& model, const std::vector<const LatentState*>& draws, double alpha) {
  if (draws.empty()) throw std::invalid_argument("latency summary needs at least one draw");
  const auto S = static_cast<std::size_t>(model.series());
  const auto G = static_cast<std::size_t>(model.groups());
  const auto M = static_cast<std::size_t>(model.components());
  LatencySummary out;
  out.subject.assign(S, std::vector<IntervalSummary>(M));
  out.group_r.assign(G, std::vector<IntervalSummary>(M));
  out.group_time.assign(G, std::vector<IntervalSummary>(M));
  std::vector<double> v(draws.size());
  for (std::size_t m = 0; m < M; ++m) {
    const auto mi = static_cast<Eigen::Index>(m);
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t d = 0; d < draws.size(); ++d) v[d] = draws[d]->t(static_cast<Eigen::Index>(i), mi);
      out.subject[i][m] = summarize_values(v, alpha);
    }
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t d = 0; d < draws.size(); ++d) v[d] = draws[d]->r(static_cast<Eigen::Index>(g), mi);
      out.group_r[g][m] = summarize_values(v, alpha);
      for (std::size_t d = 0; d < draws.size(); ++d) v[d] = latency_time(v[d], model.windows[m]);
      out.group_time[g][m] = summarize_values(v, alpha);
    }
  }
  return out;
}

ContrastSummary group_contrast(const Model& model, const std::vector<const LatentState*>& draws,
                               const ContrastRequest& request, double alpha) {
  const auto G = static_cast<std::size_t>(model.groups());
  const auto M = static_cast<std::size_t>(model.components());
  if (request.g1 >= G || request.g2 >= G || request.m1 >= M || request.m2 >= M)
    throw std::invalid_argument("contrast refers to a group or component that does not exist");
  ContrastSummary out;
  out.request = request;
  out.draws.reserve(draws.size());
  std::size_t positive = 0;
  for (const LatentState* s : draws) {
    const double a = latency_time(s->r(static_cast<Eigen::Index>(request.g1), static_cast<Eigen::Index>(request.m1)),
                                  model.windows[request.m1]);
    const double b = latency_time(s->r(static_cast<Eigen::Index>(request.g2), static_cast<Eigen::Index>(request.m2)),
                                  model.windows[request.m2]);
    out.draws.push_back(a - b);
    if (a - b > 0.0) ++positive;
  }
  out.diff = summarize_values(out.draws, alpha);
  out.prob_positive = static_cast<double>(positive) / static_cast<double>(draws.size());
  return out;
}

CurveSampler::CurveSampler(const Model& model, const Theta& theta)
    : model_(&model), marginal_(model.data.grid.points, theta.tau0, theta.h) {}

Eigen::MatrixXd CurveSampler::paths(Eigen::Index series, const std::vector<const LatentState*>& draws,
                                    const Eigen::VectorXd& points, Rng& rng) const {
  const Eigen::VectorXd& y = model_->data.series[static_cast<std::size_t>(series)].y;
  const PathBasis basis = make_path_basis(marginal_, points);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(draws.size()), points.size());
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const ScaledPosterior post(marginal_, y, draws[d]->t.row(series).transpose(), draws[d]->sigma2);
    out.row(static_cast<Eigen::Index>(d)) = post.sample(basis, 1, rng).row(0);
  }
  return out;
}

Eigen::MatrixXd CurveSampler::mean_curves(Eigen::Index series, const std::vector<const LatentState*>& draws,
                                          const Eigen::VectorXd& points) const {
  const Eigen::VectorXd& y = model_->data.series[static_cast<std::size_t>(series)].y;
  const PathBasis basis = make_path_basis(marginal_, points);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(draws.size()), points.size());
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const ScaledPosterior post(marginal_, y, draws[d]->t.row(series).transpose(), draws[d]->sigma2);
    out.row(static_cast<Eigen::Index>(d)) = post.mean_at(basis).transpose();
  }
  return out;
}

Eigen::VectorXd CurveSampler::mean_curve(Eigen::Index series, const LatentState& state,
                                         const Eigen::VectorXd& points) const {
  const Eigen::VectorXd& y = model_->data.series[static_cast<std::size_t>(series)].y;
  const ScaledPosterior post(marginal_, y, state.t.row(series).transpose(), state.sigma2);
  return post.mean_at(points);
}

Eigen::VectorXd refine_points(const Window& window, double grid_step, int density) {
  const double width = window.b - window.a;
  if (!(width > 0.0)) return Eigen::VectorXd::Constant(1, window.a);
  const double step = grid_step / static_cast<double>(std::max(density, 1));
  const auto count = static_cast<Eigen::Index>(std::max(1.0, std::ceil(width / step - 1e-9)));
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(count + 1, window.a, window.b);
  x(count) = window.b;
  return x;
}

std::string to_string(Orientation o) { return o == Orientation::peak ? "peak" : "dip"; }

std::string to_string(AmplitudeMethod m) {
  switch (m) {
    case AmplitudeMethod::max_peak: return "max-peak";
    case AmplitudeMethod::half_integral: return "half-integral";
    case AmplitudeMethod::mean_window: return "mean-window";
  }
  return "max-peak";
}

Orientation parse_orientation(const std::string& s) {
  if (s == "peak") return Orientation::peak;
  if (s == "dip") return Orientation::dip;
  throw std::invalid_argument("unknown orientation '" + s + "' (expected peak or dip)");
}

AmplitudeMethod parse_amplitude_method(const std::string& s) {
  if (s == "max-peak") return AmplitudeMethod::max_peak;
  if (s == "half-integral") return AmplitudeMethod::half_integral;
  if (s == "mean-window") return AmplitudeMethod::mean_window;
  throw std::invalid_argument("unknown amplitude method '" + s + "'");
}

AmplitudeSamples max_peak(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points, Orientation orientation,
                          const Eigen::VectorXd& baseline) {
  check_paths(paths, points);
  const Eigen::VectorXd base = baseline_row(baseline, paths.rows());
  AmplitudeSamples out;
  out.method = AmplitudeMethod::max_peak;
  out.orientation = orientation;
  out.window = {points(0), points(points.size() - 1)};
  for (Eigen::Index d = 0; d < paths.rows(); ++d) {
    Eigen::Index at = 0;
    const double v = orientation == Orientation::peak ? paths.row(d).maxCoeff(&at) : paths.row(d).minCoeff(&at);
    out.values.push_back(v - base(d));
    out.locations.push_back(points(at));
    out.flagged.push_back(false);
  }
  return out;
}

double interpolate(const Eigen::VectorXd& points, const Eigen::VectorXd& f, double x) {
  const Eigen::Index n = points.size();
  if (n == 1 || x <= points(0)) return f(0);
  if (x >= points(n - 1)) return f(n - 1);
  const auto it = std::upper_bound(points.data(), points.data() + n, x);
  const Eigen::Index j = (it - points.data()) - 1;
  const double w = (x - points(j)) / (points(j + 1) - points(j));
  return (1.0 - w) * f(j) + w * f(j + 1);
}

double half_integral_point(const Eigen::VectorXd& points, const Eigen::VectorXd& f, bool& sign_change) {
  const Eigen::Index n = points.size();
  sign_change = (f.array() > 0.0).any() && (f.array() < 0.0).any();
  if (n == 1) return points(0);
  const double a = points(0);
  const double b = points(n - 1);
  if ((f.array() == 0.0).all()) {
    sign_change = true;
    return 0.5 * (a + b);
  }
  const double target = 0.5 * trapezoid(points, f);
  double cum = 0.0;
  for (Eigen::Index j = 0; j + 1 < n; ++j) {
    const double dx = points(j + 1) - points(j);
    const double f0 = f(j);
    const double slope = (f(j + 1) - f0) / dx;
    // cum + f0 s + slope s^2 / 2 = target for s in [0, dx]
    const double qa = 0.5 * slope;
    const double qb = f0;
    const double qc = cum - target;
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double s) {
      if (s >= -1e-15 * dx && s <= dx * (1.0 + 1e-12)) best = std::min(best, std::clamp(s, 0.0, dx));
    };
    if (std::abs(qa) < 1e-300 || std::abs(qa * dx) < 1e-14 * std::abs(qb)) {
      if (qb != 0.0) consider(-qc / qb);
      else if (qc == 0.0) consider(0.0);
    } else {
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        // numerically stable pair of roots
        const double q = -0.5 * (qb + (qb >= 0.0 ? sq : -sq));
        if (q != 0.0) {
          consider(q / qa);
          consider(qc / q);
        } else {
          consider(0.0);
        }
      }
    }
    if (std::isfinite(best)) return points(j) + best;
    cum += 0.5 * dx * (f0 + f(j + 1));
  }
  return b;
}

AmplitudeSamples half_integral_peak(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points,
                                    const Eigen::VectorXd& baseline) {
  check_paths(paths, points);
  const Eigen::VectorXd base = baseline_row(baseline, paths.rows());
  AmplitudeSamples out;
  out.method = AmplitudeMethod::half_integral;
  out.window = {points(0), points(points.size() - 1)};
  for (Eigen::Index d = 0; d < paths.rows(); ++d) {
    const Eigen::VectorXd f = paths.row(d).transpose();
    bool flag = false;
    const double t = half_integral_point(points, f, flag);
    out.values.push_back(interpolate(points, f, t) - base(d));
    out.locations.push_back(t);
    out.flagged.push_back(flag);
  }
  return out;
}

AmplitudeSamples mean_window_amplitude(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points,
                                       const Eigen::VectorXd& baseline, double min_width) {
  check_paths(paths, points);
  const Eigen::VectorXd base = baseline_row(baseline, paths.rows());
  AmplitudeSamples out;
  out.method = AmplitudeMethod::mean_window;
  const double a = points(0);
  const double b = points(points.size() - 1);
  out.window = {a, b};
  const bool narrow = !(b - a > 0.0) || b - a < min_width;
  Eigen::Index nearest = 0;
  (points.array() - 0.5 * (a + b)).abs().minCoeff(&nearest);
  for (Eigen::Index d = 0; d < paths.rows(); ++d) {
    const Eigen::VectorXd f = paths.row(d).transpose();
    const double v = narrow ? f(nearest) : trapezoid(points, f) / (b - a);
    out.values.push_back(v - base(d));
    out.locations.push_back(narrow ? points(nearest) : 0.5 * (a + b));
    out.flagged.push_back(false);
  }
  return out;
}

Window latency_range(const Model& model, const std::vector<const LatentState*>& draws, Eigen::Index series,
                     Eigen::Index m, WindowSource source) {
  if (draws.empty()) throw std::invalid_argument("latency range needs at least one draw");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const auto g = static_cast<Eigen::Index>(model.data.series[static_cast<std::size_t>(series)].group);
  for (const LatentState* s : draws) {
    const double v = source == WindowSource::subject
                         ? s->t(series, m)
                         : latency_time(s->r(g, m), model.windows[static_cast<std::size_t>(m)]);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

AmplitudeSamples amplitude_samples(const Model& model, const CurveSampler& sampler,
                                   const std::vector<const LatentState*>& draws, Eigen::Index series,
                                   const AmplitudeRequest& request, const std::vector<Orientation>& orientations,
                                   Rng& rng) {
  const auto M = static_cast<std::size_t>(model.components());
  if (request.component >= M) throw std::invalid_argument("amplitude request for a missing component");
  const double step = model.data.grid.step();
  Eigen::VectorXd baseline = Eigen::VectorXd::Constant(1, request.baseline.constant);
  std::string baseline_label = shortest(request.baseline.constant);
  if (request.baseline.component) {
    const std::size_t k = *request.baseline.component;
    if (k >= M || k >= orientations.size()) throw std::invalid_argument("baseline component does not exist");
    const Window wk = latency_range(model, draws, series, static_cast<Eigen::Index>(k), request.window_source);
    const Eigen::VectorXd pk = refine_points(wk, step);
    const AmplitudeSamples ref =
        max_peak(sampler.paths(series, draws, pk, rng), pk, orientations[k], Eigen::VectorXd::Zero(1));
    baseline = Eigen::Map<const Eigen::VectorXd>(ref.values.data(), static_cast<Eigen::Index>(ref.values.size()));
    baseline.array() += request.baseline.constant;
    baseline_label = "component " + std::to_string(k + 1);
  }

  Window window;
  if (request.method == AmplitudeMethod::mean_window && request.fixed_window) {
    window = *request.fixed_window;
  } else {
    window = latency_range(model, draws, series, static_cast<Eigen::Index>(request.component), request.window_source);
  }
  const Eigen::VectorXd points = refine_points(window, step);
  const Eigen::MatrixXd paths = sampler.paths(series, draws, points, rng);
  AmplitudeSamples out;
  switch (request.method) {
    case AmplitudeMethod::max_peak: out = max_peak(paths, points, request.orientation, baseline); break;
    case AmplitudeMethod::half_integral: out = half_integral_peak(paths, points, baseline); break;
    case AmplitudeMethod::mean_window: out = mean_window_amplitude(paths, points, baseline, step); break;
  }
  out.orientation = request.orientation;
  out.window = window;
  out.baseline = baseline_label;
  return out;
}

CurveBand curve_band(const Eigen::MatrixXd& paths, const Eigen::VectorXd& points, double alpha) {
  check_paths(paths, points);
  if (paths.rows() == 0) throw std::invalid_argument("curve band needs at least one path");
  CurveBand band{points, Eigen::VectorXd(points.size()), Eigen::VectorXd(points.size()),
                 Eigen::VectorXd(points.size())};
  std::vector<double> col(static_cast<std::size_t>(paths.rows()));
  for (Eigen::Index j = 0; j < points.size(); ++j) {
    for (Eigen::Index d = 0; d < paths.rows(); ++d) col[static_cast<std::size_t>(d)] = paths(d, j);
    band.mean(j) = paths.col(j).mean();
    band.lo(j) = quantile(col, alpha / 2.0);
    band.hi(j) = quantile(col, 1.0 - alpha / 2.0);
  }
  return band;
}

double split_rhat(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("R-hat needs at least two chains");
  const std::size_t len = chains.front().size();
  for (const auto& c : chains)
    if (c.size() != len) throw std::invalid_argument("R-hat needs chains of equal length");
  if (len < 4) throw std::invalid_argument("R-hat needs chains of length at least 4");
  const std::size_t half = len / 2;
  std::vector<double> means;
  std::vector<double> vars;
  for (const auto& c : chains) {
    for (std::size_t part = 0; part < 2; ++part) {
      const std::size_t begin = part == 0 ? 0 : len - half;
      double m = 0.0;
      for (std::size_t i = 0; i < half; ++i) m += c[begin + i];
      m /= static_cast<double>(half);
      double v = 0.0;
      for (std::size_t i = 0; i < half; ++i) v += (c[begin + i] - m) * (c[begin + i] - m);
      means.push_back(m);
      vars.push_back(v / static_cast<double>(half - 1));
    }
  }
  const double k = static_cast<double>(means.size());
  const double n = static_cast<double>(half);
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / k;
  double b = 0.0;
  for (double m : means) b += (m - grand) * (m - grand);
  b *= n / (k - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / k;
  if (w <= 0.0) return b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

std::vector<std::string> parameter_names(const Model& model) {
  std::vector<std::string> names;
  const Eigen::Index M = model.components();
  for (Eigen::Index m = 0; m < M; ++m)
    for (std::size_t i = 0; i < model.data.series_count(); ++i)
      names.push_back("t_" + std::to_string(model.data.series[i].group + 1) + "_" +
                      std::to_string(model.data.position_in_group(i)) + "_" + std::to_string(m + 1));
  for (Eigen::Index m = 0; m < M; ++m) names.push_back("beta0_" + std::to_string(m + 1));
  for (Eigen::Index p = 0; p < model.columns(); ++p)
    for (Eigen::Index m = 0; m < M; ++m) names.push_back("beta_" + std::to_string(p + 1) + "_" + std::to_string(m + 1));
  for (Eigen::Index g = 0; g < model.groups(); ++g)
    for (Eigen::Index m = 0; m < M; ++m) names.push_back("eta_" + std::to_string(g + 1) + "_" + std::to_string(m + 1));
  names.push_back("sigma2");
  for (Eigen::Index g = 0; g < model.groups(); ++g)
    for (Eigen::Index m = 0; m < M; ++m) names.push_back("r_" + std::to_string(g + 1) + "_" + std::to_string(m + 1));
  return names;
}

Eigen::VectorXd flatten(const Model& model, const LatentState& s) {
  const Eigen::Index M = model.components();
  const Eigen::Index S = model.series();
  const Eigen::Index P = model.columns();
  const Eigen::Index G = model.groups();
  Eigen::VectorXd v(S * M + M + P * M + G * M + 1 + G * M);
  Eigen::Index k = 0;
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index i = 0; i < S; ++i) v(k++) = s.t(i, m);
  for (Eigen::Index m = 0; m < M; ++m) v(k++) = s.beta.beta0(m);
  for (Eigen::Index p = 0; p < P; ++p)
    for (Eigen::Index m = 0; m < M; ++m) v(k++) = s.beta.beta(p, m);
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index m = 0; m < M; ++m) v(k++) = s.eta(g, m);
  v(k++) = s.sigma2;
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index m = 0; m < M; ++m) v(k++) = s.r(g, m);
  return v;
}

LatentState unflatten(const Model& model, const Eigen::VectorXd& v) {
  const Eigen::Index M = model.components();
  const Eigen::Index S = model.series();
  const Eigen::Index P = model.columns();
  const Eigen::Index G = model.groups();
  if (v.size() != S * M + M + P * M + G * M + 1 + G * M)
    throw std::invalid_argument("parameter vector does not match the model");
  LatentState s;
  s.t.resize(S, M);
  s.beta = AnovaCoefficients::zero(P, M);
  s.eta.resize(G, M);
  s.r.resize(G, M);
  Eigen::Index k = 0;
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index i = 0; i < S; ++i) s.t(i, m) = v(k++);
  for (Eigen::Index m = 0; m < M; ++m) s.beta.beta0(m) = v(k++);
  for (Eigen::Index p = 0; p < P; ++p)
    for (Eigen::Index m = 0; m < M; ++m) s.beta.beta(p, m) = v(k++);
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index m = 0; m < M; ++m) s.eta(g, m) = v(k++);
  s.sigma2 = v(k++);
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index m = 0; m < M; ++m) s.r(g, m) = v(k++);
  return s;
}

std::vector<RhatEntry> rhat_table(const Model& model, const std::vector<PosteriorChain>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("R-hat needs at least two chains; rerun with more chains");
  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) len = std::min(len, c.draws.size());
  const std::vector<std::string> names = parameter_names(model);
  std::vector<std::vector<Eigen::VectorXd>> flat(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t d = 0; d < len; ++d) flat[c].push_back(flatten(model, chains[c].draws[d]));
  std::vector<RhatEntry> out;
  std::vector<std::vector<double>> per(chains.size(), std::vector<double>(len));
  for (std::size_t j = 0; j < names.size(); ++j) {
    for (std::size_t c = 0; c < chains.size(); ++c)
      for (std::size_t d = 0; d < len; ++d) per[c][d] = flat[c][d](static_cast<Eigen::Index>(j));
    out.push_back({names[j], split_rhat(per)});
  }
  return out;
}

}  // namespace slam
