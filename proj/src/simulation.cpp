#include "slam/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace slam {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

TimeGrid unit_grid(int n) { return TimeGrid{Eigen::VectorXd::LinSpaced(n, 0.0, 1.0)}; }

Series noisy_series(std::size_t group, int subject, const Eigen::VectorXd& curve, double sigma, Rng& rng) {
  Series s{group, std::to_string(subject), curve};
  std::normal_distribution<double> noise(0.0, sigma);
  for (Eigen::Index i = 0; i < s.y.size(); ++i) s.y(i) += noise(rng);
  return s;
}

// Smallest x in window congruent to x0 modulo 1.
double wrap_into(double x0, const Window& w) {
  double x = x0 - std::floor(x0 - w.a);
  if (!w.contains(x)) throw std::runtime_error("closed-form stationary point falls outside its window");
  return x;
}

}  // namespace

std::string to_string(GeneratorKind kind) {
  return kind == GeneratorKind::sine_cosine ? "sine-cosine" : "model-based";
}

GeneratorKind parse_generator_kind(const std::string& s) {
  if (s == "sine-cosine") return GeneratorKind::sine_cosine;
  if (s == "model-based") return GeneratorKind::model_based;
  throw std::invalid_argument("unknown generator kind '" + s + "' (expected sine-cosine or model-based)");
}

void GeneratorSpec::validate() const {
  if (n < 3) throw std::invalid_argument("generator needs n >= 3");
  if (subjects < 1) throw std::invalid_argument("generator needs at least one subject per group");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("noise sd must be positive");
  if (kind == GeneratorKind::model_based) {
    if (!beta0.allFinite() || !beta1.allFinite()) throw std::invalid_argument("true coefficients must be finite");
    if (!(eta > 0.0)) throw std::invalid_argument("true eta must be positive");
    if (windows.size() != 2) throw std::invalid_argument("model-based generator uses exactly two windows");
    if (!(curvature > 0.0)) throw std::invalid_argument("curvature must be positive");
  }
}

double sine_curve(double x, int s) { return -2.0 * std::sin(two_pi * x + s / 15.0 - 0.3); }
double sine_slope(double x, int s) { return -2.0 * two_pi * std::cos(two_pi * x + s / 15.0 - 0.3); }
double cosine_curve(double x, int s) { return std::cos(two_pi * x + s / 10.0 + 1.2) - 3.0 * x; }
double cosine_slope(double x, int s) { return -two_pi * std::sin(two_pi * x + s / 10.0 + 1.2) - 3.0; }

double model_based_curve(double x, double t1, double t2, double boundary, double c) {
  if (x < boundary) return c * (x - t1) * (x - t1);
  return c * (-(x - t2) * (x - t2) + (boundary - t1) * (boundary - t1) + (boundary - t2) * (boundary - t2));
}

double stationary_point(const std::function<double(double)>& slope, const Window& window, Orientation kind) {
  constexpr int steps = 4000;
  const double h = window.width() / steps;
  double lo = window.a;
  double f_lo = slope(lo);
  for (int k = 1; k <= steps; ++k) {
    const double hi = k == steps ? window.b : window.a + k * h;
    const double f_hi = slope(hi);
    // dip: slope goes from negative to positive; peak: the reverse
    const bool crossing = kind == Orientation::dip ? (f_lo < 0.0 && f_hi >= 0.0) : (f_lo > 0.0 && f_hi <= 0.0);
    if (crossing) {
      double a = lo;
      double b = hi;
      while (b - a > 1e-12) {
        const double mid = 0.5 * (a + b);
        const double fm = slope(mid);
        const bool left = kind == Orientation::dip ? fm < 0.0 : fm > 0.0;
        (left ? a : b) = mid;
      }
      return 0.5 * (a + b);
    }
    lo = hi;
    f_lo = f_hi;
  }
  throw std::runtime_error("no stationary point of the requested kind in the window");
}

Simulated generate_sine_cosine(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != GeneratorKind::sine_cosine) throw std::invalid_argument("generator spec is not sine-cosine");
  Simulated sim;
  sim.data.grid = unit_grid(spec.n);
  sim.data.groups = {"sine", "cosine"};
  sim.windows = SearchWindows{{{0.0, 0.5}, {0.5, 1.0}}};
  const Eigen::VectorXd& x = sim.data.grid.points;
  const auto S = static_cast<Eigen::Index>(spec.subjects);
  GroundTruth& truth = sim.truth;
  truth.curves.resize(2 * S, spec.n);
  truth.latency.resize(2 * S, 2);
  truth.amplitude.resize(2 * S, 2);
  truth.orientation = {Orientation::dip, Orientation::peak};
  Rng rng = make_stream(seed, StreamKind::data);

  for (Eigen::Index g = 0; g < 2; ++g) {
    for (int s = 1; s <= spec.subjects; ++s) {
      const Eigen::Index i = g * S + (s - 1);
      auto curve = [&](double v) { return g == 0 ? sine_curve(v, s) : cosine_curve(v, s); };
      for (Eigen::Index k = 0; k < x.size(); ++k) truth.curves(i, k) = curve(x(k));
      for (Eigen::Index m = 0; m < 2; ++m) {
        const Window& w = sim.windows[static_cast<std::size_t>(m)];
        double t = 0.0;
        if (g == 0) {
          // -2 sin(phi) has its minimum at phi = pi/2 and maximum at 3 pi/2
          const double phi = m == 0 ? std::numbers::pi / 2.0 : 1.5 * std::numbers::pi;
          t = wrap_into((phi + 0.3 - s / 15.0) / two_pi, w);
        } else {
          t = stationary_point([s](double v) { return cosine_slope(v, s); }, w, truth.orientation[m]);
        }
        truth.latency(i, m) = t;
        truth.amplitude(i, m) = curve(t);
      }
      sim.data.series.push_back(noisy_series(static_cast<std::size_t>(g), s, truth.curves.row(i).transpose(),
                                             spec.sigma, rng));
    }
  }
  return sim;
}

Simulated generate_model_based(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != GeneratorKind::model_based) throw std::invalid_argument("generator spec is not model-based");
  Simulated sim;
  sim.data.grid = unit_grid(spec.n);
  sim.data.groups = {"g1", "g2"};
  sim.windows = spec.windows;
  const Eigen::VectorXd& x = sim.data.grid.points;
  const auto S = static_cast<Eigen::Index>(spec.subjects);
  const Link link(spec.link);
  const double boundary = spec.windows[0].b;

  GroundTruth& truth = sim.truth;
  truth.orientation = {Orientation::dip, Orientation::peak};
  truth.r.resize(2, 2);
  for (Eigen::Index m = 0; m < 2; ++m) {
    truth.r(0, m) = link.inverse(spec.beta0(m));
    truth.r(1, m) = link.inverse(spec.beta0(m) + spec.beta1(m));
  }
  truth.curves.resize(2 * S, spec.n);
  truth.latency.resize(2 * S, 2);
  truth.amplitude.resize(2 * S, 2);

  Rng t_rng = make_stream(seed, StreamKind::data, {1});
  Rng noise_rng = make_stream(seed, StreamKind::data);
  for (Eigen::Index g = 0; g < 2; ++g) {
    for (int s = 1; s <= spec.subjects; ++s) {
      const Eigen::Index i = g * S + (s - 1);
      for (Eigen::Index m = 0; m < 2; ++m) {
        const Window& w = spec.windows[static_cast<std::size_t>(m)];
        truth.latency(i, m) = gbeta_sample(GeneralBeta{truth.r(g, m), spec.eta, w.a, w.b}, t_rng);
      }
      const double t1 = truth.latency(i, 0);
      const double t2 = truth.latency(i, 1);
      for (Eigen::Index k = 0; k < x.size(); ++k)
        truth.curves(i, k) = model_based_curve(x(k), t1, t2, boundary, spec.curvature);
      truth.amplitude(i, 0) = model_based_curve(t1, t1, t2, boundary, spec.curvature);
      truth.amplitude(i, 1) = model_based_curve(t2, t1, t2, boundary, spec.curvature);
      sim.data.series.push_back(noisy_series(static_cast<std::size_t>(g), s, truth.curves.row(i).transpose(),
                                             spec.sigma, noise_rng));
    }
  }
  return sim;
}

Simulated generate(const GeneratorSpec& spec, std::uint64_t seed) {
  return spec.kind == GeneratorKind::sine_cosine ? generate_sine_cosine(spec, seed)
                                                 : generate_model_based(spec, seed);
}

Model simulated_model(const Simulated& sim, LinkKind link) {
  FactorDesign design = encode_design(sim.data, DesignKind::one_way);
  Priors priors = default_priors(design, sim.windows.size());
  return make_model(sim.data, sim.windows, std::move(design), Link(link), std::move(priors));
}

Estimates naive_estimates(const Simulated& sim) {
  const auto N = static_cast<Eigen::Index>(sim.data.series_count());
  const auto M = static_cast<Eigen::Index>(sim.windows.size());
  const Eigen::VectorXd& x = sim.data.grid.points;
  Estimates out{Eigen::MatrixXd(N, M), Eigen::MatrixXd(N, M)};
  for (Eigen::Index i = 0; i < N; ++i) {
    const Eigen::VectorXd& y = sim.data.series[static_cast<std::size_t>(i)].y;
    for (Eigen::Index m = 0; m < M; ++m) {
      const Window& w = sim.windows[static_cast<std::size_t>(m)];
      const bool peak = sim.truth.orientation[static_cast<std::size_t>(m)] == Orientation::peak;
      Eigen::Index best = -1;
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        if (x(k) < w.a || x(k) > w.b) continue;
        if (best < 0 || (peak ? y(k) > y(best) : y(k) < y(best))) best = k;
      }
      if (best < 0) throw std::runtime_error("window contains no grid point");
      out.latency(i, m) = x(best);
      out.amplitude(i, m) = y(best);
    }
  }
  return out;
}

double group_rmse(const WaveformDataset& data, const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth,
                  std::size_t g) {
  double ss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.series_count(); ++i) {
    if (data.series[i].group != g) continue;
    const auto row = static_cast<Eigen::Index>(i);
    ss += (estimate.row(row) - truth.row(row)).squaredNorm();
    count += static_cast<std::size_t>(truth.cols());
  }
  if (count == 0) throw std::invalid_argument("group has no series");
  return std::sqrt(ss / static_cast<double>(count));
}

SlamEstimates slam_estimates(const Model& model, const McemResult& fit, const std::vector<Orientation>& orientation,
                             std::uint64_t seed, int max_draws) {
  const auto N = model.series();
  const auto M = model.components();
  const std::vector<const LatentState*> pooled = pooled_draws(fit.chains);
  const std::vector<const LatentState*> thinned = thin_draws(pooled, max_draws);
  const LatencySummary lat = latency_summary(model, pooled);
  const CurveSampler sampler(model, fit.trace.theta);

  SlamEstimates out{{Eigen::MatrixXd(N, M), Eigen::MatrixXd(N, M)}, {Eigen::MatrixXd(N, M), Eigen::MatrixXd(N, M)}};
  for (Eigen::Index i = 0; i < N; ++i) {
    const Series& s = model.data.series[static_cast<std::size_t>(i)];
    for (Eigen::Index m = 0; m < M; ++m) {
      const IntervalSummary& t = lat.subject[static_cast<std::size_t>(i)][static_cast<std::size_t>(m)];
      out.mean.latency(i, m) = t.mean;
      out.median.latency(i, m) = t.median;
      AmplitudeRequest req;
      req.component = static_cast<std::size_t>(m);
      req.method = AmplitudeMethod::max_peak;
      req.orientation = orientation[static_cast<std::size_t>(m)];
      Rng rng = make_stream(seed, StreamKind::paths,
                            {hash_label(model.data.groups[s.group]), hash_label(s.subject),
                             static_cast<std::uint64_t>(m)});
      const AmplitudeSamples z = amplitude_samples(model, sampler, thinned, i, req, orientation, rng);
      const IntervalSummary zs = summarize_values(z.values);
      out.mean.amplitude(i, m) = zs.mean;
      out.median.amplitude(i, m) = zs.median;
    }
  }
  return out;
}

std::vector<TableRow> summarize_replicates(const std::vector<ReplicateRow>& detail) {
  std::map<std::pair<std::string, std::string>, std::vector<const ReplicateRow*>> cells;
  std::vector<std::pair<std::string, std::string>> order;
  for (const ReplicateRow& r : detail) {
    const auto key = std::make_pair(r.method, r.group);
    if (!cells.count(key)) order.push_back(key);
    if (!r.failed) cells[key].push_back(&r);
    else cells[key];
  }
  auto mean_sd = [](const std::vector<double>& v) {
    if (v.empty()) return std::make_pair(std::nan(""), std::nan(""));
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::make_pair(mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0);
  };
  std::vector<TableRow> table;
  for (const auto& key : order) {
    std::vector<double> lat;
    std::vector<double> amp;
    for (const ReplicateRow* r : cells[key]) {
      lat.push_back(r->latency_rmse);
      amp.push_back(r->amplitude_rmse);
    }
    TableRow row;
    row.method = key.first;
    row.group = key.second;
    std::tie(row.latency_rmse_mean, row.latency_rmse_sd) = mean_sd(lat);
    std::tie(row.amplitude_rmse_mean, row.amplitude_rmse_sd) = mean_sd(amp);
    row.replicates = static_cast<int>(lat.size());
    table.push_back(row);
  }
  return table;
}

ReplicateReport run_replicates(const GeneratorSpec& spec, const McemConfig& fit, const ReplicateOptions& options,
                               const ReplicateProgress& progress) {
  if (options.replicates < 1) throw std::invalid_argument("need at least one replicate");
  spec.validate();
  fit.validate();
  const int R = options.replicates;
  const int workers = std::clamp(options.threads, 1, R);
  const int inner_threads = std::max(1, options.threads / workers);
  static const std::vector<std::string> methods{"slam-mean", "slam-median", "naive"};

  std::vector<std::vector<ReplicateRow>> rows(static_cast<std::size_t>(R));
  std::atomic<int> next{0};
  std::mutex progress_mutex;

  auto work = [&] {
    for (int r = next++; r < R; r = next++) {
      const std::uint64_t seed = options.master_seed + static_cast<std::uint64_t>(r);
      std::vector<ReplicateRow>& out = rows[static_cast<std::size_t>(r)];
      std::vector<std::string> groups{"sine", "cosine"};
      bool ok = true;
      try {
        const Simulated sim = generate(spec, seed);
        groups = sim.data.groups;
        const Model model = simulated_model(sim, spec.link);
        McemConfig cfg = fit;
        cfg.seed = seed;
        cfg.threads = inner_threads;
        const McemResult result = run_mcem(model, cfg);
        const SlamEstimates slam = slam_estimates(model, result, sim.truth.orientation, seed, options.max_draws);
        const Estimates naive = naive_estimates(sim);
        const Estimates* est[] = {&slam.mean, &slam.median, &naive};
        for (std::size_t k = 0; k < methods.size(); ++k) {
          for (std::size_t g = 0; g < sim.data.group_count(); ++g) {
            ReplicateRow row;
            row.replicate = r;
            row.seed = seed;
            row.method = methods[k];
            row.group = sim.data.groups[g];
            row.latency_rmse = group_rmse(sim.data, est[k]->latency, sim.truth.latency, g);
            row.amplitude_rmse = group_rmse(sim.data, est[k]->amplitude, sim.truth.amplitude, g);
            row.converged = result.trace.converged;
            row.em_iterations = static_cast<int>(result.trace.iterations.size());
            out.push_back(row);
          }
        }
      } catch (const std::exception& e) {
        ok = false;
        out.clear();
        for (const std::string& method : methods) {
          for (const std::string& group : groups) {
            ReplicateRow row;
            row.replicate = r;
            row.seed = seed;
            row.method = method;
            row.group = group;
            row.latency_rmse = std::nan("");
            row.amplitude_rmse = std::nan("");
            row.failed = true;
            row.message = e.what();
            out.push_back(row);
          }
        }
      }
      if (progress) {
        const std::lock_guard<std::mutex> lock(progress_mutex);
        progress(r, ok);
      }
    }
  };

  std::vector<std::thread> pool;
  for (int k = 1; k < workers; ++k) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  ReplicateReport report;
  for (auto& block : rows) {
    if (!block.empty() && block.front().failed) ++report.failures;
    for (auto& row : block) report.detail.push_back(std::move(row));
  }
  report.table = summarize_replicates(report.detail);
  return report;
}

}  // namespace slam
