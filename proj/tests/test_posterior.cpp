#include "slam/posterior.hpp"
#include "slam/simulation.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace slam;
using doctest::Approx;

namespace {

Eigen::VectorXd v(std::initializer_list<double> xs) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) out(i++) = x;
  return out;
}

// Short chains at a known theta on a small sine-cosine set.
struct Fixture {
  Simulated sim;
  Model model;
  Theta theta{18.7, 0.41};
  std::vector<PosteriorChain> chains;

  explicit Fixture(double sigma = 0.25, int subjects = 2) {
    GeneratorSpec spec;
    spec.subjects = subjects;
    spec.sigma = sigma;
    sim = generate_sine_cosine(spec, 4);
    model = simulated_model(sim);
    theta.tau0 *= 0.25 / sigma;
    McemConfig cfg;
    cfg.seed = 9;
    cfg.final_chains = {2, 1100, 100, 5};
    chains = run_final_chains(model, theta, cfg);
  }
};

}  // namespace

TEST_CASE("quantiles and interval summaries") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.25) == Approx(1.75));
  CHECK(quantile({5.0}, 0.9) == 5.0);
  const auto one = summarize_values({2.5});
  CHECK(one.mean == 2.5);
  CHECK(one.median == 2.5);
  CHECK(one.lo == 2.5);
  CHECK(one.hi == 2.5);
  CHECK(one.sd == 0.0);
  const auto same = summarize_values(std::vector<double>(50, -1.0));
  CHECK(same.lo == same.hi);
  CHECK_THROWS(summarize_values({}));
  std::vector<double> xs;
  for (int i = 0; i <= 100; ++i) xs.push_back(i);
  const auto s = summarize_values(xs, 0.1);
  CHECK(s.lo == Approx(5.0));
  CHECK(s.hi == Approx(95.0));
  CHECK(s.median == 50.0);
}

TEST_CASE("thinning keeps evenly spaced draws") {
  std::vector<LatentState> states(10);
  std::vector<const LatentState*> all;
  for (auto& s : states) all.push_back(&s);
  const auto t = thin_draws(all, 4);
  REQUIRE(t.size() == 4);
  CHECK(t[0] == &states[0]);
  CHECK(t[1] == &states[2]);
  CHECK(t[3] == &states[7]);
  CHECK(thin_draws(all, 0).size() == 10);
  CHECK(thin_draws(all, 20).size() == 10);
}

TEST_CASE("max peak") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(41, 0.3, 0.7);
  Eigen::MatrixXd paths(2, 41);
  paths.row(0).setConstant(1.7);
  for (int i = 0; i < 41; ++i) paths(1, i) = -std::pow(x(i) - 0.5, 2);
  const auto peak = max_peak(paths, x, Orientation::peak, Eigen::VectorXd::Constant(1, 0.2));
  CHECK(peak.values[0] == Approx(1.5));
  CHECK(peak.values[1] == Approx(-0.2));
  CHECK(peak.locations[1] == Approx(0.5));
  const auto dip = max_peak(paths, x, Orientation::dip, v({0.0, 0.0}));
  CHECK(dip.values[1] == Approx(-0.04));
  CHECK(dip.method == AmplitudeMethod::max_peak);
}

TEST_CASE("half-integral peak") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(101, 0.0, 1.0);
  bool flag = true;
  CHECK(half_integral_point(x, Eigen::VectorXd::Constant(101, 3.0), flag) == Approx(0.5));
  CHECK_FALSE(flag);
  CHECK(half_integral_point(x, x, flag) == Approx(std::sqrt(0.5)).epsilon(1e-12));
  Eigen::VectorXd sym(101);
  for (int i = 0; i < 101; ++i) sym(i) = 1.0 + std::exp(-std::pow(x(i) - 0.5, 2) / 0.02);
  CHECK(half_integral_point(x, sym, flag) == Approx(0.5).epsilon(1e-12));

  Eigen::MatrixXd paths(1, 101);
  paths.row(0) = x.transpose();
  const auto s = half_integral_peak(paths, x, Eigen::VectorXd::Zero(1));
  CHECK(s.values[0] == Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(s.locations[0] == Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK_FALSE(s.flagged[0]);

  const Eigen::VectorXd wave = (2 * std::numbers::pi * x.array()).sin();
  half_integral_point(x, wave, flag);
  CHECK(flag);
  const double mid = half_integral_point(x, Eigen::VectorXd::Zero(101), flag);
  CHECK(mid == 0.5);
  CHECK(flag);
}

TEST_CASE("window mean amplitude") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(11, 0.0, 1.0);
  Eigen::MatrixXd paths(2, 11);
  paths.row(0).setConstant(2.0);
  paths.row(1) = x.transpose();
  const auto s = mean_window_amplitude(paths, x, Eigen::VectorXd::Constant(1, 0.5));
  CHECK(s.values[0] == Approx(1.5));
  CHECK(s.values[1] == Approx(0.0).epsilon(1e-12));
  const Eigen::VectorXd narrow = Eigen::VectorXd::LinSpaced(3, 0.40, 0.401);
  Eigen::MatrixXd p(1, 3);
  p << 1.0, 2.0, 3.0;
  CHECK(mean_window_amplitude(p, narrow, Eigen::VectorXd::Zero(1), 0.01).values[0] == 2.0);
}

TEST_CASE("amplitude methods agree on constants and are ordered") {
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(51, 0.2, 0.6);
  Eigen::MatrixXd c(1, 51);
  c.setConstant(-0.8);
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 0.1);
  const double mp = max_peak(c, x, Orientation::peak, b).values[0];
  CHECK(mp == Approx(-0.9));
  CHECK(half_integral_peak(c, x, b).values[0] == Approx(mp));
  CHECK(mean_window_amplitude(c, x, b).values[0] == Approx(mp));

  Rng rng(3);
  std::normal_distribution<double> z;
  Eigen::MatrixXd r(30, 51);
  for (auto& e : r.reshaped()) e = z(rng);
  const auto hi = max_peak(r, x, Orientation::peak, b);
  const auto lo = max_peak(r, x, Orientation::dip, b);
  const auto mean = mean_window_amplitude(r, x, b);
  for (int d = 0; d < 30; ++d) {
    CHECK(hi.values[d] >= mean.values[d]);
    CHECK(mean.values[d] >= lo.values[d]);
  }
}

TEST_CASE("interpolation and refined points") {
  const Eigen::VectorXd x = v({0.0, 1.0, 3.0});
  const Eigen::VectorXd f = v({0.0, 2.0, 0.0});
  CHECK(interpolate(x, f, 0.5) == Approx(1.0));
  CHECK(interpolate(x, f, 2.0) == Approx(1.0));
  const Eigen::VectorXd p = refine_points(Window{0.2, 0.4}, 0.1, 10);
  CHECK(p(0) == 0.2);
  CHECK(p(p.size() - 1) == Approx(0.4));
  CHECK(p.size() == 21);
  CHECK(refine_points(Window{0.3, 0.3}, 0.1).size() == 1);
}

TEST_CASE("enum names round trip") {
  for (auto o : {Orientation::peak, Orientation::dip}) CHECK(parse_orientation(to_string(o)) == o);
  for (auto m : {AmplitudeMethod::max_peak, AmplitudeMethod::half_integral, AmplitudeMethod::mean_window})
    CHECK(parse_amplitude_method(to_string(m)) == m);
  CHECK(to_string(AmplitudeMethod::half_integral) == "half-integral");
  CHECK_THROWS(parse_orientation("up"));
}

TEST_CASE("split R-hat") {
  Rng rng(1);
  std::normal_distribution<double> z;
  std::vector<std::vector<double>> iid(4, std::vector<double>(10000));
  for (auto& c : iid)
    for (auto& x : c) x = z(rng);
  const double r = split_rhat(iid);
  CHECK(r < 1.01);
  CHECK(r > 0.99);
  std::vector<std::vector<double>> apart(2, std::vector<double>(1000));
  for (int k = 0; k < 2; ++k)
    for (auto& x : apart[k]) x = 10.0 * k + z(rng);
  CHECK(split_rhat(apart) > 1.1);
  auto perm = iid;
  std::swap(perm[0], perm[3]);
  CHECK(split_rhat(perm) == Approx(r).epsilon(1e-12));
  CHECK_THROWS(split_rhat({iid[0]}));
  CHECK_THROWS(split_rhat({{1.0, 2.0, 3.0, 4.0}, {1.0, 2.0}}));
  // A trend inside each chain is caught by the split.
  std::vector<std::vector<double>> trend(2, std::vector<double>(1000));
  for (auto& c : trend)
    for (int i = 0; i < 1000; ++i) c[i] = i / 100.0 + 0.1 * z(rng);
  CHECK(split_rhat(trend) > 1.1);
}

TEST_CASE("curve band") {
  const Eigen::VectorXd x = v({0.0, 0.5, 1.0});
  Eigen::MatrixXd one(1, 3);
  one << 1.0, -2.0, 0.5;
  const auto b = curve_band(one, x);
  CHECK(b.lo == one.row(0).transpose());
  CHECK(b.hi == one.row(0).transpose());
  CHECK(b.mean == one.row(0).transpose());
}

TEST_CASE("summaries over fitted chains") {
  const Fixture fx;
  const auto pooled = pooled_draws(fx.chains);
  REQUIRE(pooled.size() == 400);

  SUBCASE("latency summary") {
    const auto lat = latency_summary(fx.model, pooled);
    REQUIRE(lat.subject.size() == 4);
    int misses = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (int m = 0; m < 2; ++m) {
        const auto& s = lat.subject[i][m];
        CHECK(s.lo <= s.median);
        CHECK(s.median <= s.hi);
        const double truth = fx.sim.truth.latency(static_cast<Eigen::Index>(i), m);
        misses += (truth < s.lo || truth > s.hi) ? 1 : 0;
        // the sine curves are sharply identified even on this small set
        if (i < 2) CHECK(std::abs(s.mean - truth) < 0.03);
      }
    CHECK(misses <= 2);
    CHECK(lat.group_time[0][0].mean == Approx(latency_time(lat.group_r[0][0].mean, fx.model.windows[0])).epsilon(0.05));
  }

  SUBCASE("degenerate chain") {
    std::vector<const LatentState*> same(5, pooled.front());
    const auto lat = latency_summary(fx.model, same);
    CHECK(lat.subject[0][0].lo == lat.subject[0][0].hi);
    CHECK(lat.subject[0][0].mean == pooled.front()->t(0, 0));
  }

  SUBCASE("contrasts") {
    const auto self = group_contrast(fx.model, pooled, {0, 0, 0, 0});
    for (double d : self.draws) CHECK(d == 0.0);
    const auto ab = group_contrast(fx.model, pooled, {1, 0, 0, 0});
    const auto ba = group_contrast(fx.model, pooled, {0, 0, 1, 0});
    for (std::size_t d = 0; d < ab.draws.size(); ++d) CHECK(ab.draws[d] == -ba.draws[d]);
    CHECK(ab.prob_positive + ba.prob_positive <= 1.0 + 1e-12);
    const auto lag = group_contrast(fx.model, pooled, {0, 1, 0, 0});
    CHECK(lag.prob_positive == 1.0);

    Model shifted = fx.model;
    for (auto& w : shifted.windows.windows) w = Window{w.a + 5.0, w.b + 5.0};
    const auto sh = group_contrast(shifted, pooled, {1, 0, 0, 0});
    CHECK(sh.prob_positive == ab.prob_positive);
    CHECK(sh.diff.mean == Approx(ab.diff.mean).epsilon(1e-9));
  }

  SUBCASE("parameter vectors round trip") {
    const auto names = parameter_names(fx.model);
    const Eigen::VectorXd flat = flatten(fx.model, *pooled[7]);
    CHECK(static_cast<std::size_t>(flat.size()) == names.size());
    CHECK(names.front() == "t_1_1_1");
    const LatentState back = unflatten(fx.model, flat);
    CHECK(back.t == pooled[7]->t);
    CHECK(back.sigma2 == pooled[7]->sigma2);
    CHECK(back.beta.beta == pooled[7]->beta.beta);
    CHECK(back.eta == pooled[7]->eta);
    const auto table = rhat_table(fx.model, fx.chains);
    CHECK(table.size() == names.size());
    for (const auto& e : table) CHECK(std::isfinite(e.rhat));
  }

  SUBCASE("amplitudes and bands") {
    const CurveSampler sampler(fx.model, fx.theta);
    const auto few = thin_draws(pooled, 100);
    Rng rng(5);
    AmplitudeRequest dip;
    dip.orientation = Orientation::dip;
    const auto a = amplitude_samples(fx.model, sampler, few, 0, dip, fx.sim.truth.orientation, rng);
    CHECK(a.values.size() == 100);
    CHECK(a.baseline == "0");
    CHECK(std::abs(summarize_values(a.values).mean - fx.sim.truth.amplitude(0, 0)) < 0.2);
    const Window w = latency_range(fx.model, few, 0, 0, WindowSource::subject);
    for (double loc : a.locations) {
      CHECK(loc >= w.a);
      CHECK(loc <= w.b);
    }

    AmplitudeRequest rel;
    rel.component = 1;
    rel.baseline.component = 0;
    const auto b = amplitude_samples(fx.model, sampler, few, 0, rel, fx.sim.truth.orientation, rng);
    CHECK(b.baseline == "component 1");
    CHECK(summarize_values(b.values).mean == Approx(4.0).epsilon(0.1));

    AmplitudeRequest mw;
    mw.method = AmplitudeMethod::mean_window;
    mw.fixed_window = Window{0.6, 0.9};
    const auto c = amplitude_samples(fx.model, sampler, few, 0, mw, fx.sim.truth.orientation, rng);
    CHECK(c.window.a == 0.6);

    // mean curves at a state agree with the sampler's mean
    const Eigen::VectorXd& x = fx.model.data.grid.points;
    const Eigen::MatrixXd means = sampler.mean_curves(0, {few[0]}, x);
    CHECK((means.row(0).transpose() - sampler.mean_curve(0, *few[0], x)).cwiseAbs().maxCoeff() < 1e-10);

    // At a single repeated state the band is the exact pointwise interval.
    const std::vector<const LatentState*> fixed(4000, few[0]);
    const CurveBand band = curve_band(sampler.paths(0, fixed, x, rng), x);
    const ScaledMarginal marginal(x, fx.theta.tau0, fx.theta.h);
    const ScaledPosterior post(marginal, fx.model.data.series[0].y, few[0]->t.row(0).transpose(), few[0]->sigma2);
    const Eigen::VectorXd mu = post.mean_at(x);
    const Eigen::VectorXd sd = post.cov_at(x).diagonal().cwiseSqrt();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      CHECK(std::abs(band.lo(i) - (mu(i) - 1.959964 * sd(i))) < 0.2 * sd(i));
      CHECK(std::abs(band.hi(i) - (mu(i) + 1.959964 * sd(i))) < 0.2 * sd(i));
      CHECK(std::abs(band.mean(i) - mu(i)) < 0.1 * sd(i));
    }
  }
}

TEST_CASE("bands narrow as the noise shrinks") {
  const Fixture loud(0.25, 1);
  const Fixture quiet(0.05, 1);
  auto median_width = [](const Fixture& fx) {
    const CurveSampler sampler(fx.model, fx.theta);
    const auto draws = thin_draws(pooled_draws(fx.chains), 100);
    Rng rng(2);
    const Eigen::VectorXd& x = fx.model.data.grid.points;
    const CurveBand band = curve_band(sampler.paths(0, draws, x, rng), x);
    std::vector<double> w(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) w[static_cast<std::size_t>(i)] = band.hi(i) - band.lo(i);
    return quantile(w, 0.5);
  };
  CHECK(median_width(quiet) < median_width(loud));
}
