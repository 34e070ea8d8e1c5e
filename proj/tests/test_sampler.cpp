#include "slam/sampler.hpp"
#include "slam/simulation.hpp"

#include "sampler_oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace slam;
using doctest::Approx;

TEST_CASE("sigma2 Gibbs step matches the griddy posterior") {
  const auto r = testing::sigma2_conjugacy(50000, 21);
  INFO("TV " << r.tv);
  CHECK(r.draws == 50000);
  CHECK(r.tv < 0.05);
}

TEST_CASE("sigma2 full conditional has shape nN/2 + alpha") {
  // G = 2, S = 10, n = 100: shape 1000.5, so E[sigma2] = (quad / 2 + beta) / 999.5.
  const Model model = testing::toy_model(2, 10, 100, 3);
  SamplerOptions opt;
  opt.update_t = opt.update_beta = opt.update_eta = false;
  ChainSampler sampler(model, 3.0, 0.2, opt);
  Rng rng(1);
  LatentState state = initial_state(model, {}, rng);
  sampler.reset(state);
  const double scale = 0.5 * sampler.sum_quad() + model.priors.sigma_scale;
  const double mean = scale / 999.5;
  const double sd = mean / std::sqrt(998.5);
  RunSchedule sched;
  sched.sweeps = 4000;
  sched.burn_in = 0;
  auto streams = ChainStreams::make(model, 4, 0);
  const auto run = run_chain(sampler, state, ProposalScales::initial(model), sched, streams);
  double s = 0.0;
  for (const auto& d : run.draws) s += d.sigma2;
  CHECK(std::abs(s / 4000 - mean) < 3 * sd / std::sqrt(4000.0));
}

TEST_CASE("t recovers its prior with the likelihood off") {
  const auto r = testing::t_prior_recovery(500, 22);
  INFO("p-values " << r.p_values[0] << " " << r.p_values[1] << " " << r.p_values[2]);
  CHECK(r.draws == 20000);
  CHECK(r.min_p() > 0.001);
}

TEST_CASE("MH acceptance satisfies detailed balance on three states") {
  const double logp[3] = {std::log(0.2), std::log(0.5), std::log(0.3)};
  Rng rng(5);
  std::uniform_int_distribution<int> pick(0, 1);
  double counts[3][3] = {};
  int state = 0;
  const int N = 300000;
  for (int k = 0; k < N; ++k) {
    const int prop = (state + 1 + pick(rng)) % 3;  // symmetric: either other state
    const int next = mh_accept(logp[prop] - logp[state], rng) ? prop : state;
    counts[state][next] += 1.0;
    state = next;
  }
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) CHECK(std::abs(counts[i][j] - counts[j][i]) < 3 * std::sqrt(counts[i][j] + counts[j][i]));
  const double stay0 = counts[0][0] + counts[0][1] + counts[0][2];
  CHECK(stay0 / N == Approx(0.2).epsilon(0.05));
}

TEST_CASE("mh_accept edge cases") {
  Rng rng(1);
  CHECK(mh_accept(0.0, rng));
  CHECK(mh_accept(5.0, rng));
  CHECK_FALSE(mh_accept(-std::numeric_limits<double>::infinity(), rng));
  CHECK_FALSE(mh_accept(std::nan(""), rng));
  Rng a(2), b(2);
  mh_accept(10.0, a);
  mh_accept(-10.0, b);
  CHECK(a() == b());
}

TEST_CASE("proposal adaptation") {
  const Model model = testing::toy_model(2, 2, 10, 1);
  const ProposalScales s = ProposalScales::initial(model);
  AcceptanceStats w = AcceptanceStats::sized(model);
  auto fill = [](Counter& c, int acc, int att) { c.accepted = acc, c.attempted = att; };
  fill(w.t[0], 36, 40);   // 0.9: widen
  fill(w.t[1], 14, 40);   // 0.35: in band
  fill(w.t[2], 4, 40);    // 0.1: narrow
  fill(w.beta0[0], 12, 40);  // 0.30: in the coefficient band
  fill(w.beta0[1], 20, 40);  // 0.5: widen
  fill(w.eta[0], 2, 40);
  const AdaptSettings set;
  const ProposalScales a = adapt_proposals(w, s, set, false);
  CHECK(a.t(0, 0) == Approx(s.t(0, 0) * 1.25));
  CHECK(a.t(0, 1) == Approx(s.t(0, 1) * 1.25));
  CHECK(a.t(1, 0) == s.t(1, 0));
  CHECK(a.t(2, 0) == Approx(s.t(2, 0) / 1.25));
  CHECK(a.beta0(0) == s.beta0(0));
  CHECK(a.beta0(1) == Approx(s.beta0(1) * 1.25));
  CHECK(a.log_eta(0, 0) == Approx(s.log_eta(0, 0) / 1.25));
  const ProposalScales f = adapt_proposals(w, s, set, true);
  CHECK(f.t == s.t);
  CHECK(f.beta0 == s.beta0);
  CHECK(f.log_eta == s.log_eta);
}

TEST_CASE("initial state and support") {
  const Model model = testing::toy_model(2, 5, 30, 2);
  Rng rng(3);
  const LatentState s = initial_state(model, {}, rng);
  CHECK(s.inside_windows(model.windows));
  CHECK(s.beta.beta0.isZero());
  CHECK((s.eta.array() == 1.0).all());
  CHECK(s.sigma2 == 1.0);
  CHECK((s.r.array() == 0.5).all());

  ChainSampler sampler(model, 2.0, 0.2);
  RunSchedule sched;
  sched.sweeps = 300;
  sched.burn_in = 100;
  auto streams = ChainStreams::make(model, 7, 0);
  const auto run = run_chain(sampler, s, ProposalScales::initial(model), sched, streams);
  CHECK(run.draws.size() == 200);
  for (const auto& d : run.draws) {
    CHECK(d.inside_windows(model.windows));
    CHECK(d.sigma2 > 0.0);
    CHECK((d.eta.array() > 0.0).all());
    CHECK((d.r.array() > 0.0).all());
    CHECK((d.r.array() < 1.0).all());
    CHECK(d.r.isApprox(locations_from_coefficients(d.beta, model.design, model.link).r));
  }
  CHECK(AcceptanceStats::total(run.stats.t).attempted == 200u * 10u);
}

TEST_CASE("gbeta group likelihood equals the sum of densities") {
  const Model model = testing::toy_model(2, 4, 10, 5);
  Rng rng(1);
  const LatentState s = initial_state(model, {}, rng);
  const GbetaStats gb = gbeta_stats(model, s.t);
  for (Eigen::Index g = 0; g < 2; ++g)
    for (Eigen::Index m = 0; m < 2; ++m) {
      const Window& w = model.windows[static_cast<std::size_t>(m)];
      double direct = 0.0;
      for (auto i : model.data.series_of(static_cast<std::size_t>(g)))
        direct += gbeta_logpdf(s.t(static_cast<Eigen::Index>(i), m), GeneralBeta{0.37, 5.0, w.a, w.b});
      CHECK(gbeta_group_loglik(gb, g, m, 0.37, 5.0, w) == Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("sampler log likelihood agrees with the dense route") {
  const Model model = testing::toy_model(1, 3, 40, 6);
  ChainSampler sampler(model, 4.0, 0.25);
  const Eigen::Vector2d t(0.2, 0.7);
  const auto cond = conditional_moments(model.data.grid.points, Eigen::VectorXd(t), KernelHyperd::from_ratio(4.0, 0.25, 0.3));
  CHECK(*sampler.series_loglik(1, t, 0.3) == Approx(log_marginal(model.data.series[1].y, cond, 0.3)).epsilon(1e-8));
  CHECK_FALSE(sampler.series_loglik(1, Eigen::Vector2d(0.3, 0.3), 0.3).has_value());
}

namespace {

RunResult short_run(const Model& model, const LatentState& init, std::uint64_t seed) {
  ChainSampler sampler(model, 3.0, 0.2);
  RunSchedule sched;
  sched.sweeps = 150;
  sched.burn_in = 50;
  auto streams = ChainStreams::make(model, seed, 1);
  return run_chain(sampler, init, ProposalScales::initial(model), sched, streams);
}

}  // namespace

TEST_CASE("chains are reproducible and independent of subject order") {
  const Model model = testing::toy_model(2, 4, 25, 8);
  Rng rng(1);
  const LatentState init = initial_state(model, {}, rng);
  const auto a = short_run(model, init, 9);
  const auto b = short_run(model, init, 9);
  REQUIRE(a.draws.size() == b.draws.size());
  for (std::size_t d = 0; d < a.draws.size(); ++d) {
    CHECK(a.draws[d].t == b.draws[d].t);
    CHECK(a.draws[d].sigma2 == b.draws[d].sigma2);
  }

  // Reverse the subjects of group 2 in storage.
  WaveformDataset swapped = model.data;
  std::reverse(swapped.series.begin() + 4, swapped.series.end());
  const Model m2 = make_model(swapped, model.windows, model.design, model.link, model.priors);
  LatentState init2 = init;
  for (int k = 0; k < 4; ++k) init2.t.row(4 + k) = init.t.row(7 - k);
  const auto c = short_run(m2, init2, 9);
  for (std::size_t d = 0; d < a.draws.size(); ++d) {
    for (int k = 0; k < 4; ++k) {
      CHECK(c.draws[d].t.row(k) == a.draws[d].t.row(k));
      CHECK(c.draws[d].t.row(4 + k) == a.draws[d].t.row(7 - k));
    }
    CHECK(c.draws[d].sigma2 == a.draws[d].sigma2);
    CHECK(c.draws[d].beta.beta == a.draws[d].beta.beta);
  }
}

TEST_CASE("t posterior matches a grid evaluation") {
  // One series from the sine curve of subject 1 with one constrained dip.
  const int n = 100;
  const Eigen::VectorXd x = testing::unit_grid(n);
  Rng noise(31);
  std::normal_distribution<double> z(0.0, 0.25);
  WaveformDataset data;
  data.grid.points = x;
  data.groups = {"sine"};
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = sine_curve(x(i), 1) + z(noise);
  data.series.push_back({0, "1", y});
  const SearchWindows windows{{{0.0, 0.5}}};
  auto design = encode_one_way({"sine"});
  Priors priors = default_priors(design, 1);
  const Model model = make_model(data, windows, design, Link(LinkKind::logit), priors);
  const double tau0 = 18.0, h = 0.4, s2 = 0.0625;

  // Posterior of t on a fine grid: likelihood x uniform prior (r = 0.5, eta = 2).
  ChainSampler sampler(model, tau0, h);
  const int K = 2000;
  Eigen::VectorXd lp(K), tt(K);
  for (int k = 0; k < K; ++k) {
    tt(k) = 0.5 * (k + 0.5) / K;
    lp(k) = sampler.series_loglik(0, Eigen::VectorXd::Constant(1, tt(k)), s2).value_or(-1e300);
  }
  Eigen::Index best = 0;
  lp.maxCoeff(&best);
  const double truth = (std::numbers::pi / 2 + 0.3 - 1.0 / 15) / (2 * std::numbers::pi);
  CHECK(std::abs(tt(best) - truth) < 1.0 / (n - 1));
  const Eigen::VectorXd w = (lp.array() - lp.maxCoeff()).exp();
  const double mean = w.dot(tt) / w.sum();
  const double sd = std::sqrt(w.dot((tt.array() - mean).square().matrix()) / w.sum());

  SamplerOptions opt;
  opt.update_beta = opt.update_eta = opt.update_sigma2 = false;
  ChainSampler chain(model, tau0, h, opt);
  const LatentState init = testing::fixed_location_state(model, Eigen::VectorXd::Constant(1, 0.5),
                                                          Eigen::VectorXd::Constant(1, 2.0), s2, 3);
  RunSchedule sched;
  sched.sweeps = 21000;
  sched.burn_in = 1000;
  sched.thin = 1;
  auto streams = ChainStreams::make(model, 12, 0);
  const auto run = run_chain(chain, init, ProposalScales::initial(model), sched, streams);
  std::vector<double> ts;
  for (const auto& d : run.draws) ts.push_back(d.t(0, 0));
  INFO("grid mean " << mean << " sd " << sd << " chain mean " << testing::mean_of(ts));
  CHECK(std::abs(testing::mean_of(ts) - mean) < 0.1 * sd);
  CHECK(std::sqrt(testing::var_of(ts)) == Approx(sd).epsilon(0.1));
}

TEST_CASE("schedule validation") {
  const Model model = testing::toy_model(1, 1, 10, 1);
  ChainSampler sampler(model, 1.0, 0.2);
  Rng rng(1);
  RunSchedule bad;
  bad.thin = 0;
  auto streams = ChainStreams::make(model, 1, 0);
  CHECK_THROWS_AS(run_chain(sampler, initial_state(model, {}, rng), ProposalScales::initial(model), bad, streams),
                  std::invalid_argument);
}
