#include "slam/mcem.hpp"
#include "slam/simulation.hpp"

#include "sampler_oracle.hpp"

#include <doctest.h>

#include <cmath>

using namespace slam;
using doctest::Approx;

namespace {

// Small schedule so an EM run takes seconds.
McemConfig quick_config(std::uint64_t seed) {
  McemConfig c;
  c.seed = seed;
  c.estep_draws = 400;
  c.estep_burn_in = 100;
  c.subsample = 150;
  c.warmup_sweeps = 200;
  c.max_iterations = 40;
  c.final_chains = {2, 600, 100, 5};
  return c;
}

Simulated small_sine_cosine(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.n = 40;
  spec.subjects = 3;
  return generate_sine_cosine(spec, seed);
}

}  // namespace

TEST_CASE("Nelder-Mead finds the maximum of a smooth function") {
  auto f = [](const Eigen::VectorXd& x) { return -std::pow(x(0) - 1.5, 2) - 3 * std::pow(x(1) + 0.5, 2) + 2.0; };
  const Eigen::Vector2d x0(0.0, 0.0);
  const auto r = nelder_mead_maximize(f, x0, NelderMeadOptions{0.5, 1e-10, 1000});
  CHECK(r.converged);
  CHECK(r.x(0) == Approx(1.5).epsilon(1e-4));
  CHECK(r.x(1) == Approx(-0.5).epsilon(1e-4));
  CHECK(r.value >= f(x0));
  CHECK(r.value == Approx(2.0).epsilon(1e-9));
}

TEST_CASE("Nelder-Mead ranks non-finite values last") {
  auto f = [](const Eigen::VectorXd& x) {
    if (x(0) > 1.0) return std::numeric_limits<double>::quiet_NaN();
    return -std::pow(x(0) - 2.0, 2) - x(1) * x(1);
  };
  const auto r = nelder_mead_maximize(f, Eigen::Vector2d(0.0, 0.3), NelderMeadOptions{0.2, 1e-9, 600});
  CHECK(std::isfinite(r.value));
  CHECK(r.x(0) <= 1.0);
  CHECK(r.x(0) == Approx(1.0).epsilon(1e-3));
  const auto capped = nelder_mead_maximize(f, Eigen::Vector2d(0.0, 0.3), NelderMeadOptions{0.2, 1e-12, 5});
  CHECK(capped.evaluations <= 6);
}

TEST_CASE("M-step objective is the summed marginal likelihood") {
  const Model model = testing::toy_model(2, 2, 30, 4);
  std::vector<SubsampleDraw> draws{{Eigen::MatrixXd(4, 2), 0.4}, {Eigen::MatrixXd(4, 2), 0.7}};
  draws[0].t << 0.2, 0.7, 0.3, 0.6, 0.1, 0.9, 0.25, 0.75;
  draws[1].t = draws[0].t;
  draws[1].t(2, 1) = 0.55;
  const MstepObjective obj(model, draws);
  const double tau0 = 2.5, h = 0.15;
  const Eigen::VectorXd per = obj.per_draw(std::log(tau0), std::log(h));
  for (int l = 0; l < 2; ++l) {
    double direct = 0.0;
    for (Eigen::Index i = 0; i < 4; ++i) {
      const Eigen::VectorXd t = draws[l].t.row(i).transpose();
      const double s2 = draws[l].sigma2;
      direct += log_marginal(model.data.series[static_cast<std::size_t>(i)].y,
                             conditional_moments(model.data.grid.points, t, KernelHyperd::from_ratio(tau0, h, s2)), s2);
    }
    CHECK(per(l) == Approx(direct).epsilon(1e-8));
  }
  CHECK(obj.value(std::log(tau0), std::log(h), Eigen::Vector2d(0.25, 0.75)) ==
        Approx(0.25 * per(0) + 0.75 * per(1)).epsilon(1e-12));

  std::vector<SubsampleDraw> bad{{draws[0].t, 0.4}};
  bad[0].t(0, 1) = 0.5;
  bad[0].t(0, 0) = 0.5 - 1e-12;
  CHECK(std::isinf(MstepObjective(model, bad).per_draw(0.0, std::log(0.2))(0)));
}

TEST_CASE("M-step never lowers the objective and matches a grid search") {
  const Model model = testing::toy_model(1, 3, 40, 5);
  std::vector<SubsampleDraw> draws{{Eigen::MatrixXd(3, 2), 0.8}};
  draws[0].t << 0.2, 0.7, 0.3, 0.6, 0.1, 0.9;
  const MstepObjective obj(model, draws);
  const Eigen::VectorXd w = Eigen::VectorXd::Ones(1);
  const Theta start{1.0, 0.1};
  const auto r = mstep_optimize(obj, w, start, NelderMeadOptions{0.1, 1e-10, 800});
  CHECK_FALSE(r.flagged);
  CHECK(r.value >= r.start_value);
  CHECK(r.value == Approx(obj.value(std::log(r.theta.tau0), std::log(r.theta.h), w)));
  double best = -1e300;
  for (double lt = -3.0; lt <= 3.0; lt += 0.05)
    for (double lh = -5.0; lh <= 1.0; lh += 0.05) best = std::max(best, obj.value(lt, lh, w));
  CHECK(r.value >= best - 1e-6);
}

TEST_CASE("M-step recovers the length-scale of a simulated path") {
  const int n = 100;
  const double tau = 1.0, h = 0.1, sigma = 0.1;
  const Eigen::VectorXd x = testing::unit_grid(n);
  const Eigen::Vector2d t(0.27, 0.64);
  const auto cond = conditional_moments(x, Eigen::VectorXd(t), KernelHyperd{tau, h, std::nullopt});
  Rng rng(17);
  Eigen::VectorXd y = sample_path(cond, 1, rng).row(0).transpose();
  std::normal_distribution<double> z(0.0, sigma);
  for (auto& v : y) v += z(rng);
  WaveformDataset data;
  data.grid.points = x;
  data.groups = {"g"};
  data.series.push_back({0, "1", y});
  auto design = encode_one_way({"g"});
  const Model model = make_model(data, testing::halves(), design, Link(LinkKind::logit), default_priors(design, 2));
  const MstepObjective obj(model, {{t.transpose(), sigma * sigma}});
  const auto r = mstep_optimize(obj, Eigen::VectorXd::Ones(1), Theta{3.0, 0.3}, NelderMeadOptions{0.1, 1e-10, 800});
  INFO("h " << r.theta.h << " tau " << r.theta.tau0 * sigma);
  CHECK(r.theta.h > h / 1.5);
  CHECK(r.theta.h < h * 1.5);
}

TEST_CASE("config validation") {
  McemConfig c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = McemConfig{};
  c.final_chains.burn_in = c.final_chains.total;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = McemConfig{};
  c.estep_draws = 50;
  c.estep_burn_in = 100;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = McemConfig{};
  CHECK(c.estep_draws == 2100);
  CHECK(c.estep_burn_in == 100);
  CHECK(c.subsample == 500);
  CHECK(c.epsilon == 1e-5);
  CHECK(c.max_iterations == 100);
  CHECK(c.final_chains.total == 21000);
  CHECK(c.final_chains.burn_in == 1000);
  CHECK(c.final_chains.thin == 10);
  CHECK(c.final_chains.chains == 4);
}

TEST_CASE("initial theta") {
  const Model model = testing::toy_model(1, 2, 20, 3);
  McemConfig c;
  const Theta th = initial_theta(model, c);
  CHECK(th.h == Approx(0.1));
  CHECK(th.tau0 > 0.0);
  c.tau0_init = 4.0;
  c.h_init = 0.2;
  CHECK(initial_theta(model, c).tau0 == 4.0);
  CHECK(initial_theta(model, c).h == 0.2);
  CHECK(Theta{1.0, 1.0}.distance(Theta{std::exp(3.0), std::exp(4.0)}) == Approx(5.0));
}

TEST_CASE("EM on a small sine-cosine set") {
  const Simulated sim = small_sine_cosine(2);
  const Model model = simulated_model(sim);
  const McemConfig cfg = quick_config(5);
  std::vector<int> logged;
  const McemResult a = run_mcem(model, cfg, {}, [&](const EmIteration& it) { logged.push_back(it.index); });
  const EmTrace& tr = a.trace;
  REQUIRE_FALSE(tr.iterations.empty());
  CHECK(logged.size() == tr.iterations.size());
  CHECK(tr.converged);
  CHECK(tr.iterations.back().delta < cfg.epsilon);
  for (std::size_t j = 0; j < tr.iterations.size(); ++j) {
    const auto& it = tr.iterations[j];
    CHECK(it.delta >= 0.0);
    CHECK(it.objective >= it.start_objective);
    const Theta prev = j == 0 ? tr.initial : tr.iterations[j - 1].theta;
    CHECK(it.delta == Approx(prev.distance(it.theta)).epsilon(1e-12));
    if (j + 1 < tr.iterations.size()) CHECK(it.delta >= cfg.epsilon);
  }
  CHECK(tr.theta.tau0 == tr.iterations.back().theta.tau0);

  REQUIRE(a.chains.size() == 2);
  for (const auto& ch : a.chains) CHECK(ch.draws.size() == 100);

  SUBCASE("identical seeds give identical runs") {
    const McemResult b = run_mcem(model, cfg);
    REQUIRE(b.trace.iterations.size() == tr.iterations.size());
    for (std::size_t j = 0; j < tr.iterations.size(); ++j) {
      CHECK(b.trace.iterations[j].theta.tau0 == tr.iterations[j].theta.tau0);
      CHECK(b.trace.iterations[j].theta.h == tr.iterations[j].theta.h);
    }
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t d = 0; d < 100; ++d) CHECK(b.chains[k].draws[d].t == a.chains[k].draws[d].t);
  }
  SUBCASE("subject order within a group does not change the trajectory") {
    Simulated perm = sim;
    std::reverse(perm.data.series.begin(), perm.data.series.begin() + 3);
    const Model m2 = simulated_model(perm);
    const EmTrace t2 = run_em(m2, cfg);
    REQUIRE(t2.iterations.size() == tr.iterations.size());
    for (std::size_t j = 0; j < tr.iterations.size(); ++j) {
      CHECK(t2.iterations[j].theta.tau0 == tr.iterations[j].theta.tau0);
      CHECK(t2.iterations[j].theta.h == tr.iterations[j].theta.h);
    }
  }
  SUBCASE("final chains do not depend on the thread count") {
    McemConfig two = cfg;
    two.threads = 2;
    const auto c1 = run_final_chains(model, tr.theta, cfg);
    const auto c2 = run_final_chains(model, tr.theta, two);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t d = 0; d < 100; ++d) {
        CHECK(c1[k].draws[d].t == c2[k].draws[d].t);
        CHECK(c1[k].draws[d].sigma2 == c2[k].draws[d].sigma2);
      }
    const FamilyRates rates = family_rates(c1[0].stats);
    CHECK(rates.t > 0.0);
    CHECK(rates.t < 1.0);
  }
}

TEST_CASE("EM stops at the iteration cap with a warning state") {
  const Simulated sim = small_sine_cosine(3);
  const Model model = simulated_model(sim);
  McemConfig cfg = quick_config(6);
  cfg.max_iterations = 2;
  cfg.final_chains = {2, 60, 10, 1};
  const McemResult r = run_mcem(model, cfg);
  CHECK(r.trace.iterations.size() == 2);
  CHECK_FALSE(r.trace.converged);
  CHECK(r.chains.size() == 2);
  CHECK(r.chains[0].draws.size() == 50);
}
