#include "slam/dgp.hpp"

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

Eigen::VectorXd normals(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> z;
  Eigen::VectorXd out(n);
  for (auto& x : out) x = z(rng);
  return out;
}

double dense_logpdf(const Eigen::VectorXd& y, const Eigen::MatrixXd& cov) {
  const Eigen::MatrixXd inv = cov.inverse();
  const double n = static_cast<double>(y.size());
  return -0.5 * (n * std::log(2 * std::numbers::pi) + std::log(cov.determinant()) + y.dot(inv * y));
}

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("conditional moments") {
  const Eigen::VectorXd x = testing::unit_grid(11);
  const KernelHyperd hy{1.0, 0.5, std::nullopt};
  const auto c = conditional_moments(x, v({0.5}), hy);
  CHECK(c.mean.isZero());
  const Eigen::MatrixXd prior = k00(x, x, hy);
  CHECK((c.cov.diagonal().array() <= prior.diagonal().array() + 1e-12).all());
  CHECK(c.cov(5, 5) == Approx(1.0).epsilon(1e-12));
  CHECK(c.cov(0, 0) < 1.0);
  CHECK((c.cov - c.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);

  const auto two = conditional_moments(x, v({0.21, 0.74}), KernelHyperd{1.7, 0.2, std::nullopt});
  CHECK(two.mean.isZero());
  CHECK(Eigen::LLT<Eigen::MatrixXd>(two.cov + 1e-8 * Eigen::MatrixXd::Identity(11, 11)).info() == Eigen::Success);
}

TEST_CASE("coincident stationary points are degenerate") {
  const Eigen::VectorXd x = testing::unit_grid(11);
  try {
    conditional_moments(x, v({0.2, 0.6, 0.6}), KernelHyperd{1.0, 0.3, std::nullopt});
    FAIL("expected DegenerateConditioning");
  } catch (const DegenerateConditioning& e) {
    CHECK(e.first() == 1);
    CHECK(e.second() == 2);
  }
}

TEST_CASE("jitter escalation gives up on indefinite matrices") {
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(3, 3);
  bad(2, 2) = -1.0;
  CHECK_THROWS_AS(factor_with_jitter(bad, 1e-8), FactorizationError);
  Eigen::MatrixXd flat = Eigen::MatrixXd::Ones(3, 3);
  CHECK(factor_with_jitter(flat, 1e-8).info() == Eigen::Success);
}

TEST_CASE("prior paths have vanishing slope at the stationary points") {
  const int n = 200;
  const Eigen::VectorXd x = testing::unit_grid(n);
  const KernelHyperd hy{1.0, 0.1, std::nullopt};
  // On grid points so the central difference is centred on t.
  const Eigen::VectorXd t = v({x(60), x(140)});
  const auto c = conditional_moments(x, t, hy);
  Rng rng(7);
  const Eigen::MatrixXd paths = sample_path(c, 500, rng);
  CHECK(sample_path(c, 0, rng).rows() == 0);
  double total = 0.0;
  for (Eigen::Index d = 0; d < paths.rows(); ++d) {
    const Eigen::VectorXd s = testing::slope(paths.row(d).transpose(), x);
    total += std::abs(s(60)) + std::abs(s(140));
  }
  CHECK(total / 1000.0 < 0.05 * hy.tau / hy.h);
}

TEST_CASE("sampled covariance matches the conditional covariance") {
  const Eigen::VectorXd x = testing::unit_grid(5);
  const auto c = conditional_moments(x, v({0.4}), KernelHyperd{1.0, 0.3, std::nullopt});
  Rng rng(9);
  const int N = 20000;
  const Eigen::MatrixXd d = sample_path(c, N, rng);
  const Eigen::MatrixXd cent = d.rowwise() - d.colwise().mean();
  const Eigen::MatrixXd emp = cent.transpose() * cent / (N - 1.0);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) {
      const double se = std::sqrt((c.cov(i, i) * c.cov(j, j) + c.cov(i, j) * c.cov(i, j)) / N) + 1e-9;
      CHECK(std::abs(emp(i, j) - c.cov(i, j)) < 3 * se);
    }
}

TEST_CASE("log marginal") {
  SUBCASE("degenerate prior reduces to the noise density") {
    DgpConditional<double> c;
    c.mean = Eigen::VectorXd::Zero(2);
    c.cov = Eigen::MatrixXd::Zero(2, 2);
    c.grid = v({0.0, 1.0});
    CHECK(log_marginal(Eigen::VectorXd::Zero(2).eval(), c, 1.0) == Approx(-std::log(2 * std::numbers::pi)));
  }
  SUBCASE("matches dense algebra") {
    Rng rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
      const Eigen::VectorXd x = testing::unit_grid(10);
      const KernelHyperd hy{0.5 + u(rng), 0.1 + 0.4 * u(rng), std::nullopt};
      const auto c = conditional_moments(x, v({0.1 + 0.3 * u(rng), 0.6 + 0.3 * u(rng)}), hy);
      const double s2 = 0.05 + u(rng);
      const Eigen::VectorXd y = normals(10, rng);
      const Eigen::MatrixXd cov = c.cov + s2 * Eigen::MatrixXd::Identity(10, 10);
      CHECK(std::abs(log_marginal(y, c, s2) - dense_logpdf(y, cov)) < 1e-8);
    }
  }
  SUBCASE("inflating the noise lowers the density at the mean") {
    const auto c = conditional_moments(testing::unit_grid(10), v({0.3}), KernelHyperd{1.0, 0.2, std::nullopt});
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
    CHECK(log_marginal(y, c, 0.5) > log_marginal(y, c, 0.75));
  }
  SUBCASE("rejects bad inputs") {
    const auto c = conditional_moments(testing::unit_grid(10), v({0.3}), KernelHyperd{1.0, 0.2, std::nullopt});
    CHECK_THROWS_AS(log_marginal(Eigen::VectorXd::Zero(9).eval(), c, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(log_marginal(Eigen::VectorXd::Zero(10).eval(), c, 0.0), std::invalid_argument);
  }
}

TEST_CASE("posterior limits") {
  const Eigen::VectorXd x = testing::unit_grid(10);
  const auto c = conditional_moments(x, v({0.25, 0.75}), KernelHyperd{1.0, 0.05, std::nullopt});
  Rng rng(10);
  const Eigen::VectorXd y = normals(10, rng);
  const DgpPosterior<double> sharp(y, c, 1e-10);
  CHECK((sharp.mean_at(x) - y).cwiseAbs().maxCoeff() < 1e-3);
  const DgpPosterior<double> vague(y, c, 1e10);
  CHECK(vague.mean_at(x).cwiseAbs().maxCoeff() < 1e-3 * y.norm());

  const DgpPosterior<double> mid(y, c, 0.3);
  CHECK((mid.cov_at(x).diagonal().array() <= c.cov.diagonal().array() + 1e-12).all());
  const Eigen::MatrixXd draws = posterior_path(y, c, 0.3, 3, rng);
  CHECK(draws.rows() == 3);
  CHECK(draws.cols() == 10);
}

TEST_CASE("posterior mean curve is flat at the stationary points") {
  const Eigen::VectorXd x = testing::unit_grid(100);
  const Eigen::VectorXd t = v({0.2731, 0.7012});
  const KernelHyperd hy{2.0, 0.15, std::nullopt};
  Eigen::VectorXd y(100);
  for (int i = 0; i < 100; ++i) y(i) = std::sin(2 * std::numbers::pi * x(i) + 1.0);
  const DgpPosterior<double> post(y, conditional_moments(x, t, hy), 0.05);
  const Eigen::VectorXd fine = Eigen::VectorXd::LinSpaced(2001, 0.0, 1.0);
  const double max_slope = testing::slope(post.mean_at(fine), fine).cwiseAbs().maxCoeff();
  const double d = 1e-6;
  for (Eigen::Index m = 0; m < t.size(); ++m) {
    const Eigen::VectorXd f = post.mean_at(v({t(m) - d, t(m) + d}));
    CHECK(std::abs(f(1) - f(0)) / (2 * d) < 1e-4 * max_slope);
  }
}

TEST_CASE("noise-relative parametrization") {
  const Eigen::VectorXd x = testing::unit_grid(30);
  const Eigen::VectorXd t = v({0.3, 0.8});
  const double tau0 = 3.0, h = 0.2, s2 = 0.4;
  const auto scaled = conditional_moments(x, t, KernelHyperd::from_ratio(tau0, h, s2));
  const auto unit = conditional_moments(x, t, KernelHyperd{1.0, h, std::nullopt});
  const Eigen::MatrixXd lhs = scaled.cov + s2 * Eigen::MatrixXd::Identity(30, 30);
  const Eigen::MatrixXd rhs = s2 * (tau0 * tau0 * unit.cov + Eigen::MatrixXd::Identity(30, 30));
  CHECK(max_rel(lhs, rhs) < 1e-10);
}

TEST_CASE("Woodbury marginal matches the dense route") {
  const Eigen::VectorXd x = testing::unit_grid(60);
  Rng rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 8; ++rep) {
    const double tau0 = 0.5 + 10 * u(rng), h = 0.05 + 0.4 * u(rng), s2 = 0.05 + u(rng);
    const ScaledMarginal marg(x, tau0, h);
    const Eigen::VectorXd y = normals(60, rng);
    const auto prep = marg.prepare(y);
    Eigen::MatrixXd rows(3, 2);
    for (int k = 0; k < 3; ++k) rows.row(k) << 0.5 * u(rng), 0.5 + 0.5 * u(rng);
    const auto batch = marg.terms_batch(prep, rows);
    for (int k = 0; k < 3; ++k) {
      const Eigen::VectorXd t = rows.row(k).transpose();
      const auto terms = marg.terms(prep, t);
      REQUIRE(terms);
      REQUIRE(batch[k]);
      CHECK(batch[k]->quad == Approx(terms->quad).epsilon(1e-10));
      const double fast = ScaledMarginal::log_density(*terms, 60, s2);
      const double dense = log_marginal(y, conditional_moments(x, t, KernelHyperd::from_ratio(tau0, h, s2)), s2);
      CHECK(fast == Approx(dense).epsilon(1e-7));
    }
  }
  const ScaledMarginal marg(x, 2.0, 0.2);
  CHECK_FALSE(marg.terms(marg.prepare(Eigen::VectorXd::Ones(60)), v({0.4, 0.4})).has_value());
}

TEST_CASE("scaled posterior matches the dense posterior") {
  const Eigen::VectorXd x = testing::unit_grid(50);
  const double tau0 = 6.0, h = 0.15, s2 = 0.3;
  const Eigen::VectorXd t = v({0.23, 0.71});
  Rng rng(13);
  const Eigen::VectorXd y = normals(50, rng);
  const ScaledMarginal marg(x, tau0, h);
  const ScaledPosterior fast(marg, y, t, s2);
  const DgpPosterior<double> dense(y, conditional_moments(x, t, KernelHyperd::from_ratio(tau0, h, s2)), s2);
  const Eigen::VectorXd pts = Eigen::VectorXd::LinSpaced(37, 0.1, 0.9);
  CHECK(max_rel(fast.mean_at(pts), dense.mean_at(pts)) < 1e-7);
  CHECK(max_rel(fast.cov_at(pts), dense.cov_at(pts)) < 1e-6);

  const PathBasis basis = make_path_basis(marg, pts);
  CHECK(max_rel(fast.mean_at(basis), fast.mean_at(pts)) < 1e-9);
  CHECK(max_rel(fast.cov_at(basis), fast.cov_at(pts)) < 1e-8);

  Rng a(1), b(1);
  const Eigen::MatrixXd da = fast.sample(basis, 4, a);
  const Eigen::MatrixXd db = fast.sample(basis, 4, b);
  CHECK(da == db);
  CHECK_THROWS_AS(ScaledPosterior(marg, y, v({0.5, 0.5}), s2), DegenerateConditioning);
}

TEST_CASE("log marginal is a per-series function") {
  const Eigen::VectorXd x = testing::unit_grid(40);
  const ScaledMarginal marg(x, 4.0, 0.2);
  Rng rng(14);
  std::vector<Eigen::VectorXd> ys;
  for (int k = 0; k < 4; ++k) ys.push_back(normals(40, rng));
  const Eigen::VectorXd t = v({0.3, 0.7});
  auto total = [&](const std::vector<int>& order) {
    double s = 0.0;
    for (int k : order) s += ScaledMarginal::log_density(*marg.terms(marg.prepare(ys[k]), t), 40, 0.5);
    return s;
  };
  const double fwd = total({0, 1, 2, 3});
  CHECK(total({3, 1, 0, 2}) == Approx(fwd).epsilon(1e-14));
  CHECK(ScaledMarginal::log_density(*marg.terms(marg.prepare(ys[2]), t), 40, 0.5) ==
        ScaledMarginal::log_density(*marg.terms(marg.prepare(ys[2]), t), 40, 0.5));
}
