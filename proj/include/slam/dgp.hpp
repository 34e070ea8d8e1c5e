#pragma once

// Derivative-constrained Gaussian process: a zero-mean GP on f conditioned on
// f'(t_m) = 0 at the stationary points t.  At grid points x the prior is
//   N(mu, Sigma),  mu = 0,  Sigma = k00(x,x) - k01(x,t) k11(t,t)^-1 k10(t,x),
// and the data model y = f(x) + e, e ~ N(0, sigma2 I) gives the marginal
//   y ~ N(mu, Sigma + sigma2 I).

#include "slam/kernel.hpp"
#include "slam/rng.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace slam {

class DegenerateConditioning : public std::runtime_error {
 public:
  DegenerateConditioning(std::size_t first, std::size_t second)
      : std::runtime_error("stationary points " + std::to_string(first + 1) + " and " +
                           std::to_string(second + 1) + " are too close to condition on"),
        first_(first),
        second_(second) {}
  std::size_t first() const { return first_; }
  std::size_t second() const { return second_; }

 private:
  std::size_t first_;
  std::size_t second_;
};

class FactorizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double default_jitter = 1e-8;
inline constexpr int jitter_retries = 3;
// Below this reciprocal condition number of the jittered k11 the stationary
// points count as coincident.
inline constexpr double min_k11_rcond = 1e-7;

// Cholesky of cov + jitter * I; on failure the jitter grows tenfold, at most
// `jitter_retries` times.
template <typename Scalar>
Eigen::LLT<Matrix<Scalar>> factor_with_jitter(const Matrix<Scalar>& cov, Scalar jitter) {
  Scalar j = jitter;
  for (int attempt = 0; attempt <= jitter_retries; ++attempt, j *= Scalar(10)) {
    Matrix<Scalar> work = cov;
    work.diagonal().array() += j;
    Eigen::LLT<Matrix<Scalar>> llt(work);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw FactorizationError("covariance factorization failed after jitter escalation");
}

template <typename Scalar = double>
struct DgpConditional {
  Vector<Scalar> mean;
  Matrix<Scalar> cov;
  Vector<Scalar> stationary_points;
  Vector<Scalar> grid;
  KernelHyper<Scalar> hyper;
  Eigen::LLT<Matrix<Scalar>> k11_factor;
  Scalar jitter{Scalar(default_jitter)};
};

template <typename Scalar>
std::pair<std::size_t, std::size_t> closest_pair(const Vector<Scalar>& t) {
  std::pair<std::size_t, std::size_t> best{0, 0};
  Scalar gap = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index i = 0; i < t.size(); ++i)
    for (Eigen::Index j = i + 1; j < t.size(); ++j) {
      using std::abs;
      if (abs(t(i) - t(j)) < gap) {
        gap = abs(t(i) - t(j));
        best = {static_cast<std::size_t>(i), static_cast<std::size_t>(j)};
      }
    }
  return best;
}

// `k00_grid`, when given, must be k00(grid, grid) at the hyper's amplitude.
template <typename Scalar>
DgpConditional<Scalar> conditional_moments(const Vector<Scalar>& grid, const Vector<Scalar>& t,
                                           const KernelHyper<Scalar>& hyper,
                                           Scalar jitter = Scalar(default_jitter),
                                           const Matrix<Scalar>* k00_grid = nullptr) {
  hyper.validate();
  DgpConditional<Scalar> out;
  out.grid = grid;
  out.stationary_points = t;
  out.hyper = hyper;
  out.jitter = jitter;
  out.mean = Vector<Scalar>::Zero(grid.size());
  out.cov = k00_grid ? *k00_grid : k00(grid, grid, hyper);
  if (t.size() == 0) return out;

  Matrix<Scalar> d11 = k11(t, t, hyper);
  const Scalar scale = hyper.tau * hyper.tau / (hyper.h * hyper.h);
  d11.diagonal().array() += jitter * scale;
  out.k11_factor.compute(d11);
  if (out.k11_factor.info() != Eigen::Success || out.k11_factor.rcond() < Scalar(min_k11_rcond)) {
    const auto [i, j] = closest_pair(t);
    throw DegenerateConditioning(i, j);
  }
  const Matrix<Scalar> v = out.k11_factor.matrixL().solve(k10(t, grid, hyper));
  out.cov.noalias() -= v.transpose() * v;
  out.cov = (Scalar(0.5) * (out.cov + out.cov.transpose())).eval();
  return out;
}

// Conditional covariance between arbitrary point sets.
template <typename Scalar>
Matrix<Scalar> conditional_cross_cov(const DgpConditional<Scalar>& cond, const Vector<Scalar>& x1,
                                     const Vector<Scalar>& x2) {
  Matrix<Scalar> out = k00(x1, x2, cond.hyper);
  if (cond.stationary_points.size() == 0) return out;
  const Matrix<Scalar> v1 = cond.k11_factor.matrixL().solve(k10(cond.stationary_points, x1, cond.hyper));
  const Matrix<Scalar> v2 = cond.k11_factor.matrixL().solve(k10(cond.stationary_points, x2, cond.hyper));
  out.noalias() -= v1.transpose() * v2;
  return out;
}

// Rows are draws from N(mean, cov + jitter I).
template <typename Scalar>
Matrix<Scalar> sample_gaussian(const Vector<Scalar>& mean, const Matrix<Scalar>& cov, int count,
                               Scalar jitter, Rng& rng) {
  Matrix<Scalar> out(count, mean.size());
  if (count <= 0) return out;
  const auto llt = factor_with_jitter(cov, jitter);
  std::normal_distribution<double> normal;
  Matrix<Scalar> z(mean.size(), count);
  for (Eigen::Index c = 0; c < count; ++c)
    for (Eigen::Index i = 0; i < mean.size(); ++i) z(i, c) = Scalar(normal(rng));
  const Matrix<Scalar> draws = llt.matrixL() * z;
  out = draws.transpose();
  out.rowwise() += mean.transpose();
  return out;
}

template <typename Scalar>
Matrix<Scalar> sample_path(const DgpConditional<Scalar>& cond, int count, Rng& rng) {
  const Scalar j = cond.jitter * cond.hyper.tau * cond.hyper.tau;
  return sample_gaussian(cond.mean, cond.cov, count, j, rng);
}

// N(mu, Sigma + sigma2 I) with a cached Cholesky factor.
template <typename Scalar = double>
class MarginalGaussian {
 public:
  MarginalGaussian(const DgpConditional<Scalar>& cond, Scalar sigma2) : mean_(cond.mean) {
    if (!(sigma2 > Scalar(0))) throw std::invalid_argument("noise variance must be positive");
    cov_ = cond.cov;
    cov_.diagonal().array() += sigma2;
    llt_.compute(cov_);
    if (llt_.info() != Eigen::Success) {
      llt_ = factor_with_jitter(cov_, cond.jitter * cond.hyper.tau * cond.hyper.tau);
    }
    const auto& l = llt_.matrixLLT();
    log_det_ = Scalar(0);
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      using std::log;
      log_det_ += Scalar(2) * log(l(i, i));
    }
  }

  Scalar log_density(const Vector<Scalar>& y) const {
    if (y.size() != mean_.size()) throw std::invalid_argument("series length does not match the grid");
    const Vector<Scalar> w = llt_.matrixL().solve(y - mean_);
    const Scalar n = Scalar(y.size());
    using std::log;
    return Scalar(-0.5) * (n * log(Scalar(2) * std::numbers::pi_v<Scalar>) + log_det_ + w.squaredNorm());
  }

  const Matrix<Scalar>& cov() const { return cov_; }
  const Eigen::LLT<Matrix<Scalar>>& factor() const { return llt_; }
  Scalar log_det() const { return log_det_; }

 private:
  Vector<Scalar> mean_;
  Matrix<Scalar> cov_;
  Eigen::LLT<Matrix<Scalar>> llt_;
  Scalar log_det_{0};
};

template <typename Scalar>
Scalar log_marginal(const Vector<Scalar>& y, const DgpConditional<Scalar>& cond, Scalar sigma2) {
  return MarginalGaussian<Scalar>(cond, sigma2).log_density(y);
}

// Gaussian posterior of f given y.  Evaluates the exact conditional at any
// point set, on or off the grid:
//   mean(X) = mu + Sigma(X,x) (Sigma + sigma2 I)^-1 (y - mu)
//   cov(X)  = Sigma(X,X) - Sigma(X,x) (Sigma + sigma2 I)^-1 Sigma(x,X)
template <typename Scalar = double>
class DgpPosterior {
 public:
  DgpPosterior(const Vector<Scalar>& y, DgpConditional<Scalar> cond, Scalar sigma2)
      : cond_(std::move(cond)), marginal_(cond_, sigma2) {
    if (y.size() != cond_.grid.size()) throw std::invalid_argument("series length does not match the grid");
    alpha_ = marginal_.factor().solve(y - cond_.mean);
  }

  Vector<Scalar> mean_at(const Vector<Scalar>& points) const {
    return conditional_cross_cov(cond_, points, cond_.grid) * alpha_;
  }

  Matrix<Scalar> cov_at(const Vector<Scalar>& points) const {
    const Matrix<Scalar> cross = conditional_cross_cov(cond_, points, cond_.grid);
    const Matrix<Scalar> v = marginal_.factor().matrixL().solve(cross.transpose());
    Matrix<Scalar> out = conditional_cross_cov(cond_, points, points);
    out.noalias() -= v.transpose() * v;
    return (Scalar(0.5) * (out + out.transpose())).eval();
  }

  Matrix<Scalar> sample(const Vector<Scalar>& points, int count, Rng& rng) const {
    const Scalar j = cond_.jitter * cond_.hyper.tau * cond_.hyper.tau;
    return sample_gaussian(mean_at(points), cov_at(points), count, j, rng);
  }

  const DgpConditional<Scalar>& conditional() const { return cond_; }

 private:
  DgpConditional<Scalar> cond_;
  MarginalGaussian<Scalar> marginal_;
  Vector<Scalar> alpha_;
};

template <typename Scalar>
Matrix<Scalar> posterior_path(const Vector<Scalar>& y, const DgpConditional<Scalar>& cond, Scalar sigma2,
                              int count, Rng& rng) {
  return DgpPosterior<Scalar>(y, cond, sigma2).sample(cond.grid, count, rng);
}

// Marginal likelihood in the noise-relative parametrization tau^2 = tau0^2 sigma2:
//   y ~ N(0, sigma2 A),  A = tau0^2 (k00 - k01 k11^-1 k10) + I   (unit amplitude),
// so A does not depend on sigma2.  With P = tau0^2 k00 + I factored once per
// (tau0, h), A = P - U D^-1 U' where U = k01(x, t) and D = k11(t, t) / tau0^2,
// and the rank-M update gives, with S = D - U' P^-1 U,
//   y' A^-1 y = y' P^-1 y + (U' P^-1 y)' S^-1 (U' P^-1 y)
//   log|A|    = log|P| + log|S| - log|D|.
class ScaledMarginal {
 public:
  struct Prepared {
    Eigen::VectorXd white;  // L^-1 y with P = L L'
    double quad{0.0};       // y' P^-1 y
  };
  struct Terms {
    double quad{0.0};     // y' A^-1 y
    double log_det{0.0};  // log |A|
  };

  ScaledMarginal(const Eigen::VectorXd& grid, double tau0, double h);

  Prepared prepare(const Eigen::VectorXd& y) const;
  // nullopt when t is too degenerate to condition on.
  std::optional<Terms> terms(const Prepared& y, const Eigen::VectorXd& t) const;
  // Row k of `t_rows` is one stationary-point vector; one triangular solve
  // covers all rows.
  std::vector<std::optional<Terms>> terms_batch(const Prepared& y, const Eigen::MatrixXd& t_rows) const;

  static double log_density(const Terms& terms, Eigen::Index n, double sigma2) {
    return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi * sigma2) + terms.log_det +
                   terms.quad / sigma2);
  }

  double tau0() const { return tau0_; }
  double h() const { return h_; }
  const Eigen::VectorXd& grid() const { return grid_; }
  // k00 at unit amplitude on the grid.
  const Eigen::MatrixXd& k00_unit() const { return k00_unit_; }
  // Cholesky factor of P = tau0^2 k00 + I.
  const Eigen::LLT<Eigen::MatrixXd>& p_factor() const { return p_factor_; }

 private:
  Eigen::VectorXd grid_;
  double tau0_;
  double h_;
  Eigen::MatrixXd k00_unit_;
  Eigen::LLT<Eigen::MatrixXd> p_factor_;
  double log_det_p_{0.0};

  std::optional<Terms> finish(const Prepared& y, const Eigen::Ref<const Eigen::MatrixXd>& w,
                              const Eigen::VectorXd& t) const;
};

// Posterior of f given y in the same parametrization, reusing the factor of
// P.  With C = Sigma(X, x) at unit amplitude:
//   mean(X) = tau0^2 C A^-1 y
//   cov(X)  = sigma2 tau0^2 (Sigma(X, X) - tau0^2 C A^-1 C')
// and A^-1 = P^-1 + P^-1 U S^-1 U' P^-1.
// Pieces of the posterior at a fixed set of points that do not depend on t:
// unit Sigma(x, x), V0 = L^-1 Sigma(X, x) and V0'V0.  Reused across draws,
// the per-draw work drops to rank-M corrections.
struct PathBasis {
  Eigen::VectorXd points;
  Eigen::MatrixXd kpp;
  Eigen::MatrixXd v0;
  Eigen::MatrixXd g0;
};

PathBasis make_path_basis(const ScaledMarginal& marginal, const Eigen::VectorXd& points);

class ScaledPosterior {
 public:
  // Throws DegenerateConditioning if t cannot be conditioned on.
  ScaledPosterior(const ScaledMarginal& marginal, const Eigen::VectorXd& y, const Eigen::VectorXd& t,
                  double sigma2);

  Eigen::VectorXd mean_at(const Eigen::VectorXd& points) const;
  Eigen::MatrixXd cov_at(const Eigen::VectorXd& points) const;
  // Rows are draws.
  Eigen::MatrixXd sample(const Eigen::VectorXd& points, int count, Rng& rng) const;

  // Same quantities at the basis points.
  Eigen::VectorXd mean_at(const PathBasis& basis) const;
  Eigen::MatrixXd cov_at(const PathBasis& basis) const;
  Eigen::MatrixXd sample(const PathBasis& basis, int count, Rng& rng) const;

 private:
  // Sigma(x, X) at unit amplitude, n x k.
  Eigen::MatrixXd cross(const Eigen::VectorXd& points) const;

  const ScaledMarginal* marginal_;
  Eigen::VectorXd t_;
  double sigma2_;
  Eigen::LLT<Eigen::MatrixXd> k11_factor_;  // unit k11 + jitter
  Eigen::MatrixXd w_;                       // L^-1 U
  Eigen::LLT<Eigen::MatrixXd> s_factor_;
  Eigen::VectorXd alpha_;  // A^-1 y
  Eigen::VectorXd white_alpha_;  // L' A^-1 y
};

}  // namespace slam
