#include "slam/dgp.hpp"

#include <cmath>

namespace slam {

namespace {

double log_det_from(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const auto& l = llt.matrixLLT();
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) s += 2.0 * std::log(l(i, i));
  return s;
}

}  // namespace

ScaledMarginal::ScaledMarginal(const Eigen::VectorXd& grid, double tau0, double h)
    : grid_(grid), tau0_(tau0), h_(h) {
  const KernelHyperd unit{1.0, h, std::nullopt};
  unit.validate();
  if (!(tau0 > 0.0) || !std::isfinite(tau0))
    throw std::invalid_argument("kernel amplitude ratio tau0 must be positive and finite");
  k00_unit_ = k00(grid_, grid_, unit);
  Eigen::MatrixXd p = tau0 * tau0 * k00_unit_;
  p.diagonal().array() += 1.0;
  p_factor_.compute(p);
  if (p_factor_.info() != Eigen::Success) p_factor_ = factor_with_jitter(p, default_jitter);
  log_det_p_ = log_det_from(p_factor_);
}

ScaledMarginal::Prepared ScaledMarginal::prepare(const Eigen::VectorXd& y) const {
  if (y.size() != grid_.size()) throw std::invalid_argument("series length does not match the grid");
  Prepared out;
  out.white = p_factor_.matrixL().solve(y);
  out.quad = out.white.squaredNorm();
  return out;
}

std::optional<ScaledMarginal::Terms> ScaledMarginal::finish(const Prepared& y,
                                                            const Eigen::Ref<const Eigen::MatrixXd>& w,
                                                            const Eigen::VectorXd& t) const {
  const KernelHyperd unit{1.0, h_, std::nullopt};
  const double inv_t02 = 1.0 / (tau0_ * tau0_);
  Eigen::MatrixXd d = k11(t, t, unit) * inv_t02;
  d.diagonal().array() += default_jitter / (h_ * h_) * inv_t02;
  const Eigen::LLT<Eigen::MatrixXd> d_factor(d);
  if (d_factor.info() != Eigen::Success || d_factor.rcond() < min_k11_rcond) return std::nullopt;

  Eigen::MatrixXd s = d;
  s.noalias() -= w.transpose() * w;
  const Eigen::LLT<Eigen::MatrixXd> s_factor(s);
  if (s_factor.info() != Eigen::Success) return std::nullopt;

  const Eigen::VectorXd v = w.transpose() * y.white;
  const Eigen::VectorXd sv = s_factor.matrixL().solve(v);
  Terms out{y.quad + sv.squaredNorm(), log_det_p_ + log_det_from(s_factor) - log_det_from(d_factor)};
  if (!std::isfinite(out.quad) || !std::isfinite(out.log_det) || out.quad < 0.0) return std::nullopt;
  return out;
}

std::optional<ScaledMarginal::Terms> ScaledMarginal::terms(const Prepared& y,
                                                           const Eigen::VectorXd& t) const {
  if (t.size() == 0) return Terms{y.quad, log_det_p_};
  const KernelHyperd unit{1.0, h_, std::nullopt};
  Eigen::MatrixXd w = k01(grid_, t, unit);
  p_factor_.matrixL().solveInPlace(w);
  return finish(y, w, t);
}

std::vector<std::optional<ScaledMarginal::Terms>> ScaledMarginal::terms_batch(
    const Prepared& y, const Eigen::MatrixXd& t_rows) const {
  const Eigen::Index rows = t_rows.rows();
  const Eigen::Index m = t_rows.cols();
  std::vector<std::optional<Terms>> out(static_cast<std::size_t>(rows));
  if (m == 0) {
    for (auto& x : out) x = Terms{y.quad, log_det_p_};
    return out;
  }
  const KernelHyperd unit{1.0, h_, std::nullopt};
  Eigen::VectorXd flat(rows * m);
  for (Eigen::Index k = 0; k < rows; ++k) flat.segment(k * m, m) = t_rows.row(k).transpose();
  Eigen::MatrixXd w = k01(grid_, flat, unit);
  p_factor_.matrixL().solveInPlace(w);
  for (Eigen::Index k = 0; k < rows; ++k)
    out[static_cast<std::size_t>(k)] = finish(y, w.middleCols(k * m, m), t_rows.row(k).transpose());
  return out;
}

ScaledPosterior::ScaledPosterior(const ScaledMarginal& marginal, const Eigen::VectorXd& y,
                                 const Eigen::VectorXd& t, double sigma2)
    : marginal_(&marginal), t_(t), sigma2_(sigma2) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("noise variance must be positive");
  if (y.size() != marginal.grid().size()) throw std::invalid_argument("series length does not match the grid");
  const double h = marginal.h();
  const double t02 = marginal.tau0() * marginal.tau0();
  const KernelHyperd unit{1.0, h, std::nullopt};
  const auto& lp = marginal.p_factor();

  Eigen::VectorXd p_inv_y = lp.solve(y);
  if (t.size() == 0) {
    alpha_ = p_inv_y;
    white_alpha_ = lp.matrixL().solve(y);
    return;
  }
  Eigen::MatrixXd k11u = k11(t, t, unit);
  k11u.diagonal().array() += default_jitter / (h * h);
  k11_factor_.compute(k11u);
  Eigen::MatrixXd d = k11u / t02;
  w_ = k01(marginal.grid(), t, unit);
  lp.matrixL().solveInPlace(w_);
  Eigen::MatrixXd s = d;
  s.noalias() -= w_.transpose() * w_;
  s_factor_.compute(s);
  if (k11_factor_.info() != Eigen::Success || k11_factor_.rcond() < min_k11_rcond ||
      s_factor_.info() != Eigen::Success) {
    const auto [i, j] = closest_pair(t);
    throw DegenerateConditioning(i, j);
  }
  // P^-1 U S^-1 U' P^-1 y, with U' P^-1 y = W' L^-1 y
  const Eigen::VectorXd white = lp.matrixL().solve(y);
  const Eigen::VectorXd c = s_factor_.solve(w_.transpose() * white);
  white_alpha_ = white + w_ * c;
  alpha_ = p_inv_y + lp.matrixU().solve(w_ * c);
}

Eigen::MatrixXd ScaledPosterior::cross(const Eigen::VectorXd& points) const {
  const KernelHyperd unit{1.0, marginal_->h(), std::nullopt};
  const Eigen::VectorXd& grid = marginal_->grid();
  Eigen::MatrixXd out = k00(grid, points, unit);
  if (t_.size() == 0) return out;
  const Eigen::MatrixXd a = k01(grid, t_, unit);    // n x M
  const Eigen::MatrixXd b = k10(t_, points, unit);  // M x k
  out.noalias() -= a * k11_factor_.solve(b);
  return out;
}

Eigen::VectorXd ScaledPosterior::mean_at(const Eigen::VectorXd& points) const {
  const double t02 = marginal_->tau0() * marginal_->tau0();
  return t02 * (cross(points).transpose() * alpha_);
}

Eigen::MatrixXd ScaledPosterior::cov_at(const Eigen::VectorXd& points) const {
  const KernelHyperd unit{1.0, marginal_->h(), std::nullopt};
  const double t02 = marginal_->tau0() * marginal_->tau0();
  Eigen::MatrixXd prior = k00(points, points, unit);
  if (t_.size() > 0) {
    const Eigen::MatrixXd b = k10(t_, points, unit);
    const Eigen::MatrixXd v = k11_factor_.matrixL().solve(b);
    prior.noalias() -= v.transpose() * v;
  }
  Eigen::MatrixXd v = cross(points);  // n x k
  marginal_->p_factor().matrixL().solveInPlace(v);
  Eigen::MatrixXd reduce = v.transpose() * v;
  if (t_.size() > 0) {
    const Eigen::MatrixXd vw = v.transpose() * w_;  // k x M
    const Eigen::MatrixXd z = s_factor_.matrixL().solve(vw.transpose());
    reduce.noalias() += z.transpose() * z;
  }
  Eigen::MatrixXd out = sigma2_ * t02 * (prior - t02 * reduce);
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd ScaledPosterior::sample(const Eigen::VectorXd& points, int count, Rng& rng) const {
  const double tau2 = marginal_->tau0() * marginal_->tau0() * sigma2_;
  return sample_gaussian<double>(mean_at(points), cov_at(points), count, default_jitter * tau2, rng);
}

PathBasis make_path_basis(const ScaledMarginal& marginal, const Eigen::VectorXd& points) {
  const KernelHyperd unit{1.0, marginal.h(), std::nullopt};
  PathBasis b;
  b.points = points;
  b.kpp = k00(points, points, unit);
  b.v0 = k00(marginal.grid(), points, unit);
  marginal.p_factor().matrixL().solveInPlace(b.v0);
  b.g0 = b.v0.transpose() * b.v0;
  return b;
}

// With B = K11^-1 k10(t, x) and v = V0 - W B = L^-1 C(X, x):
//   C(x, x)  = Kpp - k10' B
//   v'v      = G0 - H'B - B'H + B'(W'W)B,  H = W'V0
//   W'v      = H - (W'W) B
Eigen::VectorXd ScaledPosterior::mean_at(const PathBasis& basis) const {
  const double t02 = marginal_->tau0() * marginal_->tau0();
  Eigen::VectorXd out = basis.v0.transpose() * white_alpha_;
  if (t_.size() > 0) {
    const KernelHyperd unit{1.0, marginal_->h(), std::nullopt};
    const Eigen::MatrixXd b = k11_factor_.solve(k10(t_, basis.points, unit));
    out.noalias() -= b.transpose() * (w_.transpose() * white_alpha_);
  }
  return t02 * out;
}

Eigen::MatrixXd ScaledPosterior::cov_at(const PathBasis& basis) const {
  const double t02 = marginal_->tau0() * marginal_->tau0();
  if (t_.size() == 0) {
    Eigen::MatrixXd out = sigma2_ * t02 * (basis.kpp - t02 * basis.g0);
    return 0.5 * (out + out.transpose());
  }
  const KernelHyperd unit{1.0, marginal_->h(), std::nullopt};
  const Eigen::MatrixXd kb = k10(t_, basis.points, unit);  // M x k
  const Eigen::MatrixXd b = k11_factor_.solve(kb);
  const Eigen::MatrixXd h = w_.transpose() * basis.v0;  // M x k
  const Eigen::MatrixXd ww = w_.transpose() * w_;
  Eigen::MatrixXd prior = basis.kpp;
  prior.noalias() -= kb.transpose() * b;
  const Eigen::MatrixXd hb = h.transpose() * b;
  Eigen::MatrixXd reduce = basis.g0 - hb - hb.transpose();
  reduce.noalias() += b.transpose() * (ww * b);
  Eigen::MatrixXd wv = h;
  wv.noalias() -= ww * b;
  const Eigen::MatrixXd z = s_factor_.matrixL().solve(wv);
  reduce.noalias() += z.transpose() * z;
  Eigen::MatrixXd out = sigma2_ * t02 * (prior - t02 * reduce);
  return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd ScaledPosterior::sample(const PathBasis& basis, int count, Rng& rng) const {
  const double tau2 = marginal_->tau0() * marginal_->tau0() * sigma2_;
  return sample_gaussian<double>(mean_at(basis), cov_at(basis), count, default_jitter * tau2, rng);
}

}  // namespace slam
