#pragma once

// Squared-exponential kernel and the derivative cross-covariance blocks used
// to condition a Gaussian process on f'(t) = 0.
//
// With k(x, x') = tau^2 exp(-(x - x')^2 / (2 h^2)):
//   k00(x, x') = k(x, x')                        cov(f(x),  f(x'))
//   k01(x, t)  = dk/dt     = k * (x - t) / h^2   cov(f(x),  f'(t))
//   k10(t, x)  = k01(x, t)^T                     cov(f'(t), f(x))
//   k11(t, t') = d2k/dtdt' = k * (1/h^2 - (t - t')^2 / h^4)
//
// All blocks are templated on the scalar type so the same code runs in
// long double for finite-difference checks.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace slam {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar = double>
struct KernelHyper {
  Scalar tau{1};
  Scalar h{1};
  // Amplitude relative to the noise level, tau^2 = tau0^2 * sigma^2.
  std::optional<Scalar> tau0;

  void validate() const {
    using std::isfinite;
    if (!(tau > Scalar(0)) || !isfinite(tau))
      throw std::invalid_argument("kernel amplitude tau must be positive and finite");
    if (!(h > Scalar(0)) || !isfinite(h))
      throw std::invalid_argument("kernel length-scale h must be positive and finite");
    if (tau0 && !(*tau0 > Scalar(0)))
      throw std::invalid_argument("kernel amplitude ratio tau0 must be positive");
  }

  static KernelHyper from_ratio(Scalar tau0, Scalar h, Scalar sigma2) {
    using std::sqrt;
    KernelHyper hyper{tau0 * sqrt(sigma2), h, tau0};
    hyper.validate();
    return hyper;
  }

  // Same length-scale, unit amplitude.
  KernelHyper unit() const { return KernelHyper{Scalar(1), h, std::nullopt}; }
};

using KernelHyperd = KernelHyper<double>;

template <typename DerivedX, typename DerivedY>
Matrix<typename DerivedX::Scalar> k00(const Eigen::MatrixBase<DerivedX>& x,
                                      const Eigen::MatrixBase<DerivedY>& xp,
                                      const KernelHyper<typename DerivedX::Scalar>& hyper) {
  using Scalar = typename DerivedX::Scalar;
  using std::exp;
  hyper.validate();
  const Scalar tau2 = hyper.tau * hyper.tau;
  const Scalar inv2h2 = Scalar(1) / (Scalar(2) * hyper.h * hyper.h);
  Matrix<Scalar> out(x.size(), xp.size());
  for (Eigen::Index j = 0; j < xp.size(); ++j)
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const Scalar d = x(i) - xp(j);
      out(i, j) = tau2 * exp(-d * d * inv2h2);
    }
  return out;
}

template <typename DerivedX, typename DerivedT>
Matrix<typename DerivedX::Scalar> k01(const Eigen::MatrixBase<DerivedX>& x,
                                      const Eigen::MatrixBase<DerivedT>& t,
                                      const KernelHyper<typename DerivedX::Scalar>& hyper) {
  using Scalar = typename DerivedX::Scalar;
  using std::exp;
  hyper.validate();
  const Scalar tau2 = hyper.tau * hyper.tau;
  const Scalar inv_h2 = Scalar(1) / (hyper.h * hyper.h);
  Matrix<Scalar> out(x.size(), t.size());
  for (Eigen::Index m = 0; m < t.size(); ++m)
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const Scalar d = x(i) - t(m);
      out(i, m) = tau2 * exp(-Scalar(0.5) * d * d * inv_h2) * d * inv_h2;
    }
  return out;
}

template <typename DerivedT, typename DerivedX>
Matrix<typename DerivedT::Scalar> k10(const Eigen::MatrixBase<DerivedT>& t,
                                      const Eigen::MatrixBase<DerivedX>& x,
                                      const KernelHyper<typename DerivedT::Scalar>& hyper) {
  return k01(x, t, hyper).transpose();
}

template <typename DerivedT, typename DerivedU>
Matrix<typename DerivedT::Scalar> k11(const Eigen::MatrixBase<DerivedT>& t,
                                      const Eigen::MatrixBase<DerivedU>& tp,
                                      const KernelHyper<typename DerivedT::Scalar>& hyper) {
  using Scalar = typename DerivedT::Scalar;
  using std::exp;
  hyper.validate();
  const Scalar tau2 = hyper.tau * hyper.tau;
  const Scalar inv_h2 = Scalar(1) / (hyper.h * hyper.h);
  Matrix<Scalar> out(t.size(), tp.size());
  for (Eigen::Index j = 0; j < tp.size(); ++j)
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const Scalar d = t(i) - tp(j);
      const Scalar d2 = d * d * inv_h2;
      out(i, j) = tau2 * exp(-Scalar(0.5) * d2) * inv_h2 * (Scalar(1) - d2);
    }
  return out;
}

}  // namespace slam
