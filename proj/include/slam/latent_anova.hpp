#pragma once

// Latent ANOVA on the group-level locations:
//   link(r_g^m) = beta0^m + sum_p beta_p^m z_p(g)
// with z the (dummy or covariate) design row of group g.

#include "slam/data_model.hpp"
#include "slam/distributions.hpp"

#include <Eigen/Dense>

namespace slam {

struct AnovaCoefficients {
  Eigen::VectorXd beta0;  // M
  Eigen::MatrixXd beta;   // P x M, one row per design column

  static AnovaCoefficients zero(Eigen::Index columns, Eigen::Index components) {
    return {Eigen::VectorXd::Zero(components), Eigen::MatrixXd::Zero(columns, components)};
  }
  Eigen::Index components() const { return beta0.size(); }
  Eigen::Index columns() const { return beta.rows(); }
};

struct GroupLocations {
  Eigen::MatrixXd r;        // G x M, in (0, 1)
  Eigen::MatrixXd latency;  // G x M, (1 - r) a^m + r b^m; empty without windows
};

// Linear predictor for every group: G x M.
Eigen::MatrixXd linear_predictor(const AnovaCoefficients& coeffs, const FactorDesign& design);

GroupLocations locations_from_coefficients(const AnovaCoefficients& coeffs, const FactorDesign& design,
                                           const Link& link);
GroupLocations locations_from_coefficients(const AnovaCoefficients& coeffs, const FactorDesign& design,
                                           const Link& link, const SearchWindows& windows);

// Independent normal priors beta0^m ~ N(mu0^m, sd0^m^2), beta_p^m ~ N(mu1_p^m, sd1_p^m^2).
struct CoefficientPrior {
  Eigen::VectorXd mu0;
  Eigen::VectorXd sd0;
  Eigen::MatrixXd mu1;
  Eigen::MatrixXd sd1;

  static CoefficientPrior uniform(Eigen::Index columns, Eigen::Index components, double mean = 0.0,
                                  double sd = 1.0);
  void validate(Eigen::Index columns, Eigen::Index components) const;
};

double coefficient_logprior(const AnovaCoefficients& coeffs, const CoefficientPrior& prior);

double latency_time(double r, const Window& window);
// Inverse of latency_time; throws std::domain_error outside (a, b).
double latency_fraction(double time, const Window& window);

}  // namespace slam
