#include "slam/latent_anova.hpp"

#include <stdexcept>

namespace slam {

namespace {

void check_dims(const AnovaCoefficients& coeffs, const FactorDesign& design) {
  if (coeffs.beta.cols() != coeffs.beta0.size())
    throw std::invalid_argument("coefficient matrix has the wrong number of components");
  if (static_cast<std::size_t>(coeffs.beta.rows()) != design.column_count() ||
      design.z.cols() != coeffs.beta.rows())
    throw std::invalid_argument("coefficient rows do not match the design columns");
}

}  // namespace

Eigen::MatrixXd linear_predictor(const AnovaCoefficients& coeffs, const FactorDesign& design) {
  check_dims(coeffs, design);
  Eigen::MatrixXd eta = design.z * coeffs.beta;
  eta.rowwise() += coeffs.beta0.transpose();
  return eta;
}

GroupLocations locations_from_coefficients(const AnovaCoefficients& coeffs, const FactorDesign& design,
                                           const Link& link) {
  const Eigen::MatrixXd v = linear_predictor(coeffs, design);
  GroupLocations out;
  out.r = v.unaryExpr([&](double x) { return link.inverse(x); });
  return out;
}

GroupLocations locations_from_coefficients(const AnovaCoefficients& coeffs, const FactorDesign& design,
                                           const Link& link, const SearchWindows& windows) {
  GroupLocations out = locations_from_coefficients(coeffs, design, link);
  if (windows.size() != static_cast<std::size_t>(out.r.cols()))
    throw std::invalid_argument("window count does not match the number of components");
  out.latency.resize(out.r.rows(), out.r.cols());
  for (Eigen::Index g = 0; g < out.r.rows(); ++g)
    for (Eigen::Index m = 0; m < out.r.cols(); ++m)
      out.latency(g, m) = latency_time(out.r(g, m), windows[static_cast<std::size_t>(m)]);
  return out;
}

CoefficientPrior CoefficientPrior::uniform(Eigen::Index columns, Eigen::Index components, double mean,
                                           double sd) {
  return {Eigen::VectorXd::Constant(components, mean), Eigen::VectorXd::Constant(components, sd),
          Eigen::MatrixXd::Constant(columns, components, mean),
          Eigen::MatrixXd::Constant(columns, components, sd)};
}

void CoefficientPrior::validate(Eigen::Index columns, Eigen::Index components) const {
  if (mu0.size() != components || sd0.size() != components || mu1.rows() != columns ||
      mu1.cols() != components || sd1.rows() != columns || sd1.cols() != components)
    throw std::invalid_argument("coefficient prior dimensions do not match the model");
  if ((sd0.array() <= 0.0).any() || (sd1.array() <= 0.0).any())
    throw std::invalid_argument("coefficient prior standard deviations must be positive");
}

double coefficient_logprior(const AnovaCoefficients& coeffs, const CoefficientPrior& prior) {
  prior.validate(coeffs.columns(), coeffs.components());
  double lp = 0.0;
  for (Eigen::Index m = 0; m < coeffs.components(); ++m) {
    lp += normal_logpdf(coeffs.beta0(m), prior.mu0(m), prior.sd0(m));
    for (Eigen::Index p = 0; p < coeffs.columns(); ++p)
      lp += normal_logpdf(coeffs.beta(p, m), prior.mu1(p, m), prior.sd1(p, m));
  }
  return lp;
}

double latency_time(double r, const Window& window) {
  if (!(r > 0.0 && r < 1.0)) throw std::domain_error("latency_time: r must lie in (0, 1)");
  return (1.0 - r) * window.a + r * window.b;
}

double latency_fraction(double time, const Window& window) {
  if (!window.contains(time)) throw std::domain_error("latency_fraction: time outside its window");
  return (time - window.a) / window.width();
}

}  // namespace slam
