#pragma once

// Densities and samplers used by the sampler, plus the link functions.
//
// Conventions:
//   Gamma(shape, rate)         density ~ x^(shape-1) exp(-rate x)
//   InverseGamma(shape, scale) density ~ x^(-shape-1) exp(-scale / x)
// so that 1/X ~ Gamma(shape, rate = scale) when X ~ InverseGamma(shape, scale).

#include "slam/rng.hpp"

#include <string>
#include <string_view>

namespace slam {

double normal_cdf(double z);
// Inverse standard normal CDF (Wichura AS241, relative error ~1e-16).
double normal_quantile(double p);

double normal_logpdf(double x, double mean, double sd);
double gamma_logpdf(double x, double shape, double rate);
double invgamma_logpdf(double x, double shape, double scale);
double beta_logpdf(double u, double alpha, double beta);

double normal_sample(double mean, double sd, Rng& rng);
double gamma_sample(double shape, double rate, Rng& rng);
double invgamma_sample(double shape, double scale, Rng& rng);
double beta_sample(double alpha, double beta, Rng& rng);
double uniform_sample(double a, double b, Rng& rng);

// Beta distribution rescaled to (a, b), with location r in (0,1) and scale eta:
// shapes are (r * eta, (1 - r) * eta).
struct GeneralBeta {
  double r{0.5};
  double eta{2.0};
  double a{0.0};
  double b{1.0};

  double shape1() const { return r * eta; }
  double shape2() const { return (1.0 - r) * eta; }
  double mean() const { return (1.0 - r) * a + r * b; }
  double variance() const { return (b - a) * (b - a) * r * (1.0 - r) / (1.0 + eta); }
  void validate() const;
};

// -inf outside (a, b).
double gbeta_logpdf(double x, const GeneralBeta& params);
double gbeta_sample(const GeneralBeta& params, Rng& rng);

// Normal(mean, sd^2) restricted to (a, b).  When the interval carries
// negligible mass (under 1e-300) both functions fall back to Uniform(a, b),
// so sampler and density always describe the same proposal.
double trunc_normal_sample(double mean, double sd, double a, double b, Rng& rng);
double trunc_normal_logpdf(double x, double mean, double sd, double a, double b);

enum class LinkKind { logit, probit, cloglog };

class Link {
 public:
  static constexpr double clamp_eps = 1e-12;

  explicit Link(LinkKind kind = LinkKind::logit) : kind_(kind) {}
  static Link parse(std::string_view name);

  LinkKind kind() const { return kind_; }
  std::string name() const;

  // (0,1) -> R; throws std::domain_error outside (0,1).
  double link(double r) const;
  // R -> [clamp_eps, 1 - clamp_eps].
  double inverse(double v) const;

 private:
  LinkKind kind_;
};

}  // namespace slam
