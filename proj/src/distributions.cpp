#include "slam/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace slam {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2 pi))
constexpr double kMinMass = 1e-300;

// Uniform on the open interval (0, 1).
double canonical(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double log_beta_fn(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Standardized truncation limits, flipped so the interval never lies wholly
// in the upper tail; mass is computed from lower-tail CDF values.
struct TnFrame {
  double lo;
  double hi;
  bool flipped;
  double mass;
};

TnFrame tn_frame(double mean, double sd, double a, double b) {
  TnFrame f{(a - mean) / sd, (b - mean) / sd, false, 0.0};
  if (f.lo > 0.0) {
    f = TnFrame{-f.hi, -f.lo, true, 0.0};
  }
  f.mass = normal_cdf(f.hi) - normal_cdf(f.lo);
  return f;
}

void check_interval(double sd, double a, double b) {
  if (!(sd > 0.0)) throw std::invalid_argument("truncated normal: sd must be positive");
  if (!(a < b)) throw std::invalid_argument("truncated normal: requires a < b");
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("normal_quantile: p outside [0, 1]");
  }
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = q < 0.0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
              3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
            4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
            2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
            5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0.0 ? -val : val;
}

double normal_logpdf(double x, double mean, double sd) {
  if (!(sd > 0.0)) throw std::invalid_argument("normal_logpdf: sd must be positive");
  const double z = (x - mean) / sd;
  return -0.5 * z * z - kLogSqrt2Pi - std::log(sd);
}

double gamma_logpdf(double x, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("gamma_logpdf: shape and rate must be positive");
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double invgamma_logpdf(double x, double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0))
    throw std::invalid_argument("invgamma_logpdf: shape and scale must be positive");
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

double beta_logpdf(double u, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::invalid_argument("beta_logpdf: shapes must be positive");
  if (!(u > 0.0 && u < 1.0)) return kNegInf;
  return (alpha - 1.0) * std::log(u) + (beta - 1.0) * std::log1p(-u) - log_beta_fn(alpha, beta);
}

double normal_sample(double mean, double sd, Rng& rng) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

double gamma_sample(double shape, double rate, Rng& rng) {
  if (!(shape > 0.0) || !(rate > 0.0))
    throw std::invalid_argument("gamma_sample: shape and rate must be positive");
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

double invgamma_sample(double shape, double scale, Rng& rng) {
  if (!(shape > 0.0) || !(scale > 0.0))
    throw std::invalid_argument("invgamma_sample: shape and scale must be positive");
  return 1.0 / gamma_sample(shape, scale, rng);
}

double beta_sample(double alpha, double beta, Rng& rng) {
  if (!(alpha > 0.0) || !(beta > 0.0))
    throw std::invalid_argument("beta_sample: shapes must be positive");
  // log Gamma(a) = log Gamma(a + 1) + log(U) / a keeps small shapes from
  // underflowing to exactly zero.
  const double g1 = std::log(gamma_sample(alpha + 1.0, 1.0, rng)) + std::log(canonical(rng)) / alpha;
  const double g2 = std::log(gamma_sample(beta + 1.0, 1.0, rng)) + std::log(canonical(rng)) / beta;
  double x = 1.0 / (1.0 + std::exp(g2 - g1));
  if (!(x > 0.0)) x = std::numeric_limits<double>::min();
  if (!(x < 1.0)) x = std::nextafter(1.0, 0.0);
  return x;
}

double uniform_sample(double a, double b, Rng& rng) { return a + (b - a) * canonical(rng); }

void GeneralBeta::validate() const {
  if (!(r > 0.0 && r < 1.0)) throw std::invalid_argument("gbeta: location r must lie in (0, 1)");
  if (!(eta > 0.0)) throw std::invalid_argument("gbeta: scale eta must be positive");
  if (!(a < b)) throw std::invalid_argument("gbeta: support requires a < b");
}

double gbeta_logpdf(double x, const GeneralBeta& p) {
  p.validate();
  if (!(x > p.a && x < p.b)) return kNegInf;
  const double width = p.b - p.a;
  const double u = (x - p.a) / width;
  const double v = (p.b - x) / width;
  return (p.shape1() - 1.0) * std::log(u) + (p.shape2() - 1.0) * std::log(v) -
         log_beta_fn(p.shape1(), p.shape2()) - std::log(width);
}

double gbeta_sample(const GeneralBeta& p, Rng& rng) {
  p.validate();
  const double x = p.a + (p.b - p.a) * beta_sample(p.shape1(), p.shape2(), rng);
  return std::clamp(x, std::nextafter(p.a, p.b), std::nextafter(p.b, p.a));
}

double trunc_normal_sample(double mean, double sd, double a, double b, Rng& rng) {
  check_interval(sd, a, b);
  const TnFrame f = tn_frame(mean, sd, a, b);
  double x;
  if (!(f.mass > kMinMass)) {
    x = uniform_sample(a, b, rng);
  } else {
    const double p = normal_cdf(f.lo) + canonical(rng) * f.mass;
    const double z = std::clamp(normal_quantile(p), f.lo, f.hi);
    x = f.flipped ? mean - sd * z : mean + sd * z;
  }
  return std::clamp(x, std::nextafter(a, b), std::nextafter(b, a));
}

double trunc_normal_logpdf(double x, double mean, double sd, double a, double b) {
  check_interval(sd, a, b);
  if (!(x > a && x < b)) return kNegInf;
  const TnFrame f = tn_frame(mean, sd, a, b);
  if (!(f.mass > kMinMass)) return -std::log(b - a);
  return normal_logpdf(x, mean, sd) - std::log(f.mass);
}

Link Link::parse(std::string_view name) {
  if (name == "logit") return Link(LinkKind::logit);
  if (name == "probit") return Link(LinkKind::probit);
  if (name == "cloglog") return Link(LinkKind::cloglog);
  throw std::invalid_argument("unknown link function '" + std::string(name) + "'");
}

std::string Link::name() const {
  switch (kind_) {
    case LinkKind::logit: return "logit";
    case LinkKind::probit: return "probit";
    case LinkKind::cloglog: return "cloglog";
  }
  return "logit";
}

double Link::link(double r) const {
  if (!(r > 0.0 && r < 1.0)) throw std::domain_error("link: argument must lie in (0, 1)");
  switch (kind_) {
    case LinkKind::logit: return std::log(r) - std::log1p(-r);
    case LinkKind::probit: return normal_quantile(r);
    case LinkKind::cloglog: return std::log(-std::log1p(-r));
  }
  return 0.0;
}

double Link::inverse(double v) const {
  double r = 0.5;
  switch (kind_) {
    case LinkKind::logit:
      r = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      break;
    case LinkKind::probit: r = normal_cdf(v); break;
    case LinkKind::cloglog: r = -std::expm1(-std::exp(v)); break;
  }
  return std::clamp(r, clamp_eps, 1.0 - clamp_eps);
}

}  // namespace slam
