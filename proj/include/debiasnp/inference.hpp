#pragma once

// Plug-in variance estimation and asymptotic-normality confidence intervals
// for the debiased estimator.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "debiasnp/debias.hpp"

namespace debiasnp {

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

// Standard normal quantile: Acklam's rational approximation polished with one
// Halley step through erfc. Absolute error well under 1e-8 on (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement.
  const double e = 0.5 * std::erfc(-x * 0.70710678118654752440) - p;
  const double u = e * 2.50662827463100050242 * std::exp(0.5 * x * x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

struct InferenceResult {
  double x0 = 0.0;
  double ftilde = 0.0;
  double var_hat = 0.0;  // plug-in estimate of Var(ftilde(x0))
  double V_hat = 0.0;    // n * h * var_hat
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.0;
};

namespace detail {

// Second-stage fit evaluated at a fold-2 covariate; used to turn raw
// residuals into noise proxies. Falls back to the raw residual when the local
// design at that covariate is singular.
inline double bhat_at(const DebiasedFit& fit, double x) {
  try {
    const WeightVector w = lp_weights(fit.fold2_x, x, fit.local_config());
    return residual_fit(fit.residuals, w, fit.m);
  } catch (const SingularDesign&) {
    return 0.0;
  }
}

}  // namespace detail

// Plug-in variance: sum_i (w_i / m)^2 * xi_i^2 with xi_i = y_i - fhat(x_i) -
// bhat(x_i), the second-stage residual at the point's own covariate. Only
// in-window points contribute (their weights are exactly zero otherwise).
inline double variance_estimate(const DebiasedFit& fit, double x0) {
  const PointFit* p = fit.find(x0);
  if (p == nullptr) throw std::invalid_argument("variance_estimate: x0 not among fit points");
  if (!p->ok) throw std::invalid_argument("variance_estimate: fit failed at x0: " + p->error);
  if (p->weights.weights.empty())
    throw std::invalid_argument("variance_estimate: weights were dropped for this fit");
  const double m = static_cast<double>(fit.m);
  double acc = 0.0;
  for (std::size_t i = 0; i < fit.fold2_x.size(); ++i) {
    const double w = p->weights.weights[i];
    if (w == 0.0) continue;
    const double xi = fit.residuals[i] - detail::bhat_at(fit, fit.fold2_x[i]);
    const double wn = p->weights.normalized ? w : w / m;
    acc += wn * wn * xi * xi;
  }
  return acc;
}

// ftilde(x0) +/- z * sqrt(var_hat), z the standard-normal quantile at
// (1+level)/2. Only claimed valid under the normality bandwidth regime; no
// finite-sample bias correction is applied.
inline InferenceResult confidence_interval(const DebiasedFit& fit, double x0, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence_interval: level must lie in (0,1)");
  const PointFit* p = fit.find(x0);
  if (p == nullptr) throw std::invalid_argument("confidence_interval: x0 not among fit points");
  if (!p->ok) throw std::invalid_argument("confidence_interval: fit failed at x0: " + p->error);

  InferenceResult out;
  out.x0 = x0;
  out.ftilde = p->ftilde;
  out.var_hat = variance_estimate(fit, x0);
  out.V_hat = static_cast<double>(fit.n) * fit.h * out.var_hat;
  out.level = level;
  const double z = normal_quantile(0.5 * (1.0 + level));
  const double half = z * std::sqrt(out.var_hat);
  out.ci_lo = out.ftilde - half;
  out.ci_hi = out.ftilde + half;
  return out;
}

struct StandardizedErrors {
  std::vector<double> values;
  std::size_t excluded = 0;  // replications with zero (or invalid) variance
};

// (ftilde_r - f0(x0)) / sqrt(var_hat_r) across replications; replications
// with zero variance are excluded and counted.
inline StandardizedErrors standardized_errors(std::span<const double> ftilde,
                                              std::span<const double> var_hat,
                                              double f0_at_x0) {
  if (ftilde.size() != var_hat.size())
    throw std::invalid_argument("standardized_errors: input lengths differ");
  StandardizedErrors out;
  out.values.reserve(ftilde.size());
  for (std::size_t r = 0; r < ftilde.size(); ++r) {
    if (!(var_hat[r] > 0.0) || !std::isfinite(var_hat[r]) || !std::isfinite(ftilde[r])) {
      ++out.excluded;
      continue;
    }
    out.values.push_back((ftilde[r] - f0_at_x0) / std::sqrt(var_hat[r]));
  }
  return out;
}

}  // namespace debiasnp
