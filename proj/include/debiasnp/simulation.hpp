#pragma once

// Seeded Monte Carlo harness verifying the estimator's finite-sample behavior
// at desk scale: pointwise rate slopes, CI coverage, standardized-error
// normality, sup-norm rates, covariate-shift robustness and double
// robustness. Replication (n, r) draws its streams from seeds derived from
// (master_seed, n, r), so runs are deterministic and adding sample sizes
// never perturbs existing cells.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "debiasnp/dataset.hpp"
#include "debiasnp/debias.hpp"
#include "debiasnp/inference.hpp"
#include "debiasnp/report.hpp"
#include "debiasnp/rng.hpp"

namespace debiasnp {

namespace detail {
inline double nan_d() { return std::numeric_limits<double>::quiet_NaN(); }
}  // namespace detail

// Covariate distribution on [0, 1].
struct CovariateDist {
  enum class Kind { uniform01, beta };
  Kind kind = Kind::uniform01;
  double a = 1.0, b = 1.0;

  static CovariateDist uniform01() { return CovariateDist{}; }
  static CovariateDist beta(double a, double b) { return CovariateDist{Kind::beta, a, b}; }

  void validate() const {
    if (kind == Kind::beta && (!(a > 0.0) || !(b > 0.0)))
      throw std::invalid_argument("covariate: beta parameters must be positive");
  }

  double draw(Rng& rng) const {
    return kind == Kind::uniform01 ? rng.uniform01() : rng.beta(a, b);
  }

  double density(double x) const {
    if (x < 0.0 || x > 1.0) return 0.0;
    if (kind == Kind::uniform01) return 1.0;
    const double log_beta_ab = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    double log_num;
    if (x == 0.0) {
      if (a > 1.0) return 0.0;
      if (a < 1.0) return std::numeric_limits<double>::infinity();
      log_num = (b - 1.0) * std::log1p(-x);
    } else if (x == 1.0) {
      if (b > 1.0) return 0.0;
      if (b < 1.0) return std::numeric_limits<double>::infinity();
      log_num = (a - 1.0) * std::log(x);
    } else {
      log_num = (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
    }
    return std::exp(log_num - log_beta_ab);
  }

  std::string to_string() const {
    if (kind == Kind::uniform01) return "uniform";
    return "beta:" + std::to_string(a) + "," + std::to_string(b);
  }
};

// Data-generating process: regression function, sub-Gaussian noise and
// covariate distribution. noise_scale 0 is allowed (noiseless limit).
struct Dgp {
  enum class F0 { sine, holder_kink, linear };
  enum class Noise { gaussian, scaled_rademacher, uniform_centered };

  F0 f0 = F0::sine;
  Noise noise = Noise::gaussian;
  double noise_scale = 0.5;  // sigma, or halfwidth for uniform_centered
  CovariateDist covariate;

  double f0_eval(double x) const {
    switch (f0) {
      case F0::sine:
        return std::sin(detail::kTwoPi * x);
      case F0::holder_kink:
        return std::pow(std::fabs(x - 0.5), 1.5);
      case F0::linear:
        return 1.0 + 2.0 * x;
    }
    return 0.0;
  }

  // Smoothness used for bandwidth rules: sine is treated as s=2 (exercised
  // with degree 1), the kink is s=1.5, and the analytic linear case is
  // capped at s=3.
  double smoothness() const {
    switch (f0) {
      case F0::sine:
        return 2.0;
      case F0::holder_kink:
        return 1.5;
      case F0::linear:
        return 3.0;
    }
    return 2.0;
  }

  void validate() const {
    if (!(noise_scale >= 0.0))
      throw std::invalid_argument("dgp: noise scale must be nonnegative");
    covariate.validate();
  }

  std::string f0_name() const {
    switch (f0) {
      case F0::sine:
        return "sine";
      case F0::holder_kink:
        return "kink";
      case F0::linear:
        return "linear";
    }
    return "?";
  }

  std::string noise_name() const {
    switch (noise) {
      case Noise::gaussian:
        return "gaussian";
      case Noise::scaled_rademacher:
        return "rademacher";
      case Noise::uniform_centered:
        return "uniform";
    }
    return "?";
  }
};

struct McConfig {
  Dgp dgp;
  RegressorSpec reg;
  BandwidthRule rule;
  int degree = 1;
  std::vector<std::size_t> sample_sizes;
  std::size_t replications = 100;
  double x0 = 0.5;
  std::vector<double> grid;  // uniform / shift modes
  double level = 0.95;
  std::uint64_t master_seed = 42;

  void validate() const {
    dgp.validate();
    reg.validate();
    if (sample_sizes.empty()) throw std::invalid_argument("mc: sample_sizes must be nonempty");
    for (std::size_t i = 1; i < sample_sizes.size(); ++i)
      if (sample_sizes[i] <= sample_sizes[i - 1])
        throw std::invalid_argument("mc: sample_sizes must be strictly increasing");
    if (replications < 1) throw std::invalid_argument("mc: replications must be >= 1");
    if (!(x0 >= 0.0 && x0 <= 1.0)) throw std::invalid_argument("mc: x0 must lie in [0,1]");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("mc: level must lie in (0,1)");
  }
};

struct RepRecord {
  std::string label;
  std::size_t n = 0;
  std::size_t rep = 0;
  bool ok = false;
  double ftilde = detail::nan_d();
  double var_hat = detail::nan_d();
  bool ci_hit = false;
  double sup_err = detail::nan_d();   // over the report grid
  double sup_fine = detail::nan_d();  // over the quadrature grid (shift)
  double shift_mse = detail::nan_d();
  double train_mse = detail::nan_d();
  double baseline_shift_mse = detail::nan_d();
  double baseline_train_mse = detail::nan_d();
  bool sup_bound_ok = true;
  std::string error;
};

struct CellStats {
  std::string label;
  std::size_t n = 0;
  double h = detail::nan_d();
  std::size_t reps_ok = 0;
  std::size_t reps_failed = 0;
  std::size_t point_failures = 0;
  double mean = detail::nan_d();
  double bias = detail::nan_d();
  double variance = detail::nan_d();
  double mse = detail::nan_d();
  double var_times_nh = detail::nan_d();
  double coverage = detail::nan_d();
  double mean_sup = detail::nan_d();
  double mean_sup_sq = detail::nan_d();
  // normality diagnostics
  double ks = detail::nan_d();
  double z_mean = detail::nan_d();
  double z_var = detail::nan_d();
  std::size_t z_used = 0;
  std::size_t z_excluded = 0;
  // covariate shift
  double shift_mse = detail::nan_d();
  double train_mse = detail::nan_d();
  double shift_ratio = detail::nan_d();
  double baseline_shift_mse = detail::nan_d();
  double baseline_train_mse = detail::nan_d();
  double baseline_ratio = detail::nan_d();
  std::size_t sup_bound_failures = 0;
};

struct SlopeFit {
  bool defined = false;
  double slope = detail::nan_d();
  double std_error = detail::nan_d();
  double intercept = detail::nan_d();
};

struct McReport {
  std::string mode;
  std::uint64_t master_seed = 0;
  bool low_confidence = false;  // inputs below the documented recommendations
  std::vector<RepRecord> reps;
  std::vector<CellStats> cells;
  SlopeFit slope;

  const CellStats* cell(std::size_t n, const std::string& label = "") const {
    for (const auto& c : cells)
      if (c.n == n && c.label == label) return &c;
    return nullptr;
  }
};

// X_i ~ covariate_dist i.i.d., Y_i = f0(X_i) + eps_i, deterministic per seed.
// Draw order is (x, eps) per observation.
inline Dataset draw_sample(const Dgp& dgp, std::size_t n, std::uint64_t seed) {
  dgp.validate();
  if (n < 4) throw std::invalid_argument("draw_sample: need n >= 4");
  Rng rng(seed);
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = dgp.covariate.draw(rng);
    double eps = 0.0;
    switch (dgp.noise) {
      case Dgp::Noise::gaussian:
        eps = dgp.noise_scale * rng.normal();
        break;
      case Dgp::Noise::scaled_rademacher:
        eps = dgp.noise_scale * rng.rademacher();
        break;
      case Dgp::Noise::uniform_centered:
        eps = rng.uniform(-dgp.noise_scale, dgp.noise_scale);
        break;
    }
    xs[i] = x;
    ys[i] = dgp.f0_eval(x) + eps;
  }
  return Dataset(std::move(xs), std::move(ys));
}

// Ordinary least squares of y on x with the usual slope standard error.
inline SlopeFit fit_line(std::span<const double> x, std::span<const double> y) {
  SlopeFit out;
  const std::size_t k = x.size();
  if (k != y.size() || k < 2) return out;
  double xbar = 0.0, ybar = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    xbar += x[i];
    ybar += y[i];
  }
  xbar /= static_cast<double>(k);
  ybar /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (x[i] - xbar) * (x[i] - xbar);
    sxy += (x[i] - xbar) * (y[i] - ybar);
  }
  if (!(sxx > 0.0)) return out;
  out.slope = sxy / sxx;
  out.intercept = ybar - out.slope * xbar;
  out.defined = true;
  if (k > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double e = y[i] - out.intercept - out.slope * x[i];
      rss += e * e;
    }
    out.std_error = std::sqrt(rss / static_cast<double>(k - 2) / sxx);
  }
  return out;
}

// One-sample Kolmogorov-Smirnov statistic against the standard normal:
// exact sup-difference between the empirical CDF and Phi.
inline double ks_statistic(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("ks_statistic: empty sample");
  std::sort(values.begin(), values.end());
  const double r = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double f = normal_cdf(values[i]);
    d = std::max(d, std::max(static_cast<double>(i + 1) / r - f,
                             f - static_cast<double>(i) / r));
  }
  return d;
}

// Asymptotic KS critical values c(alpha)/sqrt(R) for alpha in {.10,.05,.01}.
inline double ks_critical(double alpha, std::size_t r) {
  double c;
  if (alpha == 0.10)
    c = 1.22;
  else if (alpha == 0.05)
    c = 1.36;
  else if (alpha == 0.01)
    c = 1.63;
  else
    throw std::invalid_argument("ks_critical: tabulated levels are 0.10, 0.05, 0.01");
  return c / std::sqrt(static_cast<double>(r));
}

inline std::vector<double> make_grid(double lo, double hi, std::size_t count) {
  if (count < 2 || !(hi > lo)) throw std::invalid_argument("make_grid: bad parameters");
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

namespace detail {

inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kSplitStream = 2;

struct RepContext {
  std::uint64_t data_seed;
  std::uint64_t split_seed;
};

inline RepContext rep_context(std::uint64_t master, std::size_t n, std::size_t r) {
  const std::uint64_t rep_seed = derive_seed(master, n, r);
  return RepContext{derive_seed(rep_seed, kDataStream, 0), derive_seed(rep_seed, kSplitStream, 0)};
}

inline std::function<double(double)> oracle_of(const Dgp& dgp) {
  return [dgp](double x) { return dgp.f0_eval(x); };
}

// Population-style moments (divide by count), so mse = bias^2 + variance
// holds as an identity.
inline void point_moments(const std::vector<double>& values, double truth, CellStats& cell) {
  const double r = static_cast<double>(values.size());
  if (values.empty()) return;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= r;
  double var = 0.0, mse = 0.0;
  for (double v : values) {
    var += (v - mean) * (v - mean);
    mse += (v - truth) * (v - truth);
  }
  cell.mean = mean;
  cell.bias = mean - truth;
  cell.variance = var / r;
  cell.mse = mse / r;
}

inline void require_some_ok(const CellStats& cell, const std::string& mode) {
  if (cell.reps_ok == 0)
    throw std::runtime_error("run_" + mode + ": all replications failed at n=" +
                             std::to_string(cell.n));
}

}  // namespace detail

// Pointwise MSE decay: per-n empirical bias/variance/MSE at x0 and the
// least-squares slope of ln MSE against ln n.
inline McReport run_rate(const McConfig& cfg) {
  cfg.validate();
  McReport report;
  report.mode = "rate";
  report.master_seed = cfg.master_seed;
  report.low_confidence = cfg.sample_sizes.size() < 4 || cfg.replications < 100;

  const auto f0 = detail::oracle_of(cfg.dgp);
  const double truth = cfg.dgp.f0_eval(cfg.x0);
  const std::vector<double> eval{cfg.x0};
  std::vector<double> log_n, log_mse;
  for (std::size_t n : cfg.sample_sizes) {
    CellStats cell;
    cell.n = n;
    cell.h = bandwidth(cfg.rule, n);
    std::vector<double> values;
    values.reserve(cfg.replications);
    for (std::size_t r = 0; r < cfg.replications; ++r) {
      const auto ctx = detail::rep_context(cfg.master_seed, n, r);
      RepRecord rec;
      rec.n = n;
      rec.rep = r;
      try {
        const Dataset ds = draw_sample(cfg.dgp, n, ctx.data_seed);
        const DebiasedFit fit = estimate(ds, ctx.split_seed, cfg.reg,
                                         EstimateConfig{cfg.degree, cfg.rule}, eval, f0);
        const PointFit& p = fit.points.front();
        if (!p.ok) throw SingularDesign(p.x0, fit.h, p.in_window_count);
        rec.ok = true;
        rec.ftilde = p.ftilde;
        values.push_back(p.ftilde);
        ++cell.reps_ok;
      } catch (const std::exception& e) {
        rec.error = e.what();
        ++cell.reps_failed;
      }
      report.reps.push_back(std::move(rec));
    }
    detail::require_some_ok(cell, "rate");
    detail::point_moments(values, truth, cell);
    cell.var_times_nh = cell.variance * static_cast<double>(n) * cell.h;
    if (cell.mse > 0.0) {
      log_n.push_back(std::log(static_cast<double>(n)));
      log_mse.push_back(std::log(cell.mse));
    }
    report.cells.push_back(std::move(cell));
  }
  report.slope = fit_line(log_n, log_mse);
  return report;
}

// Coverage of the level-`level` confidence interval for f0(x0).
inline McReport run_coverage(const McConfig& cfg) {
  cfg.validate();
  McReport report;
  report.mode = "coverage";
  report.master_seed = cfg.master_seed;
  report.low_confidence =
      cfg.replications < 500 || cfg.rule.regime != BandwidthRule::Regime::normality;

  const auto f0 = detail::oracle_of(cfg.dgp);
  const double truth = cfg.dgp.f0_eval(cfg.x0);
  const std::vector<double> eval{cfg.x0};
  for (std::size_t n : cfg.sample_sizes) {
    CellStats cell;
    cell.n = n;
    cell.h = bandwidth(cfg.rule, n);
    std::vector<double> values;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < cfg.replications; ++r) {
      const auto ctx = detail::rep_context(cfg.master_seed, n, r);
      RepRecord rec;
      rec.n = n;
      rec.rep = r;
      try {
        const Dataset ds = draw_sample(cfg.dgp, n, ctx.data_seed);
        const DebiasedFit fit = estimate(ds, ctx.split_seed, cfg.reg,
                                         EstimateConfig{cfg.degree, cfg.rule}, eval, f0);
        const InferenceResult ir = confidence_interval(fit, cfg.x0, cfg.level);
        rec.ok = true;
        rec.ftilde = ir.ftilde;
        rec.var_hat = ir.var_hat;
        rec.ci_hit = ir.ci_lo <= truth && truth <= ir.ci_hi;
        hits += rec.ci_hit ? 1 : 0;
        values.push_back(ir.ftilde);
        ++cell.reps_ok;
      } catch (const std::exception& e) {
        rec.error = e.what();
        ++cell.reps_failed;
      }
      report.reps.push_back(std::move(rec));
    }
    detail::require_some_ok(cell, "coverage");
    detail::point_moments(values, truth, cell);
    cell.coverage = static_cast<double>(hits) / static_cast<double>(cell.reps_ok);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

// Standardized errors (ftilde - f0)/sqrt(var_hat) collected per n, with the
// exact empirical-CDF KS statistic against the standard normal.
inline McReport run_normality(const McConfig& cfg) {
  cfg.validate();
  McReport report;
  report.mode = "normality";
  report.master_seed = cfg.master_seed;
  report.low_confidence =
      cfg.replications < 1000 || cfg.rule.regime != BandwidthRule::Regime::normality;

  const auto f0 = detail::oracle_of(cfg.dgp);
  const double truth = cfg.dgp.f0_eval(cfg.x0);
  const std::vector<double> eval{cfg.x0};
  for (std::size_t n : cfg.sample_sizes) {
    CellStats cell;
    cell.n = n;
    cell.h = bandwidth(cfg.rule, n);
    std::vector<double> values, ftilde, var_hat;
    for (std::size_t r = 0; r < cfg.replications; ++r) {
      const auto ctx = detail::rep_context(cfg.master_seed, n, r);
      RepRecord rec;
      rec.n = n;
      rec.rep = r;
      try {
        const Dataset ds = draw_sample(cfg.dgp, n, ctx.data_seed);
        const DebiasedFit fit = estimate(ds, ctx.split_seed, cfg.reg,
                                         EstimateConfig{cfg.degree, cfg.rule}, eval, f0);
        const PointFit& p = fit.points.front();
        if (!p.ok) throw SingularDesign(p.x0, fit.h, p.in_window_count);
        rec.ok = true;
        rec.ftilde = p.ftilde;
        rec.var_hat = variance_estimate(fit, cfg.x0);
        ftilde.push_back(rec.ftilde);
        var_hat.push_back(rec.var_hat);
        values.push_back(rec.ftilde);
        ++cell.reps_ok;
      } catch (const std::exception& e) {
        rec.error = e.what();
        ++cell.reps_failed;
      }
      report.reps.push_back(std::move(rec));
    }
    detail::require_some_ok(cell, "normality");
    detail::point_moments(values, truth, cell);

    const StandardizedErrors se = standardized_errors(ftilde, var_hat, truth);
    cell.z_used = se.values.size();
    cell.z_excluded = se.excluded + cell.reps_failed;
    if (cell.z_excluded * 20 > cfg.replications)
      throw std::runtime_error("run_normality: more than 5% of replications excluded at n=" +
                               std::to_string(n));
    if (!se.values.empty()) {
      cell.ks = ks_statistic(se.values);
      double zm = 0.0;
      for (double z : se.values) zm += z;
      zm /= static_cast<double>(se.values.size());
      double zv = 0.0;
      for (double z : se.values) zv += (z - zm) * (z - zm);
      cell.z_mean = zm;
      cell.z_var = se.values.size() > 1
                       ? zv / static_cast<double>(se.values.size() - 1)
                       : detail::nan_d();
    }
    report.cells.push_back(std::move(cell));
  }
  return report;
}

// Sup-norm error over an interior grid, per replication; aggregates mean sup^2
// per n and the slope of ln(mean sup^2) against ln(n/log n).
inline McReport run_uniform(const McConfig& cfg, std::span<const double> grid) {
  cfg.validate();
  if (grid.size() < 2) throw std::invalid_argument("run_uniform: grid too small");
  for (double g : grid)
    if (g < 0.05 || g > 0.95)
      throw std::invalid_argument("run_uniform: grid must lie inside [0.05, 0.95]");
  McReport report;
  report.mode = "uniform";
  report.master_seed = cfg.master_seed;
  report.low_confidence =
      cfg.replications < 100 || cfg.rule.regime != BandwidthRule::Regime::uniform;

  const auto f0 = detail::oracle_of(cfg.dgp);
  const EstimateConfig est_cfg{cfg.degree, cfg.rule, Kernel::boxcar, /*keep_weights=*/false};
  std::vector<double> log_n_over_logn, log_mean_sup_sq;
  for (std::size_t n : cfg.sample_sizes) {
    CellStats cell;
    cell.n = n;
    cell.h = bandwidth(cfg.rule, n);
    double sup_acc = 0.0, sup_sq_acc = 0.0;
    for (std::size_t r = 0; r < cfg.replications; ++r) {
      const auto ctx = detail::rep_context(cfg.master_seed, n, r);
      RepRecord rec;
      rec.n = n;
      rec.rep = r;
      try {
        const Dataset ds = draw_sample(cfg.dgp, n, ctx.data_seed);
        const DebiasedFit fit = estimate(ds, ctx.split_seed, cfg.reg, est_cfg, grid, f0);
        double sup = 0.0;
        std::size_t ok_points = 0;
        for (const PointFit& p : fit.points) {
          if (!p.ok) {
            ++cell.point_failures;
            continue;
          }
          sup = std::max(sup, std::fabs(p.ftilde - cfg.dgp.f0_eval(p.x0)));
          ++ok_points;
        }
        if (ok_points == 0) throw std::runtime_error("all grid points failed");
        rec.ok = true;
        rec.sup_err = sup;
        sup_acc += sup;
        sup_sq_acc += sup * sup;
        ++cell.reps_ok;
      } catch (const std::exception& e) {
        rec.error = e.what();
        ++cell.reps_failed;
      }
      report.reps.push_back(std::move(rec));
    }
    detail::require_some_ok(cell, "uniform");
    cell.mean_sup = sup_acc / static_cast<double>(cell.reps_ok);
    cell.mean_sup_sq = sup_sq_acc / static_cast<double>(cell.reps_ok);
    if (cell.mean_sup_sq > 0.0) {
      const double nn = static_cast<double>(n);
      log_n_over_logn.push_back(std::log(nn / std::log(nn)));
      log_mean_sup_sq.push_back(std::log(cell.mean_sup_sq));
    }
    report.cells.push_back(std::move(cell));
  }
  report.slope = fit_line(log_n_over_logn, log_mean_sup_sq);
  return report;
}

inline constexpr std::size_t kQuadraturePoints = 10000;

// Trains under `train`, evaluates under `test`: sup error over the report
// grid, plus train- and test-population MSE by midpoint quadrature of
// (ftilde - f0)^2 against each density. Also tracks the first stage alone as
// a non-debiased baseline. Per replication, checks the sup bound
// test_mse <= sup_fine^2 * (quadrature mass of the test density).
inline McReport run_shift(const McConfig& cfg, const CovariateDist& train,
                          const CovariateDist& test) {
  cfg.validate();
  train.validate();
  test.validate();
  const std::vector<double> grid =
      cfg.grid.empty() ? make_grid(0.05, 0.95, 201) : cfg.grid;

  McReport report;
  report.mode = "shift";
  report.master_seed = cfg.master_seed;
  report.low_confidence = cfg.replications < 20;

  Dgp dgp = cfg.dgp;
  dgp.covariate = train;
  const auto f0 = detail::oracle_of(dgp);

  // Midpoint quadrature nodes and density masses on [0, 1].
  std::vector<double> quad(kQuadraturePoints);
  const double dx = 1.0 / static_cast<double>(kQuadraturePoints);
  for (std::size_t k = 0; k < kQuadraturePoints; ++k)
    quad[k] = (static_cast<double>(k) + 0.5) * dx;

  std::vector<double> eval(quad);
  eval.insert(eval.end(), grid.begin(), grid.end());

  const EstimateConfig est_cfg{cfg.degree, cfg.rule, Kernel::boxcar, /*keep_weights=*/false};
  for (std::size_t n : cfg.sample_sizes) {
    CellStats cell;
    cell.n = n;
    cell.h = bandwidth(cfg.rule, n);
    double shift_acc = 0.0, train_acc = 0.0, b_shift_acc = 0.0, b_train_acc = 0.0;
    double sup_acc = 0.0;
    for (std::size_t r = 0; r < cfg.replications; ++r) {
      const auto ctx = detail::rep_context(cfg.master_seed, n, r);
      RepRecord rec;
      rec.n = n;
      rec.rep = r;
      try {
        const Dataset ds = draw_sample(dgp, n, ctx.data_seed);
        const DebiasedFit fit = estimate(ds, ctx.split_seed, cfg.reg, est_cfg, eval, f0);

        double mse_test = 0.0, mse_train = 0.0, b_test = 0.0, b_train = 0.0;
        double sup_fine = 0.0, test_mass = 0.0;
        for (std::size_t k = 0; k < kQuadraturePoints; ++k) {
          const PointFit& p = fit.points[k];
          if (!p.ok) {
            ++cell.point_failures;
            continue;
          }
          const double truth = dgp.f0_eval(p.x0);
          const double err = p.ftilde - truth;
          const double base_err = p.fhat - truth;
          const double wt_test = test.density(p.x0) * dx;
          const double wt_train = train.density(p.x0) * dx;
          mse_test += err * err * wt_test;
          mse_train += err * err * wt_train;
          b_test += base_err * base_err * wt_test;
          b_train += base_err * base_err * wt_train;
          test_mass += wt_test;
          sup_fine = std::max(sup_fine, std::fabs(err));
        }
        double sup_grid = 0.0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
          const PointFit& p = fit.points[kQuadraturePoints + k];
          if (!p.ok) {
            ++cell.point_failures;
            continue;
          }
          sup_grid = std::max(sup_grid, std::fabs(p.ftilde - dgp.f0_eval(p.x0)));
        }
        rec.ok = true;
        rec.sup_err = sup_grid;
        rec.sup_fine = sup_fine;
        rec.shift_mse = mse_test;
        rec.train_mse = mse_train;
        rec.baseline_shift_mse = b_test;
        rec.baseline_train_mse = b_train;
        rec.sup_bound_ok = mse_test <= sup_fine * sup_fine * test_mass + 1e-12;
        if (!rec.sup_bound_ok) ++cell.sup_bound_failures;
        shift_acc += mse_test;
        train_acc += mse_train;
        b_shift_acc += b_test;
        b_train_acc += b_train;
        sup_acc += sup_grid;
        ++cell.reps_ok;
      } catch (const std::exception& e) {
        rec.error = e.what();
        ++cell.reps_failed;
      }
      report.reps.push_back(std::move(rec));
    }
    detail::require_some_ok(cell, "shift");
    const double ok = static_cast<double>(cell.reps_ok);
    cell.shift_mse = shift_acc / ok;
    cell.train_mse = train_acc / ok;
    cell.baseline_shift_mse = b_shift_acc / ok;
    cell.baseline_train_mse = b_train_acc / ok;
    cell.mean_sup = sup_acc / ok;
    cell.shift_ratio = cell.train_mse > 0.0 ? cell.shift_mse / cell.train_mse : detail::nan_d();
    cell.baseline_ratio = cell.baseline_train_mse > 0.0
                              ? cell.baseline_shift_mse / cell.baseline_train_mse
                              : detail::nan_d();
    report.cells.push_back(std::move(cell));
  }
  return report;
}

// Double robustness: (a) deliberately inconsistent first stage (oracle plus a
// unit constant) with the configured shrinking-bandwidth rule; (b) oracle
// first stage with a fixed non-vanishing bandwidth. Reports the signed
// empirical bias of ftilde(x0) per n for each scenario.
inline McReport run_double_robustness(const McConfig& cfg) {
  cfg.validate();
  McReport report;
  report.mode = "double_robustness";
  report.master_seed = cfg.master_seed;
  report.low_confidence = cfg.replications < 200;

  const auto f0 = detail::oracle_of(cfg.dgp);
  const double truth = cfg.dgp.f0_eval(cfg.x0);
  const std::vector<double> eval{cfg.x0};

  struct Scenario {
    std::string label;
    RegressorSpec reg;
    BandwidthRule rule;
  };
  const Scenario scenarios[] = {
      {"broken_first_stage", RegressorSpec::biased(RegressorSpec::oracle(), Offset::constant(1.0)),
       cfg.rule},
      {"fixed_bandwidth", RegressorSpec::oracle(), BandwidthRule::fixed(0.5)},
  };

  for (const Scenario& sc : scenarios) {
    for (std::size_t n : cfg.sample_sizes) {
      CellStats cell;
      cell.label = sc.label;
      cell.n = n;
      cell.h = bandwidth(sc.rule, n);
      std::vector<double> values;
      for (std::size_t r = 0; r < cfg.replications; ++r) {
        const auto ctx = detail::rep_context(cfg.master_seed, n, r);
        RepRecord rec;
        rec.label = sc.label;
        rec.n = n;
        rec.rep = r;
        try {
          const Dataset ds = draw_sample(cfg.dgp, n, ctx.data_seed);
          const DebiasedFit fit = estimate(ds, ctx.split_seed, sc.reg,
                                           EstimateConfig{cfg.degree, sc.rule}, eval, f0);
          const PointFit& p = fit.points.front();
          if (!p.ok) throw SingularDesign(p.x0, fit.h, p.in_window_count);
          rec.ok = true;
          rec.ftilde = p.ftilde;
          values.push_back(p.ftilde);
          ++cell.reps_ok;
        } catch (const std::exception& e) {
          rec.error = e.what();
          ++cell.reps_failed;
        }
        report.reps.push_back(std::move(rec));
      }
      detail::require_some_ok(cell, "double_robustness");
      detail::point_moments(values, truth, cell);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report serialization

inline Json config_echo(const McConfig& cfg) {
  Json j = Json::object();
  j["dgp"] = {{"f0", cfg.dgp.f0_name()},
              {"noise", cfg.dgp.noise_name()},
              {"noise_scale", cfg.dgp.noise_scale},
              {"covariate", cfg.dgp.covariate.to_string()}};
  j["reg"] = cfg.reg.to_string();
  j["bandwidth"] = cfg.rule.to_string();
  j["degree"] = cfg.degree;
  j["sample_sizes"] = cfg.sample_sizes;
  j["replications"] = cfg.replications;
  j["x0"] = cfg.x0;
  if (!cfg.grid.empty())
    j["grid"] = {{"lo", cfg.grid.front()}, {"hi", cfg.grid.back()}, {"count", cfg.grid.size()}};
  j["level"] = cfg.level;
  j["seed"] = cfg.master_seed;
  return j;
}

inline Report to_report(const McReport& mc, const McConfig& cfg) {
  Report rep;
  rep.meta["mode"] = mc.mode;
  rep.meta["seed"] = mc.master_seed;
  rep.meta["low_confidence"] = mc.low_confidence;
  rep.meta["config"] = config_echo(cfg);

  for (const RepRecord& r : mc.reps) {
    Json j = Json::object();
    j["kind"] = "replication";
    if (!r.label.empty()) j["label"] = r.label;
    j["n"] = r.n;
    j["rep"] = r.rep;
    j["ok"] = r.ok;
    if (!r.ok) {
      j["error"] = r.error;
      rep.records.push_back(std::move(j));
      continue;
    }
    if (mc.mode == "rate" || mc.mode == "double_robustness") {
      j["ftilde"] = r.ftilde;
    } else if (mc.mode == "coverage") {
      j["ftilde"] = r.ftilde;
      j["var_hat"] = r.var_hat;
      j["ci_hit"] = r.ci_hit;
    } else if (mc.mode == "normality") {
      j["ftilde"] = r.ftilde;
      j["var_hat"] = r.var_hat;
    } else if (mc.mode == "uniform") {
      j["sup_err"] = r.sup_err;
    } else if (mc.mode == "shift") {
      j["sup_err"] = r.sup_err;
      j["sup_fine"] = r.sup_fine;
      j["shift_mse"] = r.shift_mse;
      j["train_mse"] = r.train_mse;
      j["baseline_shift_mse"] = r.baseline_shift_mse;
      j["baseline_train_mse"] = r.baseline_train_mse;
      j["sup_bound_ok"] = r.sup_bound_ok;
    }
    rep.records.push_back(std::move(j));
  }

  for (const CellStats& c : mc.cells) {
    Json j = Json::object();
    j["kind"] = "cell";
    if (!c.label.empty()) j["label"] = c.label;
    j["n"] = c.n;
    j["h"] = c.h;
    j["reps_ok"] = c.reps_ok;
    j["reps_failed"] = c.reps_failed;
    if (c.point_failures > 0) j["point_failures"] = c.point_failures;
    if (mc.mode == "rate" || mc.mode == "double_robustness" || mc.mode == "coverage" ||
        mc.mode == "normality") {
      j["mean"] = c.mean;
      j["bias"] = c.bias;
      j["variance"] = c.variance;
      j["mse"] = c.mse;
    }
    if (mc.mode == "rate") j["var_times_nh"] = c.var_times_nh;
    if (mc.mode == "coverage") j["coverage"] = c.coverage;
    if (mc.mode == "normality") {
      j["ks"] = c.ks;
      j["z_mean"] = c.z_mean;
      j["z_var"] = c.z_var;
      j["z_used"] = c.z_used;
      j["z_excluded"] = c.z_excluded;
    }
    if (mc.mode == "uniform") {
      j["mean_sup"] = c.mean_sup;
      j["mean_sup_sq"] = c.mean_sup_sq;
    }
    if (mc.mode == "shift") {
      j["mean_sup"] = c.mean_sup;
      j["shift_mse"] = c.shift_mse;
      j["train_mse"] = c.train_mse;
      j["shift_ratio"] = c.shift_ratio;
      j["baseline_shift_mse"] = c.baseline_shift_mse;
      j["baseline_train_mse"] = c.baseline_train_mse;
      j["baseline_ratio"] = c.baseline_ratio;
      j["sup_bound_failures"] = c.sup_bound_failures;
    }
    rep.records.push_back(std::move(j));
  }

  if (mc.mode == "rate" || mc.mode == "uniform") {
    Json j = Json::object();
    j["kind"] = "slope";
    j["defined"] = mc.slope.defined;
    j["slope"] = mc.slope.slope;
    j["std_error"] = mc.slope.std_error;
    j["intercept"] = mc.slope.intercept;
    rep.records.push_back(std::move(j));
  }
  return rep;
}

}  // namespace debiasnp

