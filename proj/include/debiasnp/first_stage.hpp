#pragma once

// Pluggable first-stage regressors. The debiasing theory needs nothing from
// the first stage beyond a smooth error, so the bundled models are simple
// stand-ins: zero, ordinary least squares, k-nearest-neighbors, boxcar
// Nadaraya-Watson, an oracle passthrough (simulation only) and a `biased`
// wrapper that adds a deliberate smooth offset for robustness experiments.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace debiasnp {

namespace detail {
inline constexpr double kTwoPi = 6.28318530717958647692;
}

// Deliberate perturbation added by the `biased` wrapper; both shapes are
// smooth, so the wrapped model keeps a smooth error.
struct Offset {
  enum class Kind { constant, smooth_sine };
  Kind kind = Kind::constant;
  double value = 0.0;  // constant shift, or sine amplitude

  double eval(double x) const {
    return kind == Kind::constant ? value : value * std::sin(detail::kTwoPi * x);
  }

  static Offset constant(double c) { return Offset{Kind::constant, c}; }
  static Offset smooth_sine(double amplitude) { return Offset{Kind::smooth_sine, amplitude}; }
};

struct RegressorSpec {
  enum class Kind { zero, linear, knn, nadaraya_watson, oracle, biased };

  Kind kind = Kind::zero;
  int k = 1;               // knn
  double bandwidth = 0.0;  // nadaraya_watson
  std::shared_ptr<const RegressorSpec> base;  // biased
  Offset offset;                              // biased

  static RegressorSpec zero() { return RegressorSpec{}; }
  static RegressorSpec linear() {
    RegressorSpec s;
    s.kind = Kind::linear;
    return s;
  }
  static RegressorSpec knn(int k) {
    RegressorSpec s;
    s.kind = Kind::knn;
    s.k = k;
    return s;
  }
  static RegressorSpec nadaraya_watson(double bandwidth) {
    RegressorSpec s;
    s.kind = Kind::nadaraya_watson;
    s.bandwidth = bandwidth;
    return s;
  }
  static RegressorSpec oracle() {
    RegressorSpec s;
    s.kind = Kind::oracle;
    return s;
  }
  static RegressorSpec biased(RegressorSpec base_spec, Offset offset) {
    RegressorSpec s;
    s.kind = Kind::biased;
    s.base = std::make_shared<const RegressorSpec>(std::move(base_spec));
    s.offset = offset;
    return s;
  }

  void validate(int depth = 0) const {
    switch (kind) {
      case Kind::knn:
        if (k < 1) throw std::invalid_argument("regressor: knn needs k >= 1");
        break;
      case Kind::nadaraya_watson:
        if (!(bandwidth > 0.0))
          throw std::invalid_argument("regressor: nadaraya_watson needs bandwidth > 0");
        break;
      case Kind::biased:
        if (depth >= 2) throw std::invalid_argument("regressor: biased nesting depth exceeds 2");
        if (!base) throw std::invalid_argument("regressor: biased wrapper has no base");
        base->validate(depth + 1);
        break;
      default:
        break;
    }
  }

  bool uses_oracle() const {
    if (kind == Kind::oracle) return true;
    return kind == Kind::biased && base && base->uses_oracle();
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::zero:
        return "zero";
      case Kind::linear:
        return "linear";
      case Kind::knn:
        return "knn:" + std::to_string(k);
      case Kind::nadaraya_watson:
        return "nw:" + std::to_string(bandwidth);
      case Kind::oracle:
        return "oracle";
      case Kind::biased: {
        const std::string off = offset.kind == Offset::Kind::constant
                                    ? "constant(" + std::to_string(offset.value) + ")"
                                    : "sine(" + std::to_string(offset.value) + ")";
        return "biased(" + (base ? base->to_string() : "?") + "," + off + ")";
      }
    }
    return "?";
  }
};

// A fitted first-stage model: the spec, an immutable snapshot of its training
// fold, and a pure prediction rule on [0, 1].
class FittedRegressor {
 public:
  double predict(double x) const {
    if (!(x >= 0.0 && x <= 1.0))
      throw std::domain_error("predict: x outside [0,1]: " + std::to_string(x));
    const double value = predict_impl(x);
    if (!std::isfinite(value))
      throw std::runtime_error("predict: non-finite prediction at x=" + std::to_string(x));
    return value;
  }

  const RegressorSpec& spec() const { return spec_; }

 private:
  friend FittedRegressor fit(const RegressorSpec&, std::span<const double>,
                             std::span<const double>, const std::function<double(double)>&);
  friend FittedRegressor make_biased(FittedRegressor, Offset);

  double predict_impl(double x) const {
    switch (spec_.kind) {
      case RegressorSpec::Kind::zero:
        return 0.0;
      case RegressorSpec::Kind::linear:
        return intercept_ + slope_ * x;
      case RegressorSpec::Kind::knn:
        return knn_mean(x);
      case RegressorSpec::Kind::nadaraya_watson:
        return nw_mean(x);
      case RegressorSpec::Kind::oracle:
        return oracle_(x);
      case RegressorSpec::Kind::biased:
        return base_->predict(x) + spec_.offset.eval(x);
    }
    throw std::logic_error("predict: unknown regressor kind");
  }

  // Mean of the k nearest training targets; distance ties go to the lower
  // training-fold index. The selected set is sorted before summing so the
  // result is independent of selection order.
  double knn_mean(double x) const {
    const std::size_t m = xs_.size();
    const std::size_t k = static_cast<std::size_t>(spec_.k);
    std::vector<std::pair<double, std::size_t>> by_dist(m);
    for (std::size_t i = 0; i < m; ++i) by_dist[i] = {std::fabs(xs_[i] - x), i};
    std::nth_element(by_dist.begin(), by_dist.begin() + (k - 1), by_dist.end());
    std::sort(by_dist.begin(), by_dist.begin() + k);
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += ys_[by_dist[j].second];
    return acc / static_cast<double>(k);
  }

  // Boxcar-kernel-weighted mean; an empty window falls back to the global
  // fold mean.
  double nw_mean(double x) const {
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < xs_.size(); ++i) {
      if (std::fabs(xs_[i] - x) <= spec_.bandwidth) {
        acc += ys_[i];
        ++count;
      }
    }
    return count > 0 ? acc / static_cast<double>(count) : fold_mean_;
  }

  RegressorSpec spec_;
  std::vector<double> xs_, ys_;  // training fold snapshot
  double intercept_ = 0.0, slope_ = 0.0;
  double fold_mean_ = 0.0;
  std::function<double(double)> oracle_;
  std::shared_ptr<const FittedRegressor> base_;
};

// Fits the requested model using only the supplied fold. The oracle kind
// needs the data-generating truth and is therefore only available when the
// caller passes oracle_f0 (simulation contexts do; the CLI fit path does not).
inline FittedRegressor fit(const RegressorSpec& spec, std::span<const double> xs,
                           std::span<const double> ys,
                           const std::function<double(double)>& oracle_f0 = {}) {
  spec.validate();
  if (xs.size() != ys.size()) throw std::invalid_argument("fit: xs and ys differ in length");
  FittedRegressor model;
  model.spec_ = spec;
  switch (spec.kind) {
    case RegressorSpec::Kind::zero:
      break;
    case RegressorSpec::Kind::linear: {
      if (xs.size() < 2) throw std::invalid_argument("fit: linear needs at least 2 points");
      const double n = static_cast<double>(xs.size());
      double xbar = 0.0, ybar = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        xbar += xs[i];
        ybar += ys[i];
      }
      xbar /= n;
      ybar /= n;
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - xbar) * (xs[i] - xbar);
        sxy += (xs[i] - xbar) * (ys[i] - ybar);
      }
      model.slope_ = sxx > 0.0 ? sxy / sxx : 0.0;
      model.intercept_ = ybar - model.slope_ * xbar;
      break;
    }
    case RegressorSpec::Kind::knn: {
      const std::size_t need = std::max<std::size_t>(2, static_cast<std::size_t>(spec.k));
      if (xs.size() < need)
        throw std::invalid_argument("fit: knn(k=" + std::to_string(spec.k) + ") needs at least " +
                                    std::to_string(need) + " points, got " +
                                    std::to_string(xs.size()));
      model.xs_.assign(xs.begin(), xs.end());
      model.ys_.assign(ys.begin(), ys.end());
      break;
    }
    case RegressorSpec::Kind::nadaraya_watson: {
      if (xs.size() < 2)
        throw std::invalid_argument("fit: nadaraya_watson needs at least 2 points");
      model.xs_.assign(xs.begin(), xs.end());
      model.ys_.assign(ys.begin(), ys.end());
      model.fold_mean_ =
          std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
      break;
    }
    case RegressorSpec::Kind::oracle: {
      if (!oracle_f0)
        throw std::invalid_argument("fit: oracle regressor requires a simulation context");
      model.oracle_ = oracle_f0;
      break;
    }
    case RegressorSpec::Kind::biased: {
      FittedRegressor base = fit(*spec.base, xs, ys, oracle_f0);
      model.base_ = std::make_shared<const FittedRegressor>(std::move(base));
      break;
    }
  }
  return model;
}

// Wraps an already-fitted model with a smooth offset.
inline FittedRegressor make_biased(FittedRegressor base, Offset offset) {
  FittedRegressor model;
  model.spec_ = RegressorSpec::biased(base.spec(), offset);
  model.base_ = std::make_shared<const FittedRegressor>(std::move(base));
  return model;
}

}  // namespace debiasnp
