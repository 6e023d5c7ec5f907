#pragma once

// Second-stage local polynomial machinery: scaled polynomial basis, boxcar
// kernel, design matrix, closed-form evaluation weights and the residual
// estimator built from them, plus a brute-force weighted-least-squares oracle
// kept as an independent code path for testing.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace debiasnp {

inline constexpr int kMaxDegree = 10;
// Relative eigenvalue threshold below which a design is declared singular.
inline constexpr double kSingularRelTol = 1e-10;

enum class Kernel { boxcar };

inline const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::boxcar:
      return "boxcar";
  }
  return "?";
}

// Knobs of the second-stage smoother.
struct LocalPolyConfig {
  int degree = 1;
  double bandwidth = 0.0;
  Kernel kernel = Kernel::boxcar;

  void validate() const {
    if (degree < 0 || degree > kMaxDegree)
      throw std::invalid_argument("LocalPolyConfig: degree must be in [0, " +
                                  std::to_string(kMaxDegree) + "]");
    if (!(bandwidth > 0.0) || bandwidth > 1.0)
      throw std::invalid_argument("LocalPolyConfig: bandwidth must be in (0, 1]");
  }
};

// Basis (1, u, u^2/2!, ..., u^degree/degree!).
inline Eigen::VectorXd poly_basis(double u, int degree) {
  if (degree < 0 || degree > kMaxDegree)
    throw std::invalid_argument("poly_basis: degree out of range");
  Eigen::VectorXd rho(degree + 1);
  rho(0) = 1.0;
  for (int k = 1; k <= degree; ++k) rho(k) = rho(k - 1) * u / static_cast<double>(k);
  return rho;
}

// Boxcar kernel on the pre-scaled argument u = (x - x0) / h: the closed
// indicator of |u| <= 1, so a weight's support is exactly the window
// |x - x0| <= h.
inline double kernel_eval(double u) { return std::fabs(u) <= 1.0 ? 1.0 : 0.0; }

struct DesignMatrix {
  Eigen::MatrixXd entries;  // (degree+1) x (degree+1), symmetric PSD
  double x0 = 0.0;
  std::size_t in_window_count = 0;
};

// (1/(m h)) * sum_i rho(u_i) rho(u_i)^T K(u_i) over the supplied fold,
// u_i = (x_i - x0) / h.
inline DesignMatrix design_matrix(std::span<const double> xs, double x0,
                                  const LocalPolyConfig& cfg) {
  cfg.validate();
  if (xs.empty()) throw std::invalid_argument("design_matrix: empty fold");
  const int p = cfg.degree + 1;
  const double h = cfg.bandwidth;
  DesignMatrix dm;
  dm.x0 = x0;
  dm.entries = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rho(p);
  for (double x : xs) {
    const double u = (x - x0) / h;
    if (kernel_eval(u) == 0.0) continue;
    ++dm.in_window_count;
    rho(0) = 1.0;
    for (int k = 1; k < p; ++k) rho(k) = rho(k - 1) * u / static_cast<double>(k);
    dm.entries.selfadjointView<Eigen::Lower>().rankUpdate(rho);
  }
  dm.entries.triangularView<Eigen::StrictlyUpper>() =
      dm.entries.triangularView<Eigen::StrictlyLower>().transpose();
  dm.entries /= static_cast<double>(xs.size()) * h;
  return dm;
}

// Raised when a local fit cannot be solved: fewer than degree+1 points in the
// window, or the design's smallest eigenvalue falls under the relative
// tolerance. Carries enough context for callers to widen h or lower degree.
class SingularDesign : public std::runtime_error {
 public:
  SingularDesign(double x0, double bandwidth, std::size_t in_window_count)
      : std::runtime_error("singular local design at x0=" + std::to_string(x0) +
                           " (h=" + std::to_string(bandwidth) +
                           ", in-window points=" + std::to_string(in_window_count) + ")"),
        x0_(x0),
        bandwidth_(bandwidth),
        in_window_count_(in_window_count) {}

  double x0() const { return x0_; }
  double bandwidth() const { return bandwidth_; }
  std::size_t in_window_count() const { return in_window_count_; }

 private:
  double x0_;
  double bandwidth_;
  std::size_t in_window_count_;
};

// Evaluation weights, aligned with the fold that produced them. Raw weights
// are the closed-form w_h; dividing by the fold size m gives the normalized
// weights W_i that sum to one and reproduce polynomials.
struct WeightVector {
  std::vector<double> weights;
  double x0 = 0.0;
  bool normalized = false;
};

inline WeightVector normalize(WeightVector w, std::size_t m) {
  if (w.normalized) return w;
  if (m == 0) throw std::invalid_argument("normalize: m must be positive");
  for (double& v : w.weights) v /= static_cast<double>(m);
  w.normalized = true;
  return w;
}

// Closed-form weights w_h(x_i, x0) = (1/h) rho(0)^T B^{-1} rho(u_i) K(u_i).
// The linear system B v = rho(0) is solved symmetrically (LDLT with one
// refinement step); B is never inverted explicitly. Weights are exactly zero
// outside the window.
inline WeightVector lp_weights(std::span<const double> xs, double x0,
                               const LocalPolyConfig& cfg) {
  const DesignMatrix dm = design_matrix(xs, x0, cfg);
  const int p = cfg.degree + 1;
  const double h = cfg.bandwidth;
  if (dm.in_window_count < static_cast<std::size_t>(p))
    throw SingularDesign(x0, h, dm.in_window_count);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dm.entries, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues()(0);
  const double lmax = es.eigenvalues()(p - 1);
  if (!(lmax > 0.0) || lmin < kSingularRelTol * lmax)
    throw SingularDesign(x0, h, dm.in_window_count);

  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(p);
  e0(0) = 1.0;  // rho(0)
  const auto ldlt = dm.entries.ldlt();
  Eigen::VectorXd v = ldlt.solve(e0);
  v += ldlt.solve(e0 - dm.entries * v);

  WeightVector out;
  out.x0 = x0;
  out.weights.assign(xs.size(), 0.0);
  Eigen::VectorXd rho(p);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double u = (xs[i] - x0) / h;
    if (kernel_eval(u) == 0.0) continue;
    rho(0) = 1.0;
    for (int k = 1; k < p; ++k) rho(k) = rho(k - 1) * u / static_cast<double>(k);
    out.weights[i] = v.dot(rho) / h;
  }
  return out;
}

// (1/m) sum_i residual_i * w_h(x_i, x0); with normalized weights the 1/m is
// already folded in.
inline double residual_fit(std::span<const double> residuals, const WeightVector& w,
                           std::size_t m) {
  if (residuals.size() != w.weights.size())
    throw std::invalid_argument("residual_fit: residuals and weights differ in length");
  if (m == 0) throw std::invalid_argument("residual_fit: m must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) acc += residuals[i] * w.weights[i];
  return w.normalized ? acc : acc / static_cast<double>(m);
}

// Brute-force weighted least squares: forms the kernel-weighted normal
// equations over in-window points and solves them by Gaussian elimination
// with partial pivoting. Deliberately shares no solver code with lp_weights;
// used as a test oracle. Returns all degree+1 coefficients of the fit in the
// scaled basis; component 0 is the fitted value at x0.
inline Eigen::VectorXd wls_oracle(std::span<const double> xs, std::span<const double> rs,
                                  double x0, const LocalPolyConfig& cfg) {
  cfg.validate();
  if (xs.size() != rs.size())
    throw std::invalid_argument("wls_oracle: xs and rs differ in length");
  const int p = cfg.degree + 1;
  const double h = cfg.bandwidth;

  std::vector<std::vector<double>> a(p, std::vector<double>(p, 0.0));
  std::vector<double> c(p, 0.0);
  std::size_t in_window = 0;
  std::vector<double> rho(p);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double u = (xs[i] - x0) / h;
    if (kernel_eval(u) == 0.0) continue;
    ++in_window;
    rho[0] = 1.0;
    for (int k = 1; k < p; ++k) rho[k] = rho[k - 1] * u / static_cast<double>(k);
    for (int r = 0; r < p; ++r) {
      for (int s = 0; s < p; ++s) a[r][s] += rho[r] * rho[s];
      c[r] += rho[r] * rs[i];
    }
  }
  if (in_window < static_cast<std::size_t>(p)) throw SingularDesign(x0, h, in_window);

  double amax = 0.0;
  for (int r = 0; r < p; ++r)
    for (int s = 0; s < p; ++s) amax = std::max(amax, std::fabs(a[r][s]));

  // Gaussian elimination with partial pivoting on [A | c].
  std::vector<int> perm(p);
  for (int r = 0; r < p; ++r) perm[r] = r;
  for (int col = 0; col < p; ++col) {
    int pivot = col;
    for (int r = col + 1; r < p; ++r)
      if (std::fabs(a[perm[r]][col]) > std::fabs(a[perm[pivot]][col])) pivot = r;
    std::swap(perm[col], perm[pivot]);
    const double pv = a[perm[col]][col];
    if (std::fabs(pv) < 1e-12 * amax || pv == 0.0) throw SingularDesign(x0, h, in_window);
    for (int r = col + 1; r < p; ++r) {
      const double f = a[perm[r]][col] / pv;
      if (f == 0.0) continue;
      for (int s = col; s < p; ++s) a[perm[r]][s] -= f * a[perm[col]][s];
      c[perm[r]] -= f * c[perm[col]];
    }
  }
  Eigen::VectorXd beta(p);
  for (int r = p - 1; r >= 0; --r) {
    double acc = c[perm[r]];
    for (int s = r + 1; s < p; ++s) acc -= a[perm[r]][s] * beta(s);
    beta(r) = acc / a[perm[r]][r];
  }
  return beta;
}

}  // namespace debiasnp
