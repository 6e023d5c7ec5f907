#pragma once

// Observation storage, validation, deterministic splitting and CSV ingestion.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "debiasnp/rng.hpp"

namespace debiasnp {

// Problems with the data itself (file contents, sizes, ranges). The CLI maps
// these to its data-error exit code.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Affine map between original covariate units and the unit interval:
// original = offset + scale * unit.
struct Rescale {
  double offset = 0.0;
  double scale = 1.0;

  bool identity() const { return offset == 0.0 && scale == 1.0; }
  double to_unit(double x) const { return (x - offset) / scale; }
  double from_unit(double u) const { return offset + scale * u; }
};

// Paired covariate/target observations with covariates in [0, 1].
// Immutable after construction.
class Dataset {
 public:
  Dataset(std::vector<double> xs, std::vector<double> ys, Rescale rescale = {})
      : xs_(std::move(xs)), ys_(std::move(ys)), rescale_(rescale) {
    if (xs_.size() != ys_.size())
      throw DataError("dataset: xs and ys have different lengths");
    if (xs_.size() < 2) throw DataError("dataset: need at least 2 observations");
    for (std::size_t i = 0; i < xs_.size(); ++i) {
      if (!std::isfinite(xs_[i]) || !std::isfinite(ys_[i]))
        throw DataError("dataset: non-finite value at index " + std::to_string(i));
      if (xs_[i] < 0.0 || xs_[i] > 1.0)
        throw DataError("dataset: covariate outside [0,1] at index " + std::to_string(i));
    }
  }

  std::size_t size() const { return xs_.size(); }
  std::span<const double> xs() const { return xs_; }
  std::span<const double> ys() const { return ys_; }
  double x(std::size_t i) const { return xs_[i]; }
  double y(std::size_t i) const { return ys_[i]; }
  const Rescale& rescale() const { return rescale_; }

 private:
  std::vector<double> xs_;
  std::vector<double> ys_;
  Rescale rescale_;
};

// Disjoint index partition; fold 1 trains the first stage, fold 2 feeds the
// local polynomial correction. m is the second-stage fold size.
struct Split {
  std::vector<std::size_t> fold1;
  std::vector<std::size_t> fold2;

  std::size_t m() const { return fold2.size(); }
  Split swapped() const { return Split{fold2, fold1}; }
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace detail

// Reads a comma-delimited file with a header row and extracts the named
// columns. Covariates found outside [0, 1] are affinely rescaled onto it and
// the map is recorded so predictions can be reported in original units.
inline Dataset load_csv(const std::filesystem::path& path, const std::string& x_col,
                        const std::string& y_col) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());
  const auto header = detail::split_line(line);
  std::size_t xi = header.size(), yi = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = detail::trim(header[i]);
    if (name == x_col) xi = i;
    if (name == y_col) yi = i;
  }
  if (xi == header.size()) throw DataError("missing column '" + x_col + "' in " + path.string());
  if (yi == header.size()) throw DataError("missing column '" + y_col + "' in " + path.string());

  std::vector<double> xs, ys;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_line(line);
    if (fields.size() != header.size())
      throw DataError("row " + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    double x, y;
    if (!detail::parse_double(fields[xi], x) || !std::isfinite(x))
      throw DataError("row " + std::to_string(lineno) + ": cannot parse '" + fields[xi] +
                      "' in column '" + x_col + "'");
    if (!detail::parse_double(fields[yi], y) || !std::isfinite(y))
      throw DataError("row " + std::to_string(lineno) + ": cannot parse '" + fields[yi] +
                      "' in column '" + y_col + "'");
    xs.push_back(x);
    ys.push_back(y);
  }
  if (xs.size() < 2) throw DataError("need at least 2 data rows, got " + std::to_string(xs.size()));

  const auto [mn_it, mx_it] = std::minmax_element(xs.begin(), xs.end());
  const double mn = *mn_it, mx = *mx_it;
  Rescale rescale;
  if (mn < 0.0 || mx > 1.0) {
    const double range = mx - mn;
    if (range == 0.0)
      throw DataError("constant covariate column '" + x_col + "': rescale to [0,1] undefined");
    rescale = Rescale{mn, range};
    for (double& x : xs) x = rescale.to_unit(x);
    // Guard against rounding pushing the endpoints out.
    for (double& x : xs) x = std::clamp(x, 0.0, 1.0);
  }
  return Dataset(std::move(xs), std::move(ys), rescale);
}

// Uniformly random partition into two folds, reproducible from (n, seed).
// Even n gives folds of n/2; odd n puts the extra point in fold 2.
inline Split split_even(const Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (n < 4) throw DataError("split_even: need n >= 4, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const std::size_t half = n / 2;
  Split split;
  split.fold1.assign(idx.begin(), idx.begin() + half);
  split.fold2.assign(idx.begin() + half, idx.end());
  std::sort(split.fold1.begin(), split.fold1.end());
  std::sort(split.fold2.begin(), split.fold2.end());
  return split;
}

}  // namespace debiasnp
