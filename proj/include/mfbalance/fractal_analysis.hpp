#pragma once

// Multifractal detrended fluctuation analysis (MF-DFA) and helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mfbalance/error.hpp"
#include "mfbalance/types.hpp"

namespace mfbalance {

/// Moment orders for the fluctuation function. Never contains 0.
class QGrid {
 public:
  QGrid() : QGrid(std::vector<double>{-5, -4, -3, -2, -1, 1, 2, 3, 4, 5}) {}

  explicit QGrid(std::vector<double> qs) : qs_(std::move(qs)) {
    if (qs_.size() < 2) throw ParameterError("qgrid: need at least two orders");
    for (std::size_t i = 0; i < qs_.size(); ++i) {
      if (!std::isfinite(qs_[i])) throw ParameterError("qgrid: non-finite order");
      if (qs_[i] == 0.0) throw ParameterError("qgrid: q = 0 is not supported");
      if (i > 0 && !(qs_[i] > qs_[i - 1])) throw ParameterError("qgrid: orders must be strictly increasing");
    }
    if (std::find(qs_.begin(), qs_.end(), 2.0) == qs_.end())
      throw ParameterError("qgrid: must contain q = 2");
  }

  const std::vector<double>& qs() const noexcept { return qs_; }
  double q_min() const noexcept { return qs_.front(); }
  double q_max() const noexcept { return qs_.back(); }
  std::size_t size() const noexcept { return qs_.size(); }

 private:
  std::vector<double> qs_;
};

/// Window sizes for the fluctuation function plus the detrending order.
struct ScalePlan {
  std::vector<std::size_t> scales;
  int detrend_order = 2;

  /// `count` log-spaced scales from `min_scale` to n/4.
  static ScalePlan log_spaced(std::size_t n, std::size_t count = 12, std::size_t min_scale = 16,
                              int detrend_order = 2) {
    if (count < 2) throw ParameterError("scale plan: need at least two scales");
    const std::size_t max_scale = n / 4;
    if (max_scale <= min_scale) throw ParameterError("scale plan: series too short for requested scales");
    ScalePlan plan;
    plan.detrend_order = detrend_order;
    const double lo = std::log(static_cast<double>(min_scale));
    const double hi = std::log(static_cast<double>(max_scale));
    for (std::size_t i = 0; i < count; ++i) {
      const double s = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
      auto si = static_cast<std::size_t>(std::lround(s));
      si = std::clamp(si, min_scale, max_scale);
      if (plan.scales.empty() || si > plan.scales.back()) plan.scales.push_back(si);
    }
    plan.validate(n);
    return plan;
  }

  void validate(std::size_t n) const {
    if (detrend_order < 0 || detrend_order > 5) throw ParameterError("scale plan: detrend order out of range");
    if (scales.size() < 8) throw ParameterError("scale plan: need at least 8 scales");
    if (!std::is_sorted(scales.begin(), scales.end()) ||
        std::adjacent_find(scales.begin(), scales.end()) != scales.end())
      throw ParameterError("scale plan: scales must be strictly increasing");
    if (scales.front() < static_cast<std::size_t>(detrend_order) + 2)
      throw ParameterError("scale plan: minimum scale must be at least detrend_order + 2");
    if (scales.back() > n / 4) throw ParameterError("scale plan: maximum scale exceeds n/4");
  }
};

struct MfEstimate {
  std::map<double, double> hq;
  double H = 0.5;
  double dh = 0.0;
  std::map<double, double> fit_quality;
  /// Too few packets, degenerate window, or more than half the windows
  /// dropped for a negative order.
  bool low_confidence = false;
  /// Set when dh < 0 (estimator noise).
  bool negative_dh = false;

  /// Fallback used when a class has too little data to estimate.
  static MfEstimate sentinel(const QGrid& grid) {
    MfEstimate e;
    for (double q : grid.qs()) {
      e.hq[q] = 0.5;
      e.fit_quality[q] = 0.0;
    }
    e.H = 0.5;
    e.dh = 0.0;
    e.low_confidence = true;
    return e;
  }
};

namespace detail {

// Orthonormal polynomial basis of degree <= order over t = 0..s-1,
// stored row-major: basis[k * s + t].
inline std::vector<double> orthonormal_poly_basis(std::size_t s, int order) {
  const std::size_t m = static_cast<std::size_t>(order) + 1;
  std::vector<double> basis(m * s);
  const double centre = 0.5 * static_cast<double>(s - 1);
  const double half = std::max(centre, 1.0);
  for (std::size_t k = 0; k < m; ++k) {
    double* row = &basis[k * s];
    for (std::size_t t = 0; t < s; ++t) row[t] = std::pow((static_cast<double>(t) - centre) / half, static_cast<double>(k));
    // Two passes of modified Gram-Schmidt for stability.
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < k; ++j) {
        const double* prev = &basis[j * s];
        double dot = 0.0;
        for (std::size_t t = 0; t < s; ++t) dot += row[t] * prev[t];
        for (std::size_t t = 0; t < s; ++t) row[t] -= dot * prev[t];
      }
    }
    double norm = 0.0;
    for (std::size_t t = 0; t < s; ++t) norm += row[t] * row[t];
    norm = std::sqrt(norm);
    for (std::size_t t = 0; t < s; ++t) row[t] /= norm;
  }
  return basis;
}

// Mean squared residual of one window after projecting out the basis.
inline double detrended_variance(const double* y, std::size_t s, std::span<const double> basis,
                                 std::vector<double>& resid) {
  const std::size_t m = basis.size() / s;
  resid.assign(y, y + s);
  for (std::size_t k = 0; k < m; ++k) {
    const double* p = &basis[k * s];
    double c = 0.0;
    for (std::size_t t = 0; t < s; ++t) c += resid[t] * p[t];
    for (std::size_t t = 0; t < s; ++t) resid[t] -= c * p[t];
  }
  double ss = 0.0;
  for (double r : resid) ss += r * r;
  return ss / static_cast<double>(s);
}

struct LineFit {
  double slope = 0.0;
  double r2 = 0.0;
};

inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

// Window variances below this fraction of the series variance are treated
// as exactly flat (they are at the level of profile rounding error).
inline constexpr double kFlatWindowRelTol = 1e-24;

}  // namespace detail

/// Generalized Hurst exponents h(q) of `series` by MF-DFA.
///
/// The profile is split into non-overlapping windows from both ends, each
/// window is detrended with a polynomial of order `plan.detrend_order`, and
/// h(q) is the least-squares slope of log F_q(s) against log s.
inline MfEstimate mfdfa(std::span<const double> series, const QGrid& qgrid, const ScalePlan& plan) {
  const std::size_t n = series.size();
  if (n < 1024) throw ParameterError("mfdfa: series length must be at least 1024");
  plan.validate(n);

  for (double v : series)
    if (!std::isfinite(v)) throw ParameterError("mfdfa: non-finite value in series");

  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const auto [mn, mx] = std::minmax_element(series.begin(), series.end());
  if (*mn == *mx || var <= 0.0) throw DegenerateInputError("mfdfa: constant series");

  std::vector<double> profile(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += series[i] - mean;
    profile[i] = acc;
  }

  const double flat_tol = detail::kFlatWindowRelTol * var;
  const auto& qs = qgrid.qs();
  const std::size_t nq = qs.size();

  // log F_q(s) per (q, scale); NaN marks an excluded scale.
  std::vector<std::vector<double>> logF(nq, std::vector<double>(plan.scales.size(), std::nan("")));
  bool low_confidence = false;

  std::vector<double> resid;
  std::vector<double> logvar;
  for (std::size_t si = 0; si < plan.scales.size(); ++si) {
    const std::size_t s = plan.scales[si];
    const std::size_t ns = n / s;
    const auto basis = detail::orthonormal_poly_basis(s, plan.detrend_order);

    logvar.clear();
    std::size_t flat = 0;
    for (std::size_t w = 0; w < 2 * ns; ++w) {
      const std::size_t start = w < ns ? w * s : n - (w - ns + 1) * s;
      const double v = detail::detrended_variance(&profile[start], s, basis, resid);
      if (v <= flat_tol) {
        ++flat;
        logvar.push_back(-std::numeric_limits<double>::infinity());
      } else {
        logvar.push_back(std::log(v));
      }
    }
    const std::size_t total = logvar.size();
    const std::size_t live = total - flat;
    if (flat * 2 > total) low_confidence = true;

    for (std::size_t qi = 0; qi < nq; ++qi) {
      const double q = qs[qi];
      if (live == 0) continue;
      // log of the mean of exp((q/2) log var) over live windows.
      double peak = -std::numeric_limits<double>::infinity();
      for (double lv : logvar)
        if (std::isfinite(lv)) peak = std::max(peak, 0.5 * q * lv);
      double sum = 0.0;
      for (double lv : logvar)
        if (std::isfinite(lv)) sum += std::exp(0.5 * q * lv - peak);
      // Flat windows contribute zero for q > 0 and are dropped for q < 0.
      const double denom = q > 0 ? static_cast<double>(total) : static_cast<double>(live);
      logF[qi][si] = (peak + std::log(sum / denom)) / q;
    }
  }

  MfEstimate est;
  est.low_confidence = low_confidence;
  std::vector<double> xs, ys;
  for (std::size_t qi = 0; qi < nq; ++qi) {
    xs.clear();
    ys.clear();
    for (std::size_t si = 0; si < plan.scales.size(); ++si) {
      if (std::isfinite(logF[qi][si])) {
        xs.push_back(std::log(static_cast<double>(plan.scales[si])));
        ys.push_back(logF[qi][si]);
      }
    }
    if (xs.size() < 4)
      throw DegenerateInputError("mfdfa: fewer than 4 usable scales for q = " + std::to_string(qs[qi]));
    const auto fit = detail::least_squares(xs, ys);
    est.hq[qs[qi]] = fit.slope;
    est.fit_quality[qs[qi]] = fit.r2;
  }
  est.H = est.hq.at(2.0);
  est.dh = est.hq.at(qgrid.q_min()) - est.hq.at(qgrid.q_max());
  est.negative_dh = est.dh < 0.0;
  return est;
}

/// Convenience overload with the default grid and a 12-scale log plan.
inline MfEstimate mfdfa(std::span<const double> series) {
  return mfdfa(series, QGrid{}, ScalePlan::log_spaced(series.size()));
}

/// Closed-form h(q) of the binomial cascade with weight p:
/// (1 - log2(p^q + (1-p)^q)) / q.
inline double analytic_hq_binomial(double p, double q) {
  if (!(p > 0.5 && p < 1.0)) throw ParameterError("analytic_hq_binomial: p must lie in (0.5, 1)");
  if (q == 0.0) throw ParameterError("analytic_hq_binomial: q must be nonzero");
  return (1.0 - std::log2(std::pow(p, q) + std::pow(1.0 - p, q))) / q;
}

/// Per-class packet counts per slot over `window`.
inline std::map<ClassId, Series> class_count_series(std::span<const Packet> packets,
                                                    std::span<const ServiceClass> classes, SlotRange window) {
  if (window.length() <= 0) throw DegenerateInputError("class_count_series: empty window");
  std::map<ClassId, Series> out;
  for (const auto& c : classes) out[c.id].assign(static_cast<std::size_t>(window.length()), 0.0);
  for (const auto& p : packets) {
    if (!window.contains(p.arrival_slot)) continue;
    auto it = out.find(p.service_class);
    if (it == out.end()) continue;
    it->second[static_cast<std::size_t>(p.arrival_slot - window.begin)] += 1.0;
  }
  return out;
}

/// Classes with fewer nonzero slots than this get the sentinel estimate.
inline constexpr std::size_t kMinNonzeroSlots = 64;

/// MF-DFA per class over already-binned slot counts.
inline std::map<ClassId, MfEstimate> window_estimates(const std::map<ClassId, Series>& counts, const QGrid& qgrid,
                                                      const ScalePlan& plan) {
  std::map<ClassId, MfEstimate> out;
  for (const auto& [cls, series] : counts) {
    const auto nonzero = static_cast<std::size_t>(
        std::count_if(series.begin(), series.end(), [](double v) { return v != 0.0; }));
    if (nonzero < kMinNonzeroSlots) {
      out[cls] = MfEstimate::sentinel(qgrid);
      continue;
    }
    try {
      out[cls] = mfdfa(series, qgrid, plan);
    } catch (const DegenerateInputError&) {
      out[cls] = MfEstimate::sentinel(qgrid);
    }
  }
  return out;
}

/// Splits the window's packets by class and estimates each class.
inline std::map<ClassId, MfEstimate> window_estimates(std::span<const Packet> packets,
                                                      std::span<const ServiceClass> classes, SlotRange window,
                                                      const QGrid& qgrid, const ScalePlan& plan) {
  if (window.length() <= 0) throw DegenerateInputError("window_estimates: empty window");
  if (window.length() < 1024) throw ParameterError("window_estimates: window must span at least 1024 slots");
  return window_estimates(class_count_series(packets, classes, window), qgrid, plan);
}

}  // namespace mfbalance
