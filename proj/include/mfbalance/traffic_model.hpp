#pragma once

// Synthetic multifractal traffic: fGn, multiplicative cascades, and the
// calibrated per-class packet trace generator.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfbalance/error.hpp"
#include "mfbalance/fft.hpp"
#include "mfbalance/fractal_analysis.hpp"
#include "mfbalance/rng.hpp"
#include "mfbalance/types.hpp"

namespace mfbalance {

/// Fractional Gaussian noise by circulant embedding (Davies-Harte).
/// Zero mean, unit variance, Hurst exponent H.
inline Series gen_fgn(double H, std::size_t n, std::uint64_t seed) {
  if (!(H > 0.0 && H < 1.0)) throw ParameterError("gen_fgn: H must lie in (0, 1)");
  if (!detail::is_power_of_two(n)) throw ParameterError("gen_fgn: n must be a power of two");
  if (n < 256) throw ParameterError("gen_fgn: n must be at least 256");

  const std::size_t m = 2 * n;
  const double two_h = 2.0 * H;
  auto acov = [two_h](double k) {
    return 0.5 * (std::pow(std::abs(k + 1.0), two_h) - 2.0 * std::pow(std::abs(k), two_h) +
                  std::pow(std::abs(k - 1.0), two_h));
  };

  detail::ComplexFft fft(m, FFTW_FORWARD);
  auto buf = fft.data();
  for (std::size_t k = 0; k <= n; ++k) buf[k] = acov(static_cast<double>(k));
  for (std::size_t k = n + 1; k < m; ++k) buf[k] = buf[m - k];
  fft.execute();

  std::vector<double> eig(m);
  for (std::size_t k = 0; k < m; ++k) eig[k] = std::max(buf[k].real(), 0.0);

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t k = 0; k < m; ++k) {
    const double scale = std::sqrt(eig[k] / static_cast<double>(m));
    const double re = normal(rng);
    const double im = normal(rng);
    buf[k] = {scale * re, scale * im};
  }
  fft.execute();

  Series out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real();
  return out;
}

namespace detail {

inline void check_levels(int levels, const char* who) {
  if (levels < 8 || levels > 24) throw ParameterError(std::string(who) + ": levels must lie in [8, 24]");
}

inline void normalize_mean(Series& s) {
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  for (double& v : s) v /= mean;
}

}  // namespace detail

/// Binomial multiplicative cascade of length 2^levels, mean 1.
/// Each split sends w to the left child and 1-w to the right, w in {p, 1-p}.
inline Series gen_binomial_cascade(double p, int levels, std::uint64_t seed) {
  if (!(p > 0.5 && p < 1.0)) throw ParameterError("gen_binomial_cascade: p must lie in (0.5, 1)");
  detail::check_levels(levels, "gen_binomial_cascade");
  const std::size_t n = std::size_t{1} << levels;
  Series x(n, 0.0);
  x[0] = 1.0;
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (int level = 0; level < levels; ++level) {
    const std::size_t m = std::size_t{1} << level;
    for (std::size_t i = m; i-- > 0;) {
      const double w = coin(rng) ? p : 1.0 - p;
      const double v = x[i];
      x[2 * i] = v * w;
      x[2 * i + 1] = v * (1.0 - w);
    }
  }
  detail::normalize_mean(x);
  return x;
}

/// Log-normal multiplicative cascade of length 2^levels, mean 1.
/// Child weights are exp(sigma*N - sigma^2/2)/2, so each split conserves
/// mass in expectation. The underlying normal draws depend only on the
/// seed, so sweeping sigma at a fixed seed reuses the same realization.
inline Series gen_lognormal_cascade(double sigma, int levels, std::uint64_t seed) {
  if (!(sigma > 0.0 && sigma <= 2.0)) throw ParameterError("gen_lognormal_cascade: sigma must lie in (0, 2]");
  detail::check_levels(levels, "gen_lognormal_cascade");
  const std::size_t n = std::size_t{1} << levels;
  Series x(n, 0.0);
  x[0] = 1.0;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double drift = 0.5 * sigma * sigma;
  for (int level = 0; level < levels; ++level) {
    const std::size_t m = std::size_t{1} << level;
    for (std::size_t i = m; i-- > 0;) {
      const double a = normal(rng);
      const double b = normal(rng);
      const double v = x[i];
      x[2 * i] = 0.5 * v * std::exp(sigma * a - drift);
      x[2 * i + 1] = 0.5 * v * std::exp(sigma * b - drift);
    }
  }
  detail::normalize_mean(x);
  return x;
}

/// Applies the fractional filter (1 - B)^(-d) to the centred series
/// (linear convolution via a zero-padded FFT). d > 0 integrates, d < 0
/// differences; either shifts every h(q) by roughly d.
inline Series fractional_filter(std::span<const double> x, double d) {
  if (!(d > -0.5 && d < 0.5)) throw ParameterError("fractional_filter: d must lie in (-0.5, 0.5)");
  const std::size_t n = x.size();
  if (n == 0) return {};
  const std::size_t m = 2 * n;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);

  detail::ComplexFft fwd(m, FFTW_FORWARD);
  auto a = fwd.data();
  for (std::size_t i = 0; i < m; ++i) a[i] = i < n ? x[i] - mean : 0.0;
  fwd.execute();

  const double pi = std::acos(-1.0);
  a[0] = 0.0;
  for (std::size_t k = 1; k < m; ++k) {
    const double w = 2.0 * pi * static_cast<double>(k) / static_cast<double>(m);
    const std::complex<double> one_minus = 1.0 - std::polar(1.0, -w);
    a[k] *= std::pow(one_minus, -d);
  }

  detail::ComplexFft inv(m, FFTW_BACKWARD);
  auto b = inv.data();
  std::copy(a.begin(), a.end(), b.begin());
  inv.execute();
  Series out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = b[i].real() / static_cast<double>(m);
  return out;
}

struct TrafficSpec {
  /// In (0.5, 1). The pair (0.5, 0) selects Poisson arrivals instead.
  double target_H = 0.7;
  double target_dh = 2.0;
  /// Mean packets per slot over all classes.
  double lambda = 1.0;
  std::size_t n_slots = 1 << 15;
  std::map<ClassId, double> class_mix{{0, 1.0}};
  double threat_rate = 0.0;
  /// All classes follow one calibrated load shape (scaled by their mix).
  /// When false each class gets its own independently calibrated shape.
  bool shared_shape = true;
  /// Optional per-class protocol/tuple details; classes missing here get defaults.
  std::vector<ServiceClass> classes;

  bool poisson() const noexcept { return target_H == 0.5 && target_dh == 0.0; }

  std::vector<ServiceClass> service_classes() const {
    std::vector<ServiceClass> out;
    for (const auto& [id, frac] : class_mix) {
      auto it = std::find_if(classes.begin(), classes.end(), [id](const ServiceClass& c) { return c.id == id; });
      ServiceClass c = it != classes.end() ? *it : ServiceClass{};
      c.id = id;
      out.push_back(c);
    }
    return out;
  }

  void validate() const {
    if (!poisson() && !(target_H > 0.5 && target_H < 1.0))
      throw ParameterError("traffic: target_H must lie in (0.5, 1)");
    if (!(target_dh >= 0.0)) throw ParameterError("traffic: target_dh must be >= 0");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ParameterError("traffic: lambda must be > 0");
    if (n_slots < (1u << 12)) throw ParameterError("traffic: n_slots must be at least 4096");
    if (class_mix.empty() || class_mix.size() > kMaxServiceClasses)
      throw ParameterError("traffic: between 1 and 64 service classes required");
    double sum = 0.0;
    for (const auto& [id, frac] : class_mix) {
      if (!(frac >= 0.0)) throw ParameterError("traffic: class_mix fractions must be >= 0");
      sum += frac;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ParameterError("traffic: class_mix fractions must sum to 1");
    if (!(threat_rate >= 0.0 && threat_rate <= 1.0)) throw ParameterError("traffic: threat_rate must lie in [0, 1]");
  }
};

struct CalibrationPolicy {
  /// Outer evaluations of the cascade parameter (bisection steps).
  int max_iterations = 12;
  /// Filter-order corrections per outer evaluation.
  int h_steps = 4;
  double h_tol = 0.05;
  /// dh tolerance is dh_tol_factor * max(1, target_dh / 2).
  double dh_tol_factor = 0.3;
  double sigma_lo = 0.3;
  double sigma_hi = 2.0;
  /// Burst amplitude: load = max(0, 1 + amplitude * z), z standardized.
  double amplitude = 1.0;
  /// When the target dh is above what the generator reaches, accept the
  /// largest achievable value if it is at least saturation_floor.
  bool allow_saturation = true;
  double saturation_floor = 2.2;
  QGrid qgrid{};
  std::size_t scale_count = 12;
  std::size_t min_scale = 16;
  int detrend_order = 2;

  double dh_tolerance(double target_dh) const { return dh_tol_factor * std::max(1.0, target_dh / 2.0); }
};

struct ClassCalibration {
  double sigma = 0.0;
  double d = 0.0;
  MfEstimate estimate;
  bool saturated = false;
  int iterations = 0;
};

namespace detail {

inline int levels_for(std::size_t n) {
  int levels = 8;
  while ((std::size_t{1} << levels) < n) ++levels;
  if (levels > 24) throw ParameterError("traffic: n_slots too large (max 2^24)");
  return levels;
}

// Load shape for one class: the cascade, fractionally filtered, standardized,
// mapped to max(0, 1 + a*z), and rescaled to mean 1.
inline Series shape_load(std::span<const double> cascade, double d, double amplitude) {
  Series filt = fractional_filter(cascade, d);
  const auto n = static_cast<double>(filt.size());
  const double mean = std::accumulate(filt.begin(), filt.end(), 0.0) / n;
  double var = 0.0;
  for (double v : filt) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0)) throw DegenerateInputError("traffic: filtered cascade is constant");
  Series out(filt.size());
  for (std::size_t i = 0; i < filt.size(); ++i) out[i] = std::max(0.0, 1.0 + amplitude * (filt[i] - mean) / sd);
  normalize_mean(out);
  return out;
}

}  // namespace detail

/// Closed-loop calibration of one class load series to (target_H, target_dh).
/// Bisection on the cascade sigma steers dh; for each sigma the filter order
/// d is corrected until the estimated H is on target.
inline std::pair<Series, ClassCalibration> calibrate_class_series(double target_H, double target_dh,
                                                                  std::size_t n_slots,
                                                                  const CalibrationPolicy& policy,
                                                                  std::uint64_t seed) {
  const int levels = detail::levels_for(n_slots);
  const auto plan = ScalePlan::log_spaced(n_slots, policy.scale_count, policy.min_scale, policy.detrend_order);
  const double dh_tol = policy.dh_tolerance(target_dh);

  struct Eval {
    Series series;
    ClassCalibration cal;
  };

  double d_guess = std::clamp(target_H - 0.75, -0.45, 0.45);
  int evaluations = 0;
  auto evaluate = [&](double sigma) {
    Series full = gen_lognormal_cascade(sigma, levels, seed);
    std::span<const double> cascade(full.data(), n_slots);
    Eval e;
    double d = d_guess;
    for (int step = 0; step < std::max(1, policy.h_steps); ++step) {
      e.series = detail::shape_load(cascade, d, policy.amplitude);
      e.cal.estimate = mfdfa(e.series, policy.qgrid, plan);
      e.cal.d = d;
      if (std::abs(e.cal.estimate.H - target_H) <= 0.5 * policy.h_tol) break;
      d = std::clamp(d + (target_H - e.cal.estimate.H), -0.45, 0.45);
    }
    e.cal.sigma = sigma;
    d_guess = e.cal.d;
    e.cal.iterations = ++evaluations;
    return e;
  };
  auto h_ok = [&](const Eval& e) { return std::abs(e.cal.estimate.H - target_H) <= policy.h_tol; };
  auto dh_ok = [&](const Eval& e) { return std::abs(e.cal.estimate.dh - target_dh) <= dh_tol; };
  auto fail = [&](const std::string& why, const Eval& e) {
    return CalibrationError("calibration failed (" + why + ") for target H=" + std::to_string(target_H) +
                                " dh=" + std::to_string(target_dh) + ": achieved H=" +
                                std::to_string(e.cal.estimate.H) + " dh=" + std::to_string(e.cal.estimate.dh),
                            e.cal.estimate.H, e.cal.estimate.dh);
  };

  Eval hi = evaluate(policy.sigma_hi);
  if (h_ok(hi) && dh_ok(hi)) return {std::move(hi.series), hi.cal};
  if (hi.cal.estimate.dh < target_dh - dh_tol) {
    if (policy.allow_saturation && h_ok(hi) && hi.cal.estimate.dh >= policy.saturation_floor) {
      hi.cal.saturated = true;
      return {std::move(hi.series), hi.cal};
    }
    throw fail("target dh above reachable range", hi);
  }

  Eval lo = evaluate(policy.sigma_lo);
  if (h_ok(lo) && dh_ok(lo)) return {std::move(lo.series), lo.cal};
  if (lo.cal.estimate.dh > target_dh + dh_tol) throw fail("target dh below reachable range", lo);

  double s_lo = policy.sigma_lo;
  double s_hi = policy.sigma_hi;
  Eval last = std::move(lo);
  while (evaluations < policy.max_iterations) {
    const double mid = 0.5 * (s_lo + s_hi);
    last = evaluate(mid);
    if (h_ok(last) && dh_ok(last)) return {std::move(last.series), last.cal};
    if (last.cal.estimate.dh < target_dh)
      s_lo = mid;
    else
      s_hi = mid;
  }
  throw fail("iteration budget exhausted", last);
}

/// Prohibit-rule ids per class, used to draw threat markers.
using ThreatCatalog = std::map<ClassId, std::vector<RuleId>>;

struct Trace {
  std::vector<ServiceClass> classes;
  /// Sorted by arrival_slot.
  std::vector<Packet> packets;
  /// Expected packets per slot for each class (before stochastic rounding).
  std::map<ClassId, Series> class_series;
  std::map<ClassId, ClassCalibration> calibration;
  std::size_t n_slots = 0;
  /// Class means of the calibrated estimates.
  double achieved_H = 0.5;
  double achieved_dh = 0.0;
  bool saturated = false;
};

inline constexpr int kFlowsPerClass = 32;

namespace detail {

inline FiveTuple tuple_for_flow(const ServiceClass& cls, std::int64_t flow_id, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "flow/" + std::to_string(flow_id)));
  const auto& t = cls.tuple_template;
  auto pick32 = [&rng](std::uint32_t lo, std::uint32_t hi) {
    return std::uniform_int_distribution<std::uint32_t>(lo, std::max(lo, hi))(rng);
  };
  auto pick16 = [&rng](std::uint16_t lo, std::uint16_t hi) {
    return static_cast<std::uint16_t>(std::uniform_int_distribution<std::uint32_t>(lo, std::max(lo, hi))(rng));
  };
  FiveTuple tup;
  tup.src_addr = pick32(t.src_addr_lo, t.src_addr_hi);
  tup.src_port = pick16(t.src_port_lo, t.src_port_hi);
  tup.dst_addr = pick32(t.dst_addr_lo, t.dst_addr_hi);
  tup.dst_port = pick16(t.dst_port_lo, t.dst_port_hi);
  tup.protocol = cls.protocol;
  return tup;
}

}  // namespace detail

/// Builds a packet trace whose per-class load matches the target (H, dh).
///
/// Each class's load is a calibrated shape scaled to lambda * mix. The
/// shape is shared by all classes unless spec.shared_shape is off. Slot loads become integer counts by stochastic rounding
/// (floor plus a Bernoulli draw on the fractional part). Threat markers are
/// drawn i.i.d. at threat_rate, uniformly over the class's prohibit rules.
inline Trace synthesize_trace(const TrafficSpec& spec, const CalibrationPolicy& policy, std::uint64_t seed,
                              const ThreatCatalog& threats = {}) {
  spec.validate();
  Trace trace;
  trace.classes = spec.service_classes();
  trace.n_slots = spec.n_slots;

  double h_sum = 0.0, dh_sum = 0.0;
  std::map<ClassId, std::vector<std::uint32_t>> counts;
  std::optional<std::pair<Series, ClassCalibration>> shared;
  for (const auto& cls : trace.classes) {
    const std::string tag = "traffic/class/" + std::to_string(cls.id);
    const double rate = spec.lambda * spec.class_mix.at(cls.id);
    auto& cnt = counts[cls.id];
    cnt.resize(spec.n_slots, 0);

    if (spec.poisson()) {
      Rng rng = make_rng(seed, tag + "/poisson");
      Series raw(spec.n_slots, 0.0);
      if (rate > 0.0) {
        std::poisson_distribution<std::uint32_t> pois(rate);
        for (std::size_t t = 0; t < spec.n_slots; ++t) {
          cnt[t] = pois(rng);
          raw[t] = cnt[t];
        }
      }
      ClassCalibration cal;
      try {
        cal.estimate = mfdfa(raw, policy.qgrid,
                             ScalePlan::log_spaced(spec.n_slots, policy.scale_count, policy.min_scale,
                                                   policy.detrend_order));
      } catch (const DegenerateInputError&) {
        cal.estimate = MfEstimate::sentinel(policy.qgrid);
      }
      trace.calibration[cls.id] = cal;
      trace.class_series[cls.id] = std::move(raw);
    } else {
      if (!spec.shared_shape || !shared) {
        const std::string cascade_tag = spec.shared_shape ? std::string("traffic/shared/cascade") : tag + "/cascade";
        shared = calibrate_class_series(spec.target_H, spec.target_dh, spec.n_slots, policy,
                                        derive_seed(seed, cascade_tag));
      }
      Series shape = shared->first;
      const ClassCalibration cal = shared->second;
      Rng rng = make_rng(seed, tag + "/packetize");
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      for (std::size_t t = 0; t < spec.n_slots; ++t) {
        shape[t] *= rate;
        const double fl = std::floor(shape[t]);
        cnt[t] = static_cast<std::uint32_t>(fl) + (unif(rng) < shape[t] - fl ? 1u : 0u);
      }
      trace.saturated = trace.saturated || cal.saturated;
      trace.calibration[cls.id] = cal;
      trace.class_series[cls.id] = std::move(shape);
    }
    h_sum += trace.calibration[cls.id].estimate.H;
    dh_sum += trace.calibration[cls.id].estimate.dh;
  }
  trace.achieved_H = h_sum / static_cast<double>(trace.classes.size());
  trace.achieved_dh = dh_sum / static_cast<double>(trace.classes.size());

  // Materialize packets slot by slot, classes in id order.
  std::map<ClassId, Rng> flow_rng, threat_rng;
  std::map<ClassId, std::vector<FiveTuple>> tuples;
  std::size_t total = 0;
  for (const auto& cls : trace.classes) {
    const std::string tag = "traffic/class/" + std::to_string(cls.id);
    flow_rng.emplace(cls.id, make_rng(seed, tag + "/flows"));
    threat_rng.emplace(cls.id, make_rng(seed, tag + "/threats"));
    auto& tv = tuples[cls.id];
    for (int f = 0; f < kFlowsPerClass; ++f)
      tv.push_back(detail::tuple_for_flow(cls, std::int64_t{cls.id} * 1000000 + f, seed));
    for (auto c : counts[cls.id]) total += c;
  }
  trace.packets.reserve(total);
  std::uniform_int_distribution<int> flow_pick(0, kFlowsPerClass - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t t = 0; t < spec.n_slots; ++t) {
    for (const auto& cls : trace.classes) {
      const auto k = counts[cls.id][t];
      if (k == 0) continue;
      auto& frng = flow_rng.at(cls.id);
      auto& trng = threat_rng.at(cls.id);
      auto cat = threats.find(cls.id);
      for (std::uint32_t i = 0; i < k; ++i) {
        Packet p;
        p.arrival_slot = static_cast<Slot>(t);
        p.service_class = cls.id;
        const int f = flow_pick(frng);
        p.flow_id = std::int64_t{cls.id} * 1000000 + f;
        p.tuple = tuples[cls.id][static_cast<std::size_t>(f)];
        if (spec.threat_rate > 0.0 && cat != threats.end() && !cat->second.empty() &&
            unif(trng) < spec.threat_rate) {
          std::uniform_int_distribution<std::size_t> pick(0, cat->second.size() - 1);
          p.threat_marker = cat->second[pick(trng)];
        }
        trace.packets.push_back(p);
      }
    }
  }
  return trace;
}

/// Trace dump: `slot,class,flow_id,threat_marker`, empty marker for benign packets.
inline void write_trace_csv(std::ostream& os, const Trace& trace) {
  os << "slot,class,flow_id,threat_marker\n";
  for (const auto& p : trace.packets) {
    os << p.arrival_slot << ',' << p.service_class << ',' << p.flow_id << ',';
    if (p.threat_marker) os << *p.threat_marker;
    os << '\n';
  }
}

}  // namespace mfbalance
