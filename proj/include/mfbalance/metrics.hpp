#pragma once

// Performance indicators: imbalance (IMB), packet loss and not-analyzed
// percentages, and run reports in paired SM/PM layout.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mfbalance/balancing.hpp"
#include "mfbalance/error.hpp"
#include "mfbalance/node_model.hpp"

namespace mfbalance {

struct ImbWeights {
  double K_c = 1.0 / 3.0;
  double K_r = 1.0 / 3.0;
  double K_n = 1.0 / 3.0;

  void validate() const {
    for (double k : {K_c, K_r, K_n})
      if (!(k >= 0.0 && k <= 1.0)) throw ParameterError("weights: each weight must lie in [0, 1]");
    if (std::abs(K_c + K_r + K_n - 1.0) > 1e-12) throw ParameterError("weights: K_c + K_r + K_n must equal 1");
  }
};

/// K_c (cpu - cpu_avg)^2 + K_r (ram - ram_avg)^2 + K_n (net - net_avg)^2
inline double node_imbalance(const UtilSnapshot& snap, const UtilSnapshot& avg, const ImbWeights& w) {
  const double dc = snap.cpu - avg.cpu;
  const double dr = snap.ram - avg.ram;
  const double dn = snap.net - avg.net;
  return w.K_c * dc * dc + w.K_r * dr * dr + w.K_n * dn * dn;
}

/// Mean node imbalance against the componentwise mean snapshot.
inline double total_imbalance(std::span<const UtilSnapshot> snaps, const ImbWeights& w) {
  if (snaps.empty()) throw ParameterError("total_imbalance: no snapshots");
  const auto n = static_cast<double>(snaps.size());
  // Shifted mean: identical snapshots reproduce the reference exactly.
  const UtilSnapshot ref = snaps.front();
  UtilSnapshot shift{0.0, 0.0, 0.0};
  for (const auto& s : snaps) {
    shift.cpu += s.cpu - ref.cpu;
    shift.ram += s.ram - ref.ram;
    shift.net += s.net - ref.net;
  }
  const UtilSnapshot avg{ref.cpu + shift.cpu / n, ref.ram + shift.ram / n, ref.net + shift.net / n};
  double sum = 0.0;
  for (const auto& s : snaps) sum += node_imbalance(s, avg, w);
  return sum / n;
}

/// Packet fates attributed to the epoch in which the packet arrived.
struct EpochCounters {
  std::int64_t offered = 0;
  std::int64_t dropped = 0;
  std::int64_t not_analyzed = 0;
  std::int64_t blocked = 0;
  std::int64_t permitted = 0;

  std::int64_t resolved() const noexcept { return dropped + not_analyzed + blocked + permitted; }
  std::int64_t in_flight() const noexcept { return offered - resolved(); }

  EpochCounters& operator+=(const EpochCounters& o) {
    offered += o.offered;
    dropped += o.dropped;
    not_analyzed += o.not_analyzed;
    blocked += o.blocked;
    permitted += o.permitted;
    return *this;
  }
};

struct EpochMetrics {
  double loss_pct = 0.0;
  double imb_tot = 0.0;
  double not_analyzed_pct = 0.0;
};

struct Scenario {
  double target_H = 0.0;
  double target_dh = 0.0;
  /// Offered load relative to the node pool's inspection capacity.
  double lambda = 0.0;
  double achieved_H = 0.0;
  double achieved_dh = 0.0;
  bool saturated = false;
};

struct RunReport {
  Scenario scenario;
  Method method = Method::SM;
  std::uint64_t seed = 0;
  double loss_pct = 0.0;
  double imb_tot = 0.0;
  double not_analyzed_pct = 0.0;
  double analyzed_pct = 0.0;
  double in_flight_pct = 0.0;
  std::vector<EpochMetrics> per_epoch;
  EpochCounters counters;
  /// Set on sweep rows whose run failed; metrics are then meaningless.
  std::optional<std::string> error;

  friend bool operator==(const RunReport& a, const RunReport& b) {
    auto key = [](const RunReport& r) {
      return std::tie(r.scenario.target_H, r.scenario.target_dh, r.scenario.lambda, r.scenario.achieved_H,
                      r.scenario.achieved_dh, r.scenario.saturated, r.method, r.seed, r.loss_pct, r.imb_tot,
                      r.not_analyzed_pct, r.analyzed_pct, r.in_flight_pct, r.error);
    };
    if (key(a) != key(b)) return false;
    if (a.per_epoch.size() != b.per_epoch.size()) return false;
    for (std::size_t i = 0; i < a.per_epoch.size(); ++i) {
      const auto& x = a.per_epoch[i];
      const auto& y = b.per_epoch[i];
      if (x.loss_pct != y.loss_pct || x.imb_tot != y.imb_tot || x.not_analyzed_pct != y.not_analyzed_pct) return false;
    }
    return a.counters.offered == b.counters.offered && a.counters.dropped == b.counters.dropped &&
           a.counters.not_analyzed == b.counters.not_analyzed && a.counters.blocked == b.counters.blocked &&
           a.counters.permitted == b.counters.permitted;
  }
};

/// Node counters plus the packets it still holds, for the conservation guard.
struct NodeTally {
  NodeCounters counters;
  std::int64_t in_flight = 0;
};

/// Raw statistics of one measured run.
struct RunStats {
  std::vector<NodeTally> nodes;
  /// Measured epochs only (warmup excluded).
  std::vector<EpochCounters> epochs;
  /// epoch -> sample -> node snapshot.
  std::vector<std::vector<std::vector<UtilSnapshot>>> epoch_samples;
};

inline double pct(std::int64_t part, std::int64_t whole) {
  return whole > 0 ? 100.0 * static_cast<double>(part) / static_cast<double>(whole) : 0.0;
}

/// Headline numbers: loss and not-analyzed as percentages of offered
/// packets, IMB as the mean of per-epoch IMB_tot.
inline RunReport summarize(const RunStats& stats, const ImbWeights& w) {
  w.validate();
  for (std::size_t i = 0; i < stats.nodes.size(); ++i) {
    const auto& t = stats.nodes[i];
    if (t.counters.enqueued != t.counters.resolved() + t.in_flight)
      throw InvariantError("summarize: node " + std::to_string(i) + " violates counter conservation");
  }
  RunReport r;
  for (std::size_t e = 0; e < stats.epochs.size(); ++e) {
    const auto& c = stats.epochs[e];
    if (c.in_flight() < 0) throw InvariantError("summarize: epoch resolved more packets than offered");
    r.counters += c;
    EpochMetrics m;
    m.loss_pct = pct(c.dropped, c.offered);
    m.not_analyzed_pct = pct(c.not_analyzed, c.offered);
    if (e < stats.epoch_samples.size() && !stats.epoch_samples[e].empty()) {
      double sum = 0.0;
      for (const auto& sample : stats.epoch_samples[e]) sum += total_imbalance(sample, w);
      m.imb_tot = sum / static_cast<double>(stats.epoch_samples[e].size());
    }
    r.per_epoch.push_back(m);
  }
  if (r.counters.offered == 0) throw DegenerateInputError("summarize: no packets offered");
  r.loss_pct = pct(r.counters.dropped, r.counters.offered);
  r.not_analyzed_pct = pct(r.counters.not_analyzed, r.counters.offered);
  r.analyzed_pct = pct(r.counters.blocked + r.counters.permitted, r.counters.offered);
  r.in_flight_pct = pct(r.counters.in_flight(), r.counters.offered);
  if (!r.per_epoch.empty()) {
    double sum = 0.0;
    for (const auto& m : r.per_epoch) sum += m.imb_tot;
    r.imb_tot = sum / static_cast<double>(r.per_epoch.size());
  }
  return r;
}

// Report CSV

inline constexpr const char* kReportCsvHeader =
    "H_target,dh_target,H_achieved,dh_achieved,lambda,method,loss_pct,imb_tot,not_analyzed_pct,seed";

namespace detail {
inline std::string fmt_num(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace detail

inline void write_report_csv_row(std::ostream& os, const RunReport& r) {
  using detail::fmt_num;
  os << fmt_num(r.scenario.target_H, 3) << ',' << fmt_num(r.scenario.target_dh, 3) << ','
     << fmt_num(r.scenario.achieved_H, 4) << ',' << fmt_num(r.scenario.achieved_dh, 4) << ','
     << fmt_num(r.scenario.lambda, 3) << ',' << to_string(r.method) << ',';
  if (r.error) {
    os << ",,";
  } else {
    os << fmt_num(r.loss_pct) << ',' << fmt_num(r.imb_tot) << ',' << fmt_num(r.not_analyzed_pct);
  }
  os << ',' << r.seed << '\n';
}

inline void write_report_csv(std::ostream& os, std::span<const RunReport> reports) {
  os << kReportCsvHeader << '\n';
  for (const auto& r : reports) write_report_csv_row(os, r);
}

/// Parses a report CSV. Rows with empty metric fields come back as error rows.
inline std::vector<RunReport> read_report_csv(std::istream& is) {
  std::vector<RunReport> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != kReportCsvHeader) throw ParameterError("report csv: unexpected header");
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 10) throw ParameterError("report csv line " + std::to_string(lineno) + ": expected 10 fields");
    try {
      RunReport r;
      r.scenario.target_H = std::stod(f[0]);
      r.scenario.target_dh = std::stod(f[1]);
      r.scenario.achieved_H = std::stod(f[2]);
      r.scenario.achieved_dh = std::stod(f[3]);
      r.scenario.lambda = std::stod(f[4]);
      if (f[5] == "SM")
        r.method = Method::SM;
      else if (f[5] == "PM")
        r.method = Method::PM;
      else
        throw ParameterError("report csv line " + std::to_string(lineno) + ": unknown method");
      if (f[6].empty()) {
        r.error = "run failed";
      } else {
        r.loss_pct = std::stod(f[6]);
        r.imb_tot = std::stod(f[7]);
        r.not_analyzed_pct = std::stod(f[8]);
      }
      r.seed = std::stoull(f[9]);
      out.push_back(std::move(r));
    } catch (const ParameterError&) {
      throw;
    } catch (const std::exception&) {
      throw ParameterError("report csv line " + std::to_string(lineno) + ": malformed field");
    }
  }
  return out;
}

/// Seed-averaged metrics for one scenario cell and method.
struct CellMean {
  double loss_pct = 0.0;
  double imb_tot = 0.0;
  double not_analyzed_pct = 0.0;
  double achieved_H = 0.0;
  double achieved_dh = 0.0;
  int runs = 0;
  int errors = 0;
};

using CellKey = std::tuple<double, double, double>;  // (H, dh, lambda) targets

inline std::map<CellKey, std::map<Method, CellMean>> cell_means(std::span<const RunReport> reports) {
  std::map<CellKey, std::map<Method, CellMean>> out;
  for (const auto& r : reports) {
    auto& m = out[{r.scenario.target_H, r.scenario.target_dh, r.scenario.lambda}][r.method];
    if (r.error) {
      ++m.errors;
      continue;
    }
    ++m.runs;
    m.loss_pct += r.loss_pct;
    m.imb_tot += r.imb_tot;
    m.not_analyzed_pct += r.not_analyzed_pct;
    m.achieved_H += r.scenario.achieved_H;
    m.achieved_dh += r.scenario.achieved_dh;
  }
  for (auto& [key, by_method] : out)
    for (auto& [method, m] : by_method)
      if (m.runs > 0) {
        const auto k = static_cast<double>(m.runs);
        m.loss_pct /= k;
        m.imb_tot /= k;
        m.not_analyzed_pct /= k;
        m.achieved_H /= k;
        m.achieved_dh /= k;
      }
  return out;
}

/// Fixed-width text table: one row per scenario cell, SM and PM side by side.
inline std::string render_table(std::span<const RunReport> reports) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-30s | %-15s | %-15s | %-19s\n", "Traffic parameters", "Packet loss, %", "IMB",
                "Not analyzed, %");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-30s | %7s %7s | %7s %7s | %9s %9s\n", "", "SM", "PM", "SM", "PM", "SM", "PM");
  os << buf;
  os << std::string(30, '-') << "-+-" << std::string(15, '-') << "-+-" << std::string(15, '-') << "-+-"
     << std::string(19, '-') << '\n';
  int errors = 0;
  for (const auto& [key, by_method] : cell_means(reports)) {
    const auto& [H, dh, lambda] = key;
    const CellMean sm = by_method.count(Method::SM) ? by_method.at(Method::SM) : CellMean{};
    const CellMean pm = by_method.count(Method::PM) ? by_method.at(Method::PM) : CellMean{};
    errors += sm.errors + pm.errors;
    const double dh_seen = sm.runs > 0 ? sm.achieved_dh : pm.achieved_dh;
    char label[64];
    std::snprintf(label, sizeof label, "H=%.2f dh=%.1f(%.2f) l=%.2f", H, dh, dh_seen, lambda);
    auto cell = [](const CellMean& m, double v, int width, int prec) {
      char b[32];
      if (m.runs == 0)
        std::snprintf(b, sizeof b, "%*s", width, "-");
      else
        std::snprintf(b, sizeof b, "%*.*f", width, prec, v);
      return std::string(b);
    };
    std::snprintf(buf, sizeof buf, "%-30s | %s %s | %s %s | %s %s\n", label, cell(sm, sm.loss_pct, 7, 2).c_str(),
                  cell(pm, pm.loss_pct, 7, 2).c_str(), cell(sm, sm.imb_tot, 7, 4).c_str(),
                  cell(pm, pm.imb_tot, 7, 4).c_str(), cell(sm, sm.not_analyzed_pct, 9, 2).c_str(),
                  cell(pm, pm.not_analyzed_pct, 9, 2).c_str());
    os << buf;
  }
  if (errors > 0) {
    os << "\nfailed runs: " << errors << '\n';
    for (const auto& r : reports)
      if (r.error)
        os << "  H=" << detail::fmt_num(r.scenario.target_H, 2) << " dh=" << detail::fmt_num(r.scenario.target_dh, 1)
           << " seed=" << r.seed << ' ' << to_string(r.method) << ": " << *r.error << '\n';
  }
  return os.str();
}

}  // namespace mfbalance
