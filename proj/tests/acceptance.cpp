// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mfbalance.hpp"

using namespace mfbalance;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (detail.size() < 600) detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---- 1: DPI time estimate -------------------------------------------------

Check dpi_formula() {
  Check c;
  const struct {
    double T_ids, T_serv, H, dh, expect;
  } cases[] = {{10, 4, 0.5, 0, 10}, {10, 4, 0.7, 0.3, 10.8}, {10, 4, 0.7, 0.6, 10.16},
               {10, 4, 0.95, 0.2, 14}, {10, 4, 0.6, 1.5, 14}};
  for (const auto& k : cases) {
    const double v = dpi_time_estimate(k.T_ids, k.T_serv, k.H, k.dh);
    c.expect(std::abs(v - k.expect) <= 1e-12, fmt("(%.2f,%.2f) gave %.15g", k.H, k.dh, v));
  }
  for (double dh : {0.0, 0.5, 3.0, 100.0})
    c.expect(dpi_time_estimate(10, 4, 0.95, dh) == 14.0, fmt("H=0.95 dh=%.1f not capped", dh));
  const double at = dpi_time_estimate(10, 4, 0.7, 0.4);
  const double above = dpi_time_estimate(10, 4, 0.7, std::nextafter(0.4, 1.0));
  c.expect(std::abs(at - 10.8) <= 1e-12, "dh=0.4 should take the low-spread branch");
  c.expect(std::abs(above - 10.0) <= 1e-12, "just above dh=0.4 should restart near T_ids");
  return c;
}

// ---- 2: IMB ---------------------------------------------------------------

Check imb_formula() {
  Check c;
  const ImbWeights w;
  c.expect(std::abs(node_imbalance({0.8, 0.3, 0.6}, {0.5, 0.3, 0.6}, w) - 0.09 / 3.0) <= 1e-12, "cpu-only deviation");
  const std::vector<UtilSnapshot> two = {{0.4, 0.5, 0.5}, {0.6, 0.5, 0.5}};
  c.expect(std::abs(total_imbalance(two, w) - 0.01 / 3.0) <= 1e-12, "two-node hand value");
  const std::vector<UtilSnapshot> mixed = {{0.2, 0.1, 0.9}, {0.6, 0.3, 0.5}, {0.7, 0.8, 0.4}};
  // Averages (0.5, 0.4, 0.6); squared deviations summed per node, then averaged.
  const double hand = ((0.09 + 0.09 + 0.09) + (0.01 + 0.01 + 0.01) + (0.04 + 0.16 + 0.04)) / 3.0 / 3.0;
  c.expect(std::abs(total_imbalance(mixed, w) - hand) <= 1e-12, "three-node hand value");
  const std::vector<UtilSnapshot> flat(8, UtilSnapshot{0.37, 0.21, 0.66});
  c.expect(total_imbalance(flat, w) == 0.0, "uniform utilization not zero");

  std::mt19937_64 g(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<UtilSnapshot> s(2 + g() % 15);
    for (auto& x : s) x = {u(g), u(g), u(g)};
    const double a = total_imbalance(s, w);
    std::shuffle(s.begin(), s.end(), g);
    const double b = total_imbalance(s, w);
    if (std::abs(a - b) > 1e-12) {
      c.expect(false, fmt("permutation changed IMB by %.3g", std::abs(a - b)));
      break;
    }
  }
  return c;
}

// ---- 3: estimator oracle --------------------------------------------------

Check estimator_oracle() {
  Check c;
  const std::vector<double> qs = {-5, -3, -1, 1, 2, 3, 5};
  for (double p : {0.6, 0.75}) {
    std::map<double, double> mean;
    for (std::uint64_t s = 1; s <= 10; ++s) {
      const auto est = mfdfa(gen_binomial_cascade(p, 16, s));
      for (double q : qs) mean[q] += est.hq.at(q) / 10.0;
    }
    for (double q : qs) {
      const double ref = analytic_hq_binomial(p, q);
      c.expect(std::abs(mean[q] - ref) <= 0.1, fmt("binomial p=%.2f q=%g: %.4f vs %.4f", p, q, mean[q], ref));
    }
  }
  for (double H : {0.6, 0.7, 0.8, 0.9}) {
    double h = 0.0, dh = 0.0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
      const auto est = mfdfa(gen_fgn(H, 1 << 16, s));
      h += est.H / 20.0;
      dh += est.dh / 20.0;
    }
    c.expect(std::abs(h - H) <= 0.05, fmt("fGn H=%.1f recovered %.4f", H, h));
    c.expect(dh < 0.2, fmt("fGn H=%.1f dh %.4f", H, dh));
  }
  return c;
}

// ---- 4/5/7: grid runs -----------------------------------------------------

struct GridRun {
  std::vector<RunReport> reports;
  int conservation_checks = 0;
  int expected_checks = 0;
  std::int64_t min_packets = -1;
  std::vector<std::string> failures;
};

SimConfig table_config() { return load_sim_config(std::string(MFBALANCE_SAMPLES) + "/table1.json"); }

const std::vector<double> kH = {0.6, 0.7, 0.8, 0.9};
const std::vector<double> kDh = {2.0, 6.0};
const std::vector<std::uint64_t> kSeeds = {1, 2, 3, 4, 5};

GridRun run_grid() {
  GridRun g;
  const SimConfig base = table_config();
  const auto rules = base.rule_set();
  for (double H : kH)
    for (double dh : kDh)
      for (auto seed : kSeeds) {
        SimConfig cfg = base;
        cfg.traffic.target_H = H;
        cfg.traffic.target_dh = dh;
        cfg.seed = seed;
        cfg.method = RunMethod::BOTH;
        try {
          const auto res = run_detailed(cfg);
          for (const auto& r : res.reports) g.reports.push_back(r);
          g.conservation_checks += res.conservation_checks;
          g.expected_checks += 2 * static_cast<int>(cfg.traffic.n_slots / static_cast<std::size_t>(cfg.epoch_slots));
          const auto trace_packets = static_cast<std::int64_t>(
              make_trace(cfg, rules).packets.size());
          if (g.min_packets < 0 || trace_packets < g.min_packets) g.min_packets = trace_packets;
        } catch (const std::exception& e) {
          g.failures.push_back(e.what());
        }
      }
  return g;
}

using Means = std::map<CellKey, std::map<Method, CellMean>>;

Check trend_vs_baseline(const GridRun& g, const Means& means) {
  Check c;
  c.expect(g.failures.empty(), "run failures: " + (g.failures.empty() ? std::string() : g.failures.front()));
  c.expect(g.min_packets >= 200000, fmt("smallest trace has %.0f packets", static_cast<double>(g.min_packets)));
  c.expect(means.size() == kH.size() * kDh.size(), "missing grid cells");
  for (const auto& [key, by] : means) {
    const auto& [H, dh, lambda] = key;
    if (!by.count(Method::SM) || !by.count(Method::PM)) {
      c.expect(false, fmt("cell H=%.1f dh=%.0f incomplete", H, dh));
      continue;
    }
    const auto& sm = by.at(Method::SM);
    const auto& pm = by.at(Method::PM);
    c.expect(sm.runs >= 5 && pm.runs >= 5, fmt("cell H=%.1f dh=%.0f has fewer than 5 seeds", H, dh));
    c.expect(pm.loss_pct <= sm.loss_pct + 1.0, fmt("H=%.1f dh=%.0f loss PM %.3f > SM %.3f + 1", H, dh, pm.loss_pct, sm.loss_pct));
    c.expect(pm.not_analyzed_pct <= sm.not_analyzed_pct + 1.0,
             fmt("H=%.1f dh=%.0f not-analyzed PM %.3f > SM %.3f + 1", H, dh, pm.not_analyzed_pct, sm.not_analyzed_pct));
    c.expect(pm.imb_tot <= sm.imb_tot + 0.02, fmt("H=%.1f dh=%.0f IMB PM %.4f > SM %.4f + 0.02", H, dh, pm.imb_tot, sm.imb_tot));
  }
  return c;
}

// Non-decreasing along an axis: no pair (earlier, later) drops by more than 1 point.
void monotone(Check& c, const std::vector<double>& v, const std::string& what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j)
      if (v[j] < v[i] - 1.0) c.expect(false, what + fmt(": %.3f then %.3f", v[i], v[j]));
}

Check monotonicity(const Means& means) {
  Check c;
  auto at = [&](double H, double dh, Method m) -> const CellMean* {
    for (const auto& [key, by] : means)
      if (std::get<0>(key) == H && std::get<1>(key) == dh && by.count(m)) return &by.at(m);
    return nullptr;
  };
  for (Method m : {Method::SM, Method::PM}) {
    const std::string tag = to_string(m);
    for (double dh : kDh) {
      std::vector<double> loss, na;
      for (double H : kH)
        if (const auto* x = at(H, dh, m)) {
          loss.push_back(x->loss_pct);
          na.push_back(x->not_analyzed_pct);
        }
      c.expect(loss.size() == kH.size(), "missing cells along H");
      monotone(c, loss, tag + fmt(" loss along H (dh=%.0f)", dh));
      monotone(c, na, tag + fmt(" not-analyzed along H (dh=%.0f)", dh));
    }
    for (double H : kH) {
      std::vector<double> loss, na;
      for (double dh : kDh)
        if (const auto* x = at(H, dh, m)) {
          loss.push_back(x->loss_pct);
          na.push_back(x->not_analyzed_pct);
        }
      c.expect(loss.size() == kDh.size(), "missing cells along dh");
      monotone(c, loss, tag + fmt(" loss along dh (H=%.1f)", H));
      monotone(c, na, tag + fmt(" not-analyzed along dh (H=%.1f)", H));
    }
  }
  return c;
}

// ---- 6: degeneracy --------------------------------------------------------

Check degeneracy() {
  Check c;
  SimConfig cfg = table_config();
  cfg.traffic.target_H = 0.5;
  cfg.traffic.target_dh = 0.0;
  cfg.traffic.class_mix = {{0, 1.0}};
  cfg.traffic.classes.clear();
  cfg.rules = std::map<ClassId, ClassRuleSpec>{{0, {2, 10, 1}}};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    cfg.seed = seed;
    auto rules = std::make_shared<const RuleSet>(cfg.rule_set());
    const SimConfig r = resolved(cfg, *rules);
    auto trace = std::make_shared<const Trace>(make_trace(r, *rules));
    Simulation sm(r, Method::SM, trace, rules), pm(r, Method::PM, trace, rules);
    sm.run_to_end();
    pm.run_to_end();
    c.expect(sm.dispatch_log() == pm.dispatch_log(), "dispatch decisions differ");
    RunReport a = sm.report(), b = pm.report();
    b.method = Method::SM;
    c.expect(a == b, "reports differ");
    std::ostringstream x, y;
    write_report_csv_row(x, a);
    write_report_csv_row(y, b);
    c.expect(x.str() == y.str(), "CSV rows differ");
  }
  return c;
}

// ---- 7: determinism and conservation --------------------------------------

Check determinism(const GridRun& g) {
  Check c;
  c.expect(g.conservation_checks == g.expected_checks && g.expected_checks > 0,
           fmt("conservation checked at %.0f of %.0f epochs", g.conservation_checks, g.expected_checks));
  for (const auto& r : g.reports) {
    const auto& k = r.counters;
    c.expect(k.in_flight() >= 0, "negative in-flight count");
  }
  SimConfig cfg = table_config();
  cfg.traffic.target_H = 0.9;
  cfg.traffic.target_dh = 6.0;
  cfg.seed = 3;
  auto csv = [&] {
    std::ostringstream os;
    write_report_csv(os, run(cfg));
    return os.str();
  };
  const std::string first = csv();
  c.expect(first == csv(), "repeat run CSV differs");
  std::ostringstream from_grid;
  std::vector<RunReport> rows;
  for (const auto& r : g.reports)
    if (r.scenario.target_H == 0.9 && r.scenario.target_dh == 6.0 && r.seed == 3) rows.push_back(r);
  write_report_csv(from_grid, rows);
  c.expect(first == from_grid.str(), "grid run and standalone run differ");
  return c;
}

// ---- 8: average IDS service time ------------------------------------------

Check ids_service_time() {
  Check c;
  auto entry = [](RuleId id, RuleKind k, double cost, double p) { return RuleEntry{id, k, 0, cost, p}; };
  const auto one = RuleSet::from_entries({entry(1, RuleKind::Prohibit, 2, 1.0)});
  c.expect(std::abs(avg_ids_service_time(one) - 2.0) <= 1e-12, "certain block");
  const auto three = RuleSet::from_entries(
      {entry(1, RuleKind::Permit, 1, 0), entry(2, RuleKind::Permit, 1, 0), entry(3, RuleKind::Permit, 1, 0)});
  c.expect(std::abs(avg_ids_service_time(three) - 3.0) <= 1e-12, "certain permit");
  const auto mixed = RuleSet::from_entries({entry(1, RuleKind::Prohibit, 1, 0.1), entry(2, RuleKind::Prohibit, 2, 0.2),
                                            entry(3, RuleKind::Permit, 1, 0), entry(4, RuleKind::Permit, 1, 0),
                                            entry(5, RuleKind::Permit, 1, 0)});
  c.expect(std::abs(avg_ids_service_time(mixed) - 3.0) <= 1e-12, "mixed example");

  std::mt19937_64 g(77);
  std::uniform_real_distribution<double> u(0.0, 1.0), cost(0.1, 5.0);
  int linear_bad = 0, continuous_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<RuleEntry> e;
    const int np = 1 + static_cast<int>(g() % 6), nq = 1 + static_cast<int>(g() % 6);
    const double total = u(g);
    for (int i = 0; i < np; ++i) e.push_back(entry(i + 1, RuleKind::Prohibit, cost(g), total / np));
    for (int i = 0; i < nq; ++i) e.push_back(entry(np + i + 1, RuleKind::Permit, cost(g), 0));
    const double base = avg_ids_service_time(RuleSet::from_entries(e));

    // Linearity in one cost: f(c + t) - f(c) = t * (coefficient of that cost).
    const std::size_t k = g() % e.size();
    const double coeff = e[k].kind == RuleKind::Prohibit ? total : 1.0 - total;
    auto bumped = e;
    bumped[k].cost += 1.75;
    const double lin = avg_ids_service_time(RuleSet::from_entries(bumped)) - base;
    if (std::abs(lin - 1.75 * coeff) > 1e-9) ++linear_bad;

    // Continuity in one P(j): a 1e-9 change moves the value by at most 1e-9 * total cost.
    auto nudged = e;
    const std::size_t j = g() % static_cast<std::size_t>(np);
    nudged[j].block_prob = std::max(0.0, nudged[j].block_prob - 1e-9);
    double all = 0.0;
    for (const auto& r : e) all += r.cost;
    if (std::abs(avg_ids_service_time(RuleSet::from_entries(nudged)) - base) > 1e-9 * all + 1e-12) ++continuous_bad;
  }
  c.expect(linear_bad == 0, fmt("%.0f rule sets not linear in cost", linear_bad));
  c.expect(continuous_bad == 0, fmt("%.0f rule sets not continuous in P", continuous_bad));
  return c;
}

bool report(int n, const char* name, const std::function<Check()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  try {
    c = fn();
  } catch (const std::exception& e) {
    c.ok = false;
    c.detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("criterion %d: %s %s (%.1fs)%s%s\n", n, c.ok ? "PASS" : "FAIL", name, secs, c.detail.empty() ? "" : " - ",
              c.detail.c_str());
  std::fflush(stdout);
  return c.ok;
}

}  // namespace

int main() {
  bool all = true;
  all &= report(1, "DPI time estimate exactness", dpi_formula);
  all &= report(2, "IMB exactness and permutation invariance", imb_formula);
  all &= report(3, "MF-DFA oracle and fGn round trip", estimator_oracle);

  GridRun grid;
  Means means;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    grid = run_grid();
    means = cell_means(grid.reports);
  } catch (const std::exception& e) {
    grid.failures.push_back(e.what());
  }
  const double grid_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("grid: %zu reports, %.1fs\n", grid.reports.size(), grid_secs);
  std::fputs(render_table(grid.reports).c_str(), stdout);

  all &= report(4, "PM no worse than SM per cell", [&] { return trend_vs_baseline(grid, means); });
  all &= report(5, "loss and not-analyzed grow with H and dh", [&] { return monotonicity(means); });
  all &= report(6, "single-class Poisson degeneracy", degeneracy);
  all &= report(7, "determinism and conservation", [&] { return determinism(grid); });
  all &= report(8, "average IDS service time", ids_service_time);
  return all ? 0 : 1;
}
