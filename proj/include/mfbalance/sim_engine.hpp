#pragma once

// Slotted simulation loop: trace synthesis, dispatch, node stepping, the
// epoch protocol, paired SM/PM runs and parameter sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mfbalance/balancing.hpp"
#include "mfbalance/error.hpp"
#include "mfbalance/fractal_analysis.hpp"
#include "mfbalance/ids_core.hpp"
#include "mfbalance/metrics.hpp"
#include "mfbalance/node_model.hpp"
#include "mfbalance/traffic_model.hpp"

namespace mfbalance {

enum class RunMethod { SM, PM, BOTH };

inline const char* to_string(RunMethod m) {
  switch (m) {
    case RunMethod::SM: return "SM";
    case RunMethod::PM: return "PM";
    case RunMethod::BOTH: return "BOTH";
  }
  return "BOTH";
}

inline RunMethod run_method_from_string(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (s == "SM") return RunMethod::SM;
  if (s == "PM") return RunMethod::PM;
  if (s == "BOTH") return RunMethod::BOTH;
  throw ParameterError("method must be one of sm, pm, both");
}

/// Where the rule database comes from.
using RuleSource = std::variant<std::map<ClassId, ClassRuleSpec>, std::vector<RuleEntry>, std::string>;

struct SimConfig {
  TrafficSpec traffic;
  /// When set, traffic.lambda is derived as load * capacity().
  std::optional<double> load;
  int node_count = 8;
  NodeConfig nodes;
  RuleSource rules = std::map<ClassId, ClassRuleSpec>{{0, ClassRuleSpec{1, 7, 1.0}}};
  Slot epoch_slots = 1024;
  RunMethod method = RunMethod::BOTH;
  ImbWeights weights;
  QGrid qgrid;
  std::optional<ScalePlan> plan;
  std::uint64_t seed = 1;
  /// Defaults to two epochs when unset.
  std::optional<Slot> warmup_slots;
  /// Overload trigger: sliding-window arrivals above this multiple of the
  /// previous epoch's arrivals force an immediate rule rebuild.
  double overload_factor = 1.5;
  Slot imb_sample_interval = 16;
  CalibrationPolicy calibration;

  Slot warmup() const { return warmup_slots.value_or(2 * epoch_slots); }

  ScalePlan epoch_plan() const {
    return plan ? *plan : ScalePlan::log_spaced(static_cast<std::size_t>(epoch_slots), 12, 16, 2);
  }

  RuleSet rule_set() const {
    if (const auto* per_class = std::get_if<std::map<ClassId, ClassRuleSpec>>(&rules))
      return make_rule_set(*per_class, traffic.class_mix, traffic.threat_rate);
    if (const auto* entries = std::get_if<std::vector<RuleEntry>>(&rules)) return RuleSet::from_entries(*entries);
    const auto& path = std::get<std::string>(rules);
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open rules file '" + path + "'");
    return read_rules_csv(in);
  }

  /// Packets per slot the node pool can fully inspect.
  double capacity(const RuleSet& rs) const {
    double mean_cost = 0.0;
    for (const auto& [c, frac] : traffic.class_mix) mean_cost += frac * rs.full_scan_cost(c);
    if (!(mean_cost > 0.0)) throw ParameterError("config: classes in the mix have no rules");
    return static_cast<double>(node_count) * nodes.service_rate / mean_cost;
  }

  void validate() const {
    if (node_count < 2) throw ParameterError("config: at least 2 nodes required");
    nodes.validate();
    if (epoch_slots < 1024) throw ParameterError("config: epoch_slots must be >= 1024");
    weights.validate();
    if (load && !(*load > 0.0)) throw ParameterError("config: traffic.load must be > 0");
    if (warmup() < 0 || warmup() >= static_cast<Slot>(traffic.n_slots))
      throw ParameterError("config: warmup_slots must lie in [0, n_slots)");
    if (warmup() % epoch_slots != 0) throw ParameterError("config: warmup_slots must be a multiple of epoch_slots");
    if (!(overload_factor > 1.0)) throw ParameterError("config: overload_factor must be > 1");
    if (imb_sample_interval < 1) throw ParameterError("config: imb_sample_interval must be >= 1");
    epoch_plan().validate(static_cast<std::size_t>(epoch_slots));
    traffic.validate();
  }
};

// JSON loading

namespace detail {

inline std::map<ClassId, double> parse_class_map(const nlohmann::json& j) {
  std::map<ClassId, double> out;
  for (const auto& [k, v] : j.items()) out[std::stoi(k)] = v.get<double>();
  return out;
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

/// Builds a SimConfig from JSON. Relative rule-file paths resolve against `base_dir`.
inline SimConfig sim_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  static const std::set<std::string> known{"traffic", "nodes",   "rules",       "epoch_slots", "method",
                                           "weights", "qgrid",   "plan",        "seed",        "warmup_slots",
                                           "overload_factor", "imb_sample_interval", "calibration"};
  try {
    if (!j.is_object()) throw ParameterError("config: top level must be an object");
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ParameterError("config: unknown key '" + k + "'");
    SimConfig cfg;
    if (j.contains("traffic")) {
      const auto& t = j.at("traffic");
      detail::read_opt(t, "target_H", cfg.traffic.target_H);
      detail::read_opt(t, "target_dh", cfg.traffic.target_dh);
      detail::read_opt(t, "lambda", cfg.traffic.lambda);
      detail::read_opt(t, "n_slots", cfg.traffic.n_slots);
      detail::read_opt(t, "threat_rate", cfg.traffic.threat_rate);
      detail::read_opt(t, "shared_shape", cfg.traffic.shared_shape);
      if (t.contains("load")) cfg.load = t.at("load").get<double>();
      if (t.contains("class_mix")) cfg.traffic.class_mix = detail::parse_class_map(t.at("class_mix"));
      if (t.contains("classes")) {
        for (const auto& c : t.at("classes")) {
          ServiceClass sc;
          sc.id = c.at("id").get<ClassId>();
          if (c.contains("protocol")) sc.protocol = protocol_from_string(c.at("protocol").get<std::string>());
          if (c.contains("dst_port")) {
            sc.tuple_template.dst_port_lo = c.at("dst_port").get<std::uint16_t>();
            sc.tuple_template.dst_port_hi = sc.tuple_template.dst_port_lo;
          }
          cfg.traffic.classes.push_back(sc);
        }
      }
    }
    if (j.contains("nodes")) {
      const auto& n = j.at("nodes");
      detail::read_opt(n, "count", cfg.node_count);
      detail::read_opt(n, "service_rate", cfg.nodes.service_rate);
      detail::read_opt(n, "queue_capacity", cfg.nodes.queue_capacity);
      detail::read_opt(n, "d_max", cfg.nodes.d_max);
      detail::read_opt(n, "ram_per_queued", cfg.nodes.ram_per_queued);
      detail::read_opt(n, "net_capacity", cfg.nodes.net_capacity);
      detail::read_opt(n, "util_window", cfg.nodes.util_window);
    }
    if (j.contains("rules")) {
      const auto& r = j.at("rules");
      if (r.is_string()) {
        std::filesystem::path p = r.get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        cfg.rules = p.string();
      } else if (r.is_array()) {
        std::vector<RuleEntry> entries;
        for (const auto& e : r) {
          RuleEntry re;
          re.rule_id = e.at("rule_id").get<RuleId>();
          const auto kind = e.at("kind").get<std::string>();
          if (kind == "permit")
            re.kind = RuleKind::Permit;
          else if (kind == "prohibit")
            re.kind = RuleKind::Prohibit;
          else
            throw ParameterError("config: rule kind must be permit or prohibit");
          re.class_id = e.at("class_id").get<ClassId>();
          re.cost = e.value("cost", 1.0);
          re.block_prob = e.value("block_prob", 0.0);
          entries.push_back(re);
        }
        cfg.rules = std::move(entries);
      } else if (r.is_object()) {
        std::map<ClassId, ClassRuleSpec> per_class;
        for (const auto& [k, v] : r.items()) {
          ClassRuleSpec s;
          detail::read_opt(v, "prohibit", s.prohibit);
          detail::read_opt(v, "permit", s.permit);
          detail::read_opt(v, "cost", s.cost);
          per_class[std::stoi(k)] = s;
        }
        cfg.rules = std::move(per_class);
      } else {
        throw ParameterError("config: rules must be a path, an array or an object");
      }
    }
    detail::read_opt(j, "epoch_slots", cfg.epoch_slots);
    if (j.contains("method")) cfg.method = run_method_from_string(j.at("method").get<std::string>());
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      detail::read_opt(w, "K_c", cfg.weights.K_c);
      detail::read_opt(w, "K_r", cfg.weights.K_r);
      detail::read_opt(w, "K_n", cfg.weights.K_n);
    }
    if (j.contains("qgrid")) cfg.qgrid = QGrid(j.at("qgrid").get<std::vector<double>>());
    if (j.contains("plan")) {
      const auto& p = j.at("plan");
      if (p.contains("scales")) {
        ScalePlan sp;
        sp.scales = p.at("scales").get<std::vector<std::size_t>>();
        sp.detrend_order = p.value("detrend_order", 2);
        cfg.plan = sp;
      } else {
        cfg.plan = ScalePlan::log_spaced(static_cast<std::size_t>(cfg.epoch_slots), p.value("count", std::size_t{12}),
                                         p.value("min_scale", std::size_t{16}), p.value("detrend_order", 2));
      }
    }
    detail::read_opt(j, "seed", cfg.seed);
    if (j.contains("warmup_slots")) cfg.warmup_slots = j.at("warmup_slots").get<Slot>();
    detail::read_opt(j, "overload_factor", cfg.overload_factor);
    detail::read_opt(j, "imb_sample_interval", cfg.imb_sample_interval);
    if (j.contains("calibration")) {
      const auto& c = j.at("calibration");
      auto& pol = cfg.calibration;
      detail::read_opt(c, "max_iterations", pol.max_iterations);
      detail::read_opt(c, "h_steps", pol.h_steps);
      detail::read_opt(c, "h_tol", pol.h_tol);
      detail::read_opt(c, "dh_tol_factor", pol.dh_tol_factor);
      detail::read_opt(c, "sigma_lo", pol.sigma_lo);
      detail::read_opt(c, "sigma_hi", pol.sigma_hi);
      detail::read_opt(c, "amplitude", pol.amplitude);
      detail::read_opt(c, "allow_saturation", pol.allow_saturation);
      detail::read_opt(c, "saturation_floor", pol.saturation_floor);
    }
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
}

inline SimConfig load_sim_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("config '" + path.string() + "': " + e.what());
  }
  return sim_config_from_json(j, path.parent_path());
}

/// Resolves the load fraction into an absolute arrival rate.
inline SimConfig resolved(SimConfig cfg, const RuleSet& rules) {
  if (cfg.load) cfg.traffic.lambda = *cfg.load * cfg.capacity(rules);
  return cfg;
}

/// Synthesizes the trace a config describes, with threat markers drawn from its rules.
inline Trace make_trace(const SimConfig& cfg, const RuleSet& rules) {
  const SimConfig r = resolved(cfg, rules);
  return synthesize_trace(r.traffic, r.calibration, derive_seed(r.seed, "traffic"), threat_catalog(rules));
}

/// One method's run over a fixed trace, advanced in slot or epoch steps.
class Simulation {
 public:
  Simulation(const SimConfig& cfg, Method method, std::shared_ptr<const Trace> trace, std::shared_ptr<const RuleSet> rules)
      : cfg_(cfg), method_(method), trace_(std::move(trace)), rules_(std::move(rules)), plan_(cfg.epoch_plan()) {
    cfg_.validate();
    if (!trace_ || !rules_) throw ParameterError("simulation: missing trace or rules");
    nodes_.resize(static_cast<std::size_t>(cfg_.node_count));
    for (int i = 0; i < cfg_.node_count; ++i) node_ids_.push_back(i);
    total_slots_ = static_cast<Slot>(trace_->n_slots);
    const auto n_epochs = static_cast<std::size_t>((total_slots_ + cfg_.epoch_slots - 1) / cfg_.epoch_slots);
    epochs_.resize(n_epochs);
    samples_.resize(n_epochs);
    arrivals_per_slot_.assign(static_cast<std::size_t>(total_slots_), 0);
    for (const auto& p : trace_->packets)
      if (p.arrival_slot >= 0 && p.arrival_slot < total_slots_) ++arrivals_per_slot_[static_cast<std::size_t>(p.arrival_slot)];
  }

  Slot now() const noexcept { return now_; }
  bool done() const noexcept { return now_ >= total_slots_; }
  Method method() const noexcept { return method_; }
  const std::optional<LoadRule>& active_rule() const noexcept { return rule_; }
  const std::vector<nlohmann::json>& audit_log() const noexcept { return audit_; }
  const std::vector<NodeState>& nodes() const noexcept { return nodes_; }
  /// Node chosen for each dispatched packet, in trace order.
  const std::vector<NodeId>& dispatch_log() const noexcept { return dispatch_log_; }
  int conservation_checks() const noexcept { return conservation_checks_; }

  void advance_slot() {
    if (done()) return;
    const Slot t = now_;
    const auto& packets = trace_->packets;
    while (next_packet_ < packets.size() && packets[next_packet_].arrival_slot <= t) {
      const Packet& p = packets[next_packet_++];
      const NodeId id = method_ == Method::PM ? dispatch_pm(p, rule_ ? &*rule_ : nullptr, nodes_) : dispatch_sm(nodes_);
      dispatch_log_.push_back(id);
      const auto adm = enqueue(nodes_[static_cast<std::size_t>(id)], cfg_.nodes, p, t);
      auto& ec = epochs_[epoch_of(p.arrival_slot)];
      ++ec.offered;
      if (adm == Admission::Dropped) ++ec.dropped;
    }
    events_.clear();
    for (auto& node : nodes_) step(node, cfg_.nodes, *rules_, t, events_);
    for (const auto& ev : events_) {
      auto& ec = epochs_[epoch_of(ev.packet.arrival_slot)];
      switch (ev.outcome) {
        case Outcome::Blocked: ++ec.blocked; break;
        case Outcome::Permitted: ++ec.permitted; break;
        case Outcome::NotAnalyzed: ++ec.not_analyzed; break;
      }
    }
    if (t >= cfg_.warmup() && (t - cfg_.warmup()) % cfg_.imb_sample_interval == 0) {
      std::vector<UtilSnapshot> snap;
      snap.reserve(nodes_.size());
      for (const auto& node : nodes_) snap.push_back(utilization_snapshot(node, cfg_.nodes));
      samples_[epoch_of(t)].push_back(std::move(snap));
    }

    window_arrivals_ += arrivals_per_slot_[static_cast<std::size_t>(t)];
    if (t >= cfg_.epoch_slots) window_arrivals_ -= arrivals_per_slot_[static_cast<std::size_t>(t - cfg_.epoch_slots)];
    now_ = t + 1;

    if (now_ % cfg_.epoch_slots == 0) {
      on_epoch_boundary();
    } else if (method_ == Method::PM && prev_epoch_arrivals_ > 0 && !overload_fired_ && now_ >= cfg_.epoch_slots &&
               static_cast<double>(window_arrivals_) > cfg_.overload_factor * static_cast<double>(prev_epoch_arrivals_)) {
      overload_fired_ = true;
      rebuild_rule({now_ - cfg_.epoch_slots, now_}, RuleTriggers{true, false, false});
    }
  }

  void advance_slots(Slot count) {
    for (Slot i = 0; i < count && !done(); ++i) advance_slot();
  }

  void advance_epoch() {
    do advance_slot();
    while (!done() && now_ % cfg_.epoch_slots != 0);
  }

  void run_to_end() {
    while (!done()) advance_slot();
  }

  RunStats stats() const {
    RunStats s;
    for (const auto& node : nodes_) s.nodes.push_back({node.counters, node.in_flight()});
    const auto first = static_cast<std::size_t>(cfg_.warmup() / cfg_.epoch_slots);
    const auto last = static_cast<std::size_t>((std::max<Slot>(now_, 1) - 1) / cfg_.epoch_slots);
    for (std::size_t e = first; e <= last && e < epochs_.size(); ++e) {
      s.epochs.push_back(epochs_[e]);
      s.epoch_samples.push_back(samples_[e]);
    }
    return s;
  }

  RunReport report() const {
    RunReport r = summarize(stats(), cfg_.weights);
    r.method = method_;
    r.seed = cfg_.seed;
    r.scenario.target_H = cfg_.traffic.target_H;
    r.scenario.target_dh = cfg_.traffic.target_dh;
    r.scenario.lambda = cfg_.load ? *cfg_.load : cfg_.traffic.lambda / cfg_.capacity(*rules_);
    r.scenario.achieved_H = trace_->achieved_H;
    r.scenario.achieved_dh = trace_->achieved_dh;
    r.scenario.saturated = trace_->saturated;
    return r;
  }

 private:
  std::size_t epoch_of(Slot s) const { return static_cast<std::size_t>(s / cfg_.epoch_slots); }

  void on_epoch_boundary() {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].conserved())
        throw InvariantError("simulation: node " + std::to_string(i) + " violates conservation at slot " +
                             std::to_string(now_));
    ++conservation_checks_;
    const std::int64_t epoch_arrivals = window_arrivals_;
    if (method_ == Method::PM) rebuild_rule({now_ - cfg_.epoch_slots, now_}, RuleTriggers{false, false, true});
    prev_epoch_arrivals_ = epoch_arrivals;
    overload_fired_ = false;
  }

  void rebuild_rule(SlotRange window, RuleTriggers triggers) {
    const auto& packets = trace_->packets;
    auto lo = std::lower_bound(packets.begin(), packets.end(), window.begin,
                               [](const Packet& p, Slot s) { return p.arrival_slot < s; });
    auto hi = std::lower_bound(lo, packets.end(), window.end,
                               [](const Packet& p, Slot s) { return p.arrival_slot < s; });
    const std::span<const Packet> in_window(&*packets.begin() + (lo - packets.begin()),
                                            static_cast<std::size_t>(hi - lo));
    const EpochAnalysis analysis = analyze_epoch(in_window, trace_->classes, window, *rules_, cfg_.qgrid, plan_);
    LoadRule next = rule_ ? update_rule(*rule_, analysis, node_ids_, triggers) : build_rule_pm(analysis, node_ids_);
    if (!rule_ || !(next == *rule_)) {
      nlohmann::json rec = rule_audit_record(next);
      rec["slot"] = now_;
      rec["trigger"] = triggers.overload_event ? "overload" : triggers.signature_db_refreshed ? "signatures" : "epoch";
      audit_.push_back(std::move(rec));
    }
    rule_ = std::move(next);
  }

  SimConfig cfg_;
  Method method_;
  std::shared_ptr<const Trace> trace_;
  std::shared_ptr<const RuleSet> rules_;
  ScalePlan plan_;
  std::vector<NodeState> nodes_;
  std::vector<NodeId> node_ids_;
  Slot total_slots_ = 0;
  Slot now_ = 0;
  std::size_t next_packet_ = 0;
  std::vector<EpochCounters> epochs_;
  std::vector<std::vector<std::vector<UtilSnapshot>>> samples_;
  std::vector<std::int64_t> arrivals_per_slot_;
  std::int64_t window_arrivals_ = 0;
  std::int64_t prev_epoch_arrivals_ = 0;
  bool overload_fired_ = false;
  std::optional<LoadRule> rule_;
  std::vector<nlohmann::json> audit_;
  std::vector<CompletionEvent> events_;
  std::vector<NodeId> dispatch_log_;
  int conservation_checks_ = 0;
};

/// Output of one configured run: one report per method plus each method's audit log.
struct RunResult {
  std::vector<RunReport> reports;
  std::map<Method, std::vector<nlohmann::json>> audit;
  int conservation_checks = 0;
};

inline std::string scenario_label(const SimConfig& cfg) {
  return "H=" + detail::fmt_num(cfg.traffic.target_H, 3) + " dh=" + detail::fmt_num(cfg.traffic.target_dh, 3) +
         " seed=" + std::to_string(cfg.seed);
}

/// Runs the configured method(s). Under BOTH, SM and PM replay the same trace.
inline RunResult run_detailed(const SimConfig& cfg) {
  cfg.validate();
  auto rules = std::make_shared<const RuleSet>(cfg.rule_set());
  const SimConfig r = resolved(cfg, *rules);
  r.traffic.validate();
  std::shared_ptr<const Trace> trace;
  try {
    trace = std::make_shared<const Trace>(make_trace(r, *rules));
  } catch (const CalibrationError& e) {
    throw CalibrationError(scenario_label(cfg) + ": " + e.what(), e.achieved_H(), e.achieved_dh());
  } catch (const DegenerateInputError& e) {
    throw DegenerateInputError(scenario_label(cfg) + ": " + e.what());
  }
  std::vector<Method> methods;
  if (cfg.method != RunMethod::PM) methods.push_back(Method::SM);
  if (cfg.method != RunMethod::SM) methods.push_back(Method::PM);
  RunResult out;
  for (Method m : methods) {
    Simulation sim(r, m, trace, rules);
    sim.run_to_end();
    out.reports.push_back(sim.report());
    out.audit[m] = sim.audit_log();
    out.conservation_checks += sim.conservation_checks();
  }
  return out;
}

inline std::vector<RunReport> run(const SimConfig& cfg) { return run_detailed(cfg).reports; }

struct ScenarioGrid {
  std::vector<double> H_values;
  std::vector<double> dh_values;
  /// Offered load as a fraction of the node pool's inspection capacity.
  std::vector<double> lambda_values;
  std::vector<std::uint64_t> seeds;
  SimConfig base;

  void validate() const {
    if (H_values.empty() || dh_values.empty() || lambda_values.empty())
      throw ParameterError("grid: H_values, dh_values and lambda_values must be nonempty");
    if (seeds.empty()) throw ParameterError("grid: seed list is empty");
  }
};

inline ScenarioGrid scenario_grid_from_json(const nlohmann::json& j, SimConfig base) {
  try {
    ScenarioGrid g;
    g.base = std::move(base);
    g.H_values = j.at("H_values").get<std::vector<double>>();
    g.dh_values = j.at("dh_values").get<std::vector<double>>();
    g.lambda_values = j.at("lambda_values").get<std::vector<double>>();
    g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("grid: ") + e.what());
  }
}

inline ScenarioGrid load_scenario_grid(const std::filesystem::path& path, SimConfig base) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open grid file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("grid '" + path.string() + "': " + e.what());
  }
  return scenario_grid_from_json(j, std::move(base));
}

/// Config of one grid point.
inline SimConfig grid_point(const ScenarioGrid& g, double H, double dh, double lambda, std::uint64_t seed) {
  SimConfig c = g.base;
  c.traffic.target_H = H;
  c.traffic.target_dh = dh;
  c.load = lambda;
  c.seed = seed;
  return c;
}

/// Every grid point times every seed, each an independent run. Failed runs
/// become error rows. Output order is (H, dh, lambda, seed, method).
inline std::vector<RunReport> sweep(const ScenarioGrid& grid, int parallelism) {
  grid.validate();
  if (parallelism < 1) throw ParameterError("sweep: parallelism must be >= 1");
  std::vector<std::tuple<double, double, double, std::uint64_t>> points;
  for (double H : grid.H_values)
    for (double dh : grid.dh_values)
      for (double lambda : grid.lambda_values)
        for (std::uint64_t seed : grid.seeds) points.emplace_back(H, dh, lambda, seed);
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<std::vector<RunReport>> results(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      const auto& [H, dh, lambda, seed] = points[i];
      const SimConfig cfg = grid_point(grid, H, dh, lambda, seed);
      try {
        results[i] = run(cfg);
      } catch (const std::exception& e) {
        std::vector<RunReport> rows;
        std::vector<Method> methods;
        if (cfg.method != RunMethod::PM) methods.push_back(Method::SM);
        if (cfg.method != RunMethod::SM) methods.push_back(Method::PM);
        for (Method m : methods) {
          RunReport r;
          r.scenario.target_H = H;
          r.scenario.target_dh = dh;
          r.scenario.lambda = lambda;
          if (const auto* ce = dynamic_cast<const CalibrationError*>(&e)) {
            r.scenario.achieved_H = ce->achieved_H();
            r.scenario.achieved_dh = ce->achieved_dh();
          }
          r.method = m;
          r.seed = seed;
          r.error = e.what();
          rows.push_back(std::move(r));
        }
        results[i] = std::move(rows);
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(parallelism), points.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<RunReport> out;
  for (auto& rows : results)
    for (auto& r : rows) out.push_back(std::move(r));
  return out;
}

struct Delta {
  double loss = 0.0;
  double imb = 0.0;
  double not_analyzed = 0.0;
  /// PM no worse than SM on all three metrics.
  bool pm_no_worse = true;
};

/// PM minus SM for one paired scenario.
inline Delta compare(const RunReport& sm, const RunReport& pm) {
  if (sm.method != Method::SM || pm.method != Method::PM) throw ParameterError("compare: expected an SM and a PM report");
  if (sm.seed != pm.seed || sm.scenario.target_H != pm.scenario.target_H ||
      sm.scenario.target_dh != pm.scenario.target_dh || sm.scenario.lambda != pm.scenario.lambda)
    throw ParameterError("compare: reports come from different scenarios");
  Delta d;
  d.loss = pm.loss_pct - sm.loss_pct;
  d.imb = pm.imb_tot - sm.imb_tot;
  d.not_analyzed = pm.not_analyzed_pct - sm.not_analyzed_pct;
  d.pm_no_worse = d.loss <= 0.0 && d.imb <= 0.0 && d.not_analyzed <= 0.0;
  return d;
}

}  // namespace mfbalance
