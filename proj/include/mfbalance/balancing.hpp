#pragma once

// Dispatch policies: the join-shortest-queue baseline (SM) and the
// multifractality-aware epoch procedure (PM) that builds Load_T rules.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "json.hpp"
#include "mfbalance/error.hpp"
#include "mfbalance/fractal_analysis.hpp"
#include "mfbalance/ids_core.hpp"
#include "mfbalance/node_model.hpp"
#include "mfbalance/types.hpp"

namespace mfbalance {

enum class Method { SM, PM };

inline const char* to_string(Method m) { return m == Method::SM ? "SM" : "PM"; }

struct ClassAnalysis {
  MfEstimate mf;
  std::int64_t packets = 0;
  double pkt_ratio = 0.0;
  double sig_ratio = 0.0;
  double T_ids = 0.0;
  /// Full-scan cost of one packet of the class.
  double T_serv = 0.0;
  double T_new = 0.0;
};

struct EpochAnalysis {
  SlotRange window;
  std::map<ClassId, ClassAnalysis> per_class;
};

/// Active dispatch table Load_T(T_new, H, dh).
struct LoadRule {
  int epoch_id = 0;
  std::set<ClassId> first_list;
  std::set<ClassId> second_list;
  std::map<ClassId, std::vector<NodeId>> assignment;
  double threshold = 0.0;
  /// (H, dh) the rule was built from, per class.
  std::map<ClassId, std::pair<double, double>> provenance;

  friend bool operator==(const LoadRule&, const LoadRule&) = default;
};

/// Service class of a packet. Header classification is already folded
/// into the packet's class field in this model.
inline ClassId classify(const Packet& packet) noexcept { return packet.service_class; }

/// Per-class estimates, ratios and DPI times for one window of slot counts.
inline EpochAnalysis analyze_epoch(const std::map<ClassId, Series>& counts, SlotRange window, const RuleSet& rules,
                                   const QGrid& qgrid, const ScalePlan& plan) {
  if (window.length() < 1024) throw ParameterError("analyze_epoch: window must span at least 1024 slots");
  EpochAnalysis out;
  out.window = window;
  const auto estimates = window_estimates(counts, qgrid, plan);

  std::int64_t total_packets = 0;
  std::map<ClassId, std::int64_t> packets;
  for (const auto& [c, series] : counts) {
    double sum = 0.0;
    for (double v : series) sum += v;
    packets[c] = static_cast<std::int64_t>(std::llround(sum));
    total_packets += packets[c];
  }
  std::size_t total_rules = 0;
  for (const auto& [c, series] : counts) total_rules += rules.rule_count(c);

  for (const auto& [c, series] : counts) {
    ClassAnalysis a;
    a.mf = estimates.at(c);
    a.packets = packets[c];
    a.pkt_ratio = total_packets > 0 ? static_cast<double>(packets[c]) / static_cast<double>(total_packets) : 0.0;
    a.sig_ratio = total_rules > 0 ? static_cast<double>(rules.rule_count(c)) / static_cast<double>(total_rules) : 0.0;
    a.T_ids = base_service_time(c, rules).value;
    a.T_serv = rules.full_scan_cost(c);
    const double H = std::clamp(a.mf.H, 1e-6, 1.2);
    const double dh = std::max(0.0, a.mf.dh);
    a.T_new = dpi_time_estimate(a.T_ids, a.T_serv, H, dh);
    out.per_class[c] = a;
  }
  return out;
}

inline EpochAnalysis analyze_epoch(std::span<const Packet> packets, std::span<const ServiceClass> classes,
                                   SlotRange window, const RuleSet& rules, const QGrid& qgrid, const ScalePlan& plan) {
  return analyze_epoch(class_count_series(packets, classes, window), window, rules, qgrid, plan);
}

/// Builds a Load_T rule from an epoch analysis.
///
/// The threshold is the median T_new over classes seen in the window.
/// Classes at or above it form the first list, the rest the second. The
/// node pool is split between the lists in proportion to each list's demand
/// sum(pkt_ratio * T_new), with at least one node per nonempty list.
inline LoadRule build_rule_pm(const EpochAnalysis& analysis, std::span<const NodeId> nodes,
                              const std::optional<LoadRule>& prev = std::nullopt) {
  if (nodes.empty()) throw ParameterError("build_rule_pm: no nodes");
  if (analysis.per_class.empty()) throw ParameterError("build_rule_pm: empty analysis");

  LoadRule rule;
  rule.epoch_id = prev ? prev->epoch_id + 1 : 0;

  std::vector<double> present;
  for (const auto& [c, a] : analysis.per_class)
    if (a.pkt_ratio > 0.0) present.push_back(a.T_new);
  if (present.empty())
    for (const auto& [c, a] : analysis.per_class) present.push_back(a.T_new);
  std::sort(present.begin(), present.end());
  const std::size_t m = present.size();
  rule.threshold = m % 2 == 1 ? present[m / 2] : 0.5 * (present[m / 2 - 1] + present[m / 2]);

  double demand_first = 0.0, demand_second = 0.0;
  for (const auto& [c, a] : analysis.per_class) {
    rule.provenance[c] = {a.mf.H, a.mf.dh};
    if (a.T_new >= rule.threshold) {
      rule.first_list.insert(c);
      demand_first += a.pkt_ratio * a.T_new;
    } else {
      rule.second_list.insert(c);
      demand_second += a.pkt_ratio * a.T_new;
    }
  }

  const std::vector<NodeId> pool(nodes.begin(), nodes.end());
  std::vector<NodeId> first_nodes, second_nodes;
  const auto n = static_cast<long>(pool.size());
  if (rule.second_list.empty()) {
    first_nodes = pool;
  } else if (rule.first_list.empty()) {
    second_nodes = pool;
  } else if (n == 1) {
    first_nodes = pool;
    second_nodes = pool;
  } else {
    const double total = demand_first + demand_second;
    const double share = total > 0.0 ? demand_first / total : 0.5;
    const long k = std::clamp(std::lround(static_cast<double>(n) * share), 1L, n - 1);
    first_nodes.assign(pool.begin(), pool.begin() + k);
    second_nodes.assign(pool.begin() + k, pool.end());
  }
  for (ClassId c : rule.first_list) rule.assignment[c] = first_nodes;
  for (ClassId c : rule.second_list) rule.assignment[c] = second_nodes;
  return rule;
}

/// Join-shortest-queue over all nodes; ties go to the lowest id.
inline NodeId dispatch_sm(std::span<const NodeState> nodes) {
  if (nodes.empty()) throw ParameterError("dispatch_sm: no nodes");
  NodeId best = 0;
  for (std::size_t i = 1; i < nodes.size(); ++i)
    if (nodes[i].occupancy() < nodes[static_cast<std::size_t>(best)].occupancy()) best = static_cast<NodeId>(i);
  return best;
}

inline NodeId dispatch_sm(const Packet& /*packet*/, std::span<const NodeState> nodes) { return dispatch_sm(nodes); }

/// Join-shortest-queue restricted to the rule's node subset for the
/// packet's class. Classes the rule does not cover fall back to SM.
inline NodeId dispatch_pm(const Packet& packet, const LoadRule* rule, std::span<const NodeState> nodes) {
  if (rule == nullptr) return dispatch_sm(nodes);
  auto it = rule->assignment.find(classify(packet));
  if (it == rule->assignment.end() || it->second.empty()) return dispatch_sm(nodes);
  const auto& subset = it->second;
  NodeId best = subset.front();
  for (NodeId id : subset)
    if (nodes[static_cast<std::size_t>(id)].occupancy() < nodes[static_cast<std::size_t>(best)].occupancy() ||
        (nodes[static_cast<std::size_t>(id)].occupancy() == nodes[static_cast<std::size_t>(best)].occupancy() &&
         id < best))
      best = id;
  return best;
}

struct RuleTriggers {
  bool overload_event = false;
  bool signature_db_refreshed = false;
  bool epoch_boundary = false;

  bool any() const noexcept { return overload_event || signature_db_refreshed || epoch_boundary; }
};

/// Rebuilds the rule when a trigger fires; otherwise returns `prev` unchanged.
inline LoadRule update_rule(const LoadRule& prev, const EpochAnalysis& analysis, std::span<const NodeId> nodes,
                            RuleTriggers triggers) {
  if (!triggers.any()) return prev;
  return build_rule_pm(analysis, nodes, prev);
}

/// One JSON-lines audit record for a rule change.
inline nlohmann::json rule_audit_record(const LoadRule& rule) {
  nlohmann::json j;
  j["epoch"] = rule.epoch_id;
  j["threshold"] = rule.threshold;
  j["first_list"] = rule.first_list;
  j["second_list"] = rule.second_list;
  nlohmann::json assign = nlohmann::json::object();
  for (const auto& [c, ids] : rule.assignment) assign[std::to_string(c)] = ids;
  j["assignment"] = assign;
  nlohmann::json prov = nlohmann::json::object();
  for (const auto& [c, hd] : rule.provenance) prov[std::to_string(c)] = {{"H", hd.first}, {"dh", hd.second}};
  j["provenance"] = prov;
  return j;
}

}  // namespace mfbalance
