#pragma once

// Signatures, permit/prohibit rule sets, and the DPI cost model.

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfbalance/error.hpp"
#include "mfbalance/types.hpp"

namespace mfbalance {

struct Signature {
  RuleId id = 0;
  ClassId service_class = 0;
  /// Comparison time in time units.
  double cost = 1.0;
};

enum class RuleKind { Permit, Prohibit };

/// One line of the rule database.
struct RuleEntry {
  RuleId rule_id = 0;
  RuleKind kind = RuleKind::Permit;
  ClassId class_id = 0;
  double cost = 1.0;
  /// Blocking probability P(j); prohibit rules only.
  double block_prob = 0.0;
};

/// Immutable rule set: permit rules R+, prohibit rules R-, each bound to
/// exactly one signature, plus blocking probabilities for R-.
class RuleSet {
 public:
  RuleSet() = default;

  /// Builds from explicit lists. Rejects overlap between permit and prohibit.
  RuleSet(std::vector<RuleId> permit, std::vector<RuleId> prohibit, const std::vector<Signature>& signatures,
          const std::map<RuleId, double>& block_prob)
      : permit_(std::move(permit)), prohibit_(std::move(prohibit)) {
    for (const auto& s : signatures) {
      if (!(s.cost > 0.0) || !std::isfinite(s.cost))
        throw InvariantError("rule set: signature " + std::to_string(s.id) + " must have cost > 0");
      if (!signatures_.emplace(s.id, s).second)
        throw InvariantError("rule set: duplicate signature id " + std::to_string(s.id));
    }
    std::set<RuleId> seen_permit(permit_.begin(), permit_.end());
    if (seen_permit.size() != permit_.size()) throw InvariantError("rule set: duplicate permit rule");
    std::set<RuleId> seen_prohibit(prohibit_.begin(), prohibit_.end());
    if (seen_prohibit.size() != prohibit_.size()) throw InvariantError("rule set: duplicate prohibit rule");
    for (RuleId r : permit_)
      if (seen_prohibit.count(r) != 0)
        throw InvariantError("rule set: rule " + std::to_string(r) + " is both permit and prohibit");
    for (RuleId r : permit_) require_signature(r);
    for (RuleId r : prohibit_) require_signature(r);
    if (signatures_.size() != permit_.size() + prohibit_.size())
      throw InvariantError("rule set: every signature must be bound to exactly one rule");

    for (const auto& [r, p] : block_prob) {
      if (seen_prohibit.count(r) == 0)
        throw InvariantError("rule set: block probability given for non-prohibit rule " + std::to_string(r));
      if (!(p >= 0.0 && p <= 1.0)) throw InvariantError("rule set: block probability outside [0, 1]");
    }
    for (RuleId r : prohibit_) {
      auto it = block_prob.find(r);
      block_prob_[r] = it == block_prob.end() ? 0.0 : it->second;
      total_block_prob_ += block_prob_[r];
    }
    if (total_block_prob_ > 1.0 + 1e-12) throw InvariantError("rule set: sum of block probabilities exceeds 1");

    for (RuleId r : prohibit_) prohibit_by_class_[signatures_.at(r).service_class].push_back(r);
    for (RuleId r : permit_) permit_by_class_[signatures_.at(r).service_class].push_back(r);
    for (const auto& [id, s] : signatures_) classes_.insert(s.service_class);
    for (ClassId c : classes_) {
      ClassScan& scan = scan_[c];
      for (RuleId r : prohibit_for(c)) {
        scan.prohibit_ids.push_back(r);
        scan.prohibit_costs.push_back(signatures_.at(r).cost);
      }
      scan.permit_count = static_cast<int>(permit_for(c).size());
      scan.permit_cost = cost_of(permit_for(c));
    }
  }

  /// Flattened per-class view used on the matching hot path.
  struct ClassScan {
    std::vector<RuleId> prohibit_ids;
    std::vector<double> prohibit_costs;
    int permit_count = 0;
    double permit_cost = 0.0;
  };

  const ClassScan* scan_for(ClassId c) const {
    auto it = scan_.find(c);
    return it == scan_.end() ? nullptr : &it->second;
  }

  /// Builds from rule-database entries (file order is rule order).
  static RuleSet from_entries(const std::vector<RuleEntry>& entries) {
    std::vector<RuleId> permit, prohibit;
    std::vector<Signature> sigs;
    std::map<RuleId, double> probs;
    std::set<RuleId> ids;
    for (const auto& e : entries) {
      if (!ids.insert(e.rule_id).second)
        throw InvariantError("rule set: rule " + std::to_string(e.rule_id) + " listed more than once");
      sigs.push_back({e.rule_id, e.class_id, e.cost});
      if (e.kind == RuleKind::Permit) {
        if (e.block_prob != 0.0) throw InvariantError("rule set: permit rules carry no block probability");
        permit.push_back(e.rule_id);
      } else {
        prohibit.push_back(e.rule_id);
        probs[e.rule_id] = e.block_prob;
      }
    }
    return RuleSet(std::move(permit), std::move(prohibit), sigs, probs);
  }

  std::vector<RuleEntry> entries() const {
    std::vector<RuleEntry> out;
    for (RuleId r : prohibit_) {
      const auto& s = signatures_.at(r);
      out.push_back({r, RuleKind::Prohibit, s.service_class, s.cost, block_prob_.at(r)});
    }
    for (RuleId r : permit_) {
      const auto& s = signatures_.at(r);
      out.push_back({r, RuleKind::Permit, s.service_class, s.cost, 0.0});
    }
    std::sort(out.begin(), out.end(), [](const RuleEntry& a, const RuleEntry& b) { return a.rule_id < b.rule_id; });
    return out;
  }

  bool empty() const noexcept { return signatures_.empty(); }
  const std::vector<RuleId>& permit() const noexcept { return permit_; }
  const std::vector<RuleId>& prohibit() const noexcept { return prohibit_; }
  const Signature& signature(RuleId r) const { return signatures_.at(r); }
  double block_prob(RuleId r) const { return block_prob_.at(r); }
  double total_block_prob() const noexcept { return total_block_prob_; }
  const std::set<ClassId>& classes() const noexcept { return classes_; }

  const std::vector<RuleId>& prohibit_for(ClassId c) const { return lookup(prohibit_by_class_, c); }
  const std::vector<RuleId>& permit_for(ClassId c) const { return lookup(permit_by_class_, c); }

  bool is_prohibit(RuleId r) const { return block_prob_.count(r) != 0; }

  double cost_of(const std::vector<RuleId>& ids) const {
    double sum = 0.0;
    for (RuleId r : ids) sum += signatures_.at(r).cost;
    return sum;
  }

  /// Time to scan every rule of the class once (a benign packet's cost).
  double full_scan_cost(ClassId c) const { return cost_of(prohibit_for(c)) + cost_of(permit_for(c)); }

  std::size_t rule_count(ClassId c) const { return prohibit_for(c).size() + permit_for(c).size(); }

 private:
  void require_signature(RuleId r) const {
    if (signatures_.count(r) == 0) throw InvariantError("rule set: rule " + std::to_string(r) + " has no signature");
  }

  static const std::vector<RuleId>& lookup(const std::map<ClassId, std::vector<RuleId>>& m, ClassId c) {
    static const std::vector<RuleId> none;
    auto it = m.find(c);
    return it == m.end() ? none : it->second;
  }

  std::vector<RuleId> permit_;
  std::vector<RuleId> prohibit_;
  std::map<RuleId, Signature> signatures_;
  std::map<RuleId, double> block_prob_;
  double total_block_prob_ = 0.0;
  std::map<ClassId, std::vector<RuleId>> prohibit_by_class_;
  std::map<ClassId, std::vector<RuleId>> permit_by_class_;
  std::set<ClassId> classes_;
  std::map<ClassId, ClassScan> scan_;
};

enum class Verdict { Blocked, Permitted };

struct MatchResult {
  Verdict verdict = Verdict::Permitted;
  /// Rules compared against the packet.
  int comparisons = 0;
  /// Sum of the compared rules' costs (time units).
  double cost = 0.0;
};

/// Sequential signature matching: the class's prohibit rules in order, then
/// its permit rules. A packet whose threat marker names a scanned prohibit
/// rule stops there and is blocked.
inline MatchResult match_packet(const Packet& packet, const RuleSet& rules) {
  if (rules.empty()) throw ParameterError("match_packet: empty rule set");
  MatchResult res;
  const auto* scan = rules.scan_for(packet.service_class);
  if (scan == nullptr) return res;
  for (std::size_t i = 0; i < scan->prohibit_ids.size(); ++i) {
    ++res.comparisons;
    res.cost += scan->prohibit_costs[i];
    if (packet.threat_marker && *packet.threat_marker == scan->prohibit_ids[i]) {
      res.verdict = Verdict::Blocked;
      return res;
    }
  }
  res.comparisons += scan->permit_count;
  res.cost += scan->permit_cost;
  return res;
}

/// Average IDS service time, evaluated literally:
///   (sum_j P(j)) * (sum of prohibit costs) + (1 - sum_j P(j)) * (sum of permit costs).
inline double avg_ids_service_time(const RuleSet& rules) {
  const double p = rules.total_block_prob();
  if (p > 1.0 + 1e-12) throw InvariantError("avg_ids_service_time: block probabilities sum above 1");
  return p * rules.cost_of(rules.prohibit()) + (1.0 - p) * rules.cost_of(rules.permit());
}

struct ClassServiceTime {
  double value = 0.0;
  /// The class owns no rules; value is 0.
  bool no_rules = false;
};

/// The average-service-time formula restricted to one class. The class's
/// blocking probabilities are rescaled so they sum to the rule set's total
/// (classes without any blocking mass keep zero).
inline ClassServiceTime base_service_time(ClassId cls, const RuleSet& rules) {
  const auto& pro = rules.prohibit_for(cls);
  const auto& per = rules.permit_for(cls);
  if (pro.empty() && per.empty()) return {0.0, true};
  double class_p = 0.0;
  for (RuleId r : pro) class_p += rules.block_prob(r);
  const double p = class_p > 0.0 ? rules.total_block_prob() : 0.0;
  return {p * rules.cost_of(pro) + (1.0 - p) * rules.cost_of(per), false};
}

/// Multifractality-adjusted average DPI time for one service.
///
///   H = 0.5 (within 1e-9) or H < 0.5     -> T_ids
///   H >= 0.9, or H > 0.5 and dh >= 1     -> T_ids + T_serv
///   0.5 < H < 0.9, dh <= 0.4             -> T_ids + (H - 0.5) T_serv
///   0.5 < H < 0.9, 0.4 < dh < 1          -> T_ids + (H - 0.5)(dh - 0.4) T_serv
///
/// Note the jump at dh = 0.4: the third branch restarts near zero.
inline double dpi_time_estimate(double T_ids, double T_serv, double H, double dh) {
  if (T_ids < 0.0 || T_serv < 0.0 || dh < 0.0 || H <= 0.0)
    throw ParameterError("dpi_time_estimate: inputs must be non-negative (and H > 0)");
  if (!(H <= 1.2) || !std::isfinite(T_ids) || !std::isfinite(T_serv) || !std::isfinite(dh))
    throw ParameterError("dpi_time_estimate: H must lie in (0, 1.2]");
  if (std::abs(H - 0.5) <= 1e-9 || H < 0.5) return T_ids;
  if (H >= 0.9 || dh >= 1.0) return T_ids + T_serv;
  if (dh <= 0.4) return T_ids + (H - 0.5) * T_serv;
  return T_ids + (H - 0.5) * (dh - 0.4) * T_serv;
}

struct ServiceProfile {
  std::map<ClassId, std::size_t> signature_count;
  std::map<ClassId, double> signature_ratio;
  std::map<ClassId, double> base_time;
};

inline ServiceProfile make_service_profile(const RuleSet& rules) {
  ServiceProfile prof;
  std::size_t total = 0;
  for (ClassId c : rules.classes()) {
    prof.signature_count[c] = rules.rule_count(c);
    total += rules.rule_count(c);
    prof.base_time[c] = base_service_time(c, rules).value;
  }
  for (const auto& [c, k] : prof.signature_count)
    prof.signature_ratio[c] = total == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(total);
  return prof;
}

/// Per-class rule counts for `make_rule_set`.
struct ClassRuleSpec {
  int prohibit = 0;
  int permit = 0;
  double cost = 1.0;
};

/// Synthetic rule database. Rule ids are assigned consecutively per class,
/// prohibit rules first. Each class's blocking mass is threat_rate * mix[c],
/// spread evenly over its prohibit rules.
inline RuleSet make_rule_set(const std::map<ClassId, ClassRuleSpec>& per_class,
                             const std::map<ClassId, double>& mix, double threat_rate) {
  std::vector<RuleEntry> entries;
  RuleId next = 1;
  for (const auto& [c, spec] : per_class) {
    const auto mit = mix.find(c);
    const double share = mit == mix.end() ? 0.0 : mit->second;
    for (int i = 0; i < spec.prohibit; ++i)
      entries.push_back({next++, RuleKind::Prohibit, c, spec.cost, threat_rate * share / spec.prohibit});
    for (int i = 0; i < spec.permit; ++i) entries.push_back({next++, RuleKind::Permit, c, spec.cost, 0.0});
  }
  return RuleSet::from_entries(entries);
}

/// Prohibit rules per class, for drawing threat markers.
inline std::map<ClassId, std::vector<RuleId>> threat_catalog(const RuleSet& rules) {
  std::map<ClassId, std::vector<RuleId>> out;
  for (ClassId c : rules.classes()) out[c] = rules.prohibit_for(c);
  return out;
}

// Rule database CSV: rule_id,kind,class_id,cost,block_prob

inline void write_rules_csv(std::ostream& os, const RuleSet& rules) {
  os << "rule_id,kind,class_id,cost,block_prob\n";
  for (const auto& e : rules.entries()) {
    os << e.rule_id << ',' << (e.kind == RuleKind::Permit ? "permit" : "prohibit") << ',' << e.class_id << ','
       << e.cost << ',';
    if (e.kind == RuleKind::Prohibit) os << e.block_prob;
    os << '\n';
  }
}

inline RuleSet read_rules_csv(std::istream& is) {
  std::vector<RuleEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("rule_id", 0) == 0) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 5) throw ParameterError("rules csv line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      RuleEntry e;
      e.rule_id = std::stoi(f[0]);
      if (f[1] == "permit")
        e.kind = RuleKind::Permit;
      else if (f[1] == "prohibit")
        e.kind = RuleKind::Prohibit;
      else
        throw ParameterError("rules csv line " + std::to_string(lineno) + ": kind must be permit or prohibit");
      e.class_id = std::stoi(f[2]);
      e.cost = std::stod(f[3]);
      if (e.kind == RuleKind::Prohibit)
        e.block_prob = f[4].empty() ? 0.0 : std::stod(f[4]);
      else if (!f[4].empty())
        throw ParameterError("rules csv line " + std::to_string(lineno) + ": permit rules take no block_prob");
      entries.push_back(e);
    } catch (const ParameterError&) {
      throw;
    } catch (const std::invalid_argument&) {
      throw ParameterError("rules csv line " + std::to_string(lineno) + ": malformed number");
    } catch (const std::out_of_range&) {
      throw ParameterError("rules csv line " + std::to_string(lineno) + ": number out of range");
    }
  }
  return RuleSet::from_entries(entries);
}

}  // namespace mfbalance
