#pragma once

// One NIDS sensor node: bounded FIFO, slot-stepped inspection with a
// delay bound, and utilization tracking.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "mfbalance/error.hpp"
#include "mfbalance/ids_core.hpp"
#include "mfbalance/types.hpp"

namespace mfbalance {

struct NodeConfig {
  /// Inspection work (time units) per slot.
  double service_rate = 32.0;
  std::size_t queue_capacity = 128;
  /// Longest a packet may wait before it is forwarded uninspected.
  Slot d_max = 32;
  double ram_per_queued = 1.0 / 128.0;
  /// Admissions per slot the node's link accepts.
  double net_capacity = 64.0;
  /// Slots averaged for the CPU figure.
  std::size_t util_window = 64;

  void validate() const {
    if (!(service_rate > 0.0)) throw ParameterError("node: service_rate must be > 0");
    if (queue_capacity < 1) throw ParameterError("node: queue_capacity must be >= 1");
    if (d_max < 1) throw ParameterError("node: d_max must be >= 1");
    if (!(ram_per_queued > 0.0)) throw ParameterError("node: ram_per_queued must be > 0");
    if (!(net_capacity > 0.0)) throw ParameterError("node: net_capacity must be > 0");
    if (util_window < 1) throw ParameterError("node: util_window must be >= 1");
  }
};

/// Monotone per-node counters. `enqueued` counts every offered packet,
/// including the ones dropped at admission.
struct NodeCounters {
  std::int64_t enqueued = 0;
  std::int64_t dropped = 0;
  std::int64_t not_analyzed = 0;
  std::int64_t blocked = 0;
  std::int64_t permitted = 0;
  /// Rules compared over all completed inspections.
  std::int64_t comparisons_total = 0;
  /// Inspection work actually spent (time units).
  double work_done = 0.0;

  NodeCounters& operator+=(const NodeCounters& o) {
    enqueued += o.enqueued;
    dropped += o.dropped;
    not_analyzed += o.not_analyzed;
    blocked += o.blocked;
    permitted += o.permitted;
    comparisons_total += o.comparisons_total;
    work_done += o.work_done;
    return *this;
  }

  std::int64_t resolved() const noexcept { return dropped + not_analyzed + blocked + permitted; }
};

struct QueuedPacket {
  Packet packet;
  Slot enqueue_slot = 0;
};

struct NodeState {
  std::deque<QueuedPacket> queue;
  /// Packet under inspection and its verdict.
  std::optional<QueuedPacket> in_service;
  MatchResult in_service_match;
  double work_remaining = 0.0;
  NodeCounters counters;

  std::vector<double> util_window;
  std::size_t util_pos = 0;
  std::size_t util_filled = 0;

  Slot admission_slot = -1;
  int admissions = 0;
  int last_step_admissions = 0;
  Slot last_step = -1;

  /// Packets held by the node, waiting or in service.
  std::size_t occupancy() const noexcept { return queue.size() + (in_service ? 1 : 0); }
  std::int64_t in_flight() const noexcept { return static_cast<std::int64_t>(occupancy()); }

  bool conserved() const noexcept { return counters.enqueued == counters.resolved() + in_flight(); }
};

enum class Admission { Accepted, Dropped };

enum class Outcome { Blocked, Permitted, NotAnalyzed };

struct CompletionEvent {
  Packet packet;
  Outcome outcome = Outcome::Permitted;
  Slot slot = 0;
  int comparisons = 0;
};

/// Drop-tail admission: dropped when the waiting queue is full or the
/// slot's link admissions would exceed net_capacity.
inline Admission enqueue(NodeState& node, const NodeConfig& cfg, const Packet& packet, Slot now) {
  if (now < packet.arrival_slot) throw ParameterError("enqueue: packet arrives in the future");
  if (now != node.admission_slot) {
    node.admission_slot = now;
    node.admissions = 0;
  }
  ++node.counters.enqueued;
  if (node.queue.size() >= cfg.queue_capacity || static_cast<double>(node.admissions + 1) > cfg.net_capacity) {
    ++node.counters.dropped;
    return Admission::Dropped;
  }
  ++node.admissions;
  node.queue.push_back({packet, now});
  return Admission::Accepted;
}

/// Advances the node by one slot, spending up to service_rate units of work.
/// Head-of-line packets that waited longer than d_max are forwarded without
/// inspection. Appends completions to `events`.
inline void step(NodeState& node, const NodeConfig& cfg, const RuleSet& rules, Slot now,
                 std::vector<CompletionEvent>& events) {
  if (now < node.last_step) throw ParameterError("step: time went backwards");
  node.last_step = now;

  double budget = cfg.service_rate;
  while (budget > 0.0) {
    if (!node.in_service) {
      if (node.queue.empty()) break;
      QueuedPacket head = node.queue.front();
      node.queue.pop_front();
      if (now - head.enqueue_slot > cfg.d_max) {
        ++node.counters.not_analyzed;
        events.push_back({head.packet, Outcome::NotAnalyzed, now, 0});
        continue;
      }
      node.in_service_match = match_packet(head.packet, rules);
      node.work_remaining = node.in_service_match.cost;
      node.in_service = std::move(head);
    }
    const double spend = std::min(budget, node.work_remaining);
    budget -= spend;
    node.work_remaining -= spend;
    node.counters.work_done += spend;
    if (node.work_remaining <= 1e-12) {
      node.work_remaining = 0.0;
      const bool blocked = node.in_service_match.verdict == Verdict::Blocked;
      if (blocked)
        ++node.counters.blocked;
      else
        ++node.counters.permitted;
      node.counters.comparisons_total += node.in_service_match.comparisons;
      events.push_back({node.in_service->packet, blocked ? Outcome::Blocked : Outcome::Permitted, now,
                        node.in_service_match.comparisons});
      node.in_service.reset();
    }
  }

  if (node.util_window.size() != cfg.util_window) {
    node.util_window.assign(cfg.util_window, 0.0);
    node.util_pos = 0;
    node.util_filled = 0;
  }
  node.util_window[node.util_pos] = (cfg.service_rate - budget) / cfg.service_rate;
  node.util_pos = (node.util_pos + 1) % node.util_window.size();
  node.util_filled = std::min(node.util_filled + 1, node.util_window.size());
  node.last_step_admissions = node.admission_slot == now ? node.admissions : 0;
}

inline std::vector<CompletionEvent> step(NodeState& node, const NodeConfig& cfg, const RuleSet& rules, Slot now) {
  std::vector<CompletionEvent> events;
  step(node, cfg, rules, now, events);
  return events;
}

/// Per-node utilization: CPU, RAM and available network bandwidth, each in [0, 1].
struct UtilSnapshot {
  double cpu = 0.0;
  double ram = 0.0;
  double net = 1.0;
};

inline UtilSnapshot utilization_snapshot(const NodeState& node, const NodeConfig& cfg) {
  UtilSnapshot s;
  if (node.util_filled > 0) {
    double sum = 0.0;
    for (std::size_t i = 0; i < node.util_filled; ++i) sum += node.util_window[i];
    s.cpu = std::clamp(sum / static_cast<double>(node.util_filled), 0.0, 1.0);
  }
  s.ram = std::clamp(static_cast<double>(node.occupancy()) * cfg.ram_per_queued, 0.0, 1.0);
  s.net = std::clamp(1.0 - static_cast<double>(node.last_step_admissions) / cfg.net_capacity, 0.0, 1.0);
  return s;
}

}  // namespace mfbalance
