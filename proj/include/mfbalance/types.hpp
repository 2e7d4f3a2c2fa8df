#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mfbalance/error.hpp"

namespace mfbalance {

using ClassId = int;
using RuleId = int;
using NodeId = int;
using Slot = std::int64_t;

/// Per-slot values. Load series are non-negative; fGn output is not.
using Series = std::vector<double>;

/// Half-open slot interval [begin, end).
struct SlotRange {
  Slot begin = 0;
  Slot end = 0;

  Slot length() const noexcept { return end - begin; }
  bool contains(Slot s) const noexcept { return s >= begin && s < end; }
};

enum class Protocol : std::uint8_t { TCP, UDP, OTHER };

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::TCP: return "TCP";
    case Protocol::UDP: return "UDP";
    case Protocol::OTHER: return "OTHER";
  }
  return "OTHER";
}

inline Protocol protocol_from_string(std::string_view s) {
  if (s == "TCP" || s == "tcp") return Protocol::TCP;
  if (s == "UDP" || s == "udp") return Protocol::UDP;
  if (s == "OTHER" || s == "other") return Protocol::OTHER;
  throw ParameterError("unknown protocol '" + std::string(s) + "'");
}

struct FiveTuple {
  std::uint32_t src_addr = 0;
  std::uint16_t src_port = 0;
  std::uint32_t dst_addr = 0;
  std::uint16_t dst_port = 0;
  Protocol protocol = Protocol::OTHER;

  friend bool operator==(const FiveTuple&, const FiveTuple&) = default;
};

/// Inclusive value ranges that packets of a class draw their tuple from.
struct TupleTemplate {
  std::uint32_t src_addr_lo = 0x0A000000;  // 10.0.0.0
  std::uint32_t src_addr_hi = 0x0A00FFFF;
  std::uint16_t src_port_lo = 1024;
  std::uint16_t src_port_hi = 65535;
  std::uint32_t dst_addr_lo = 0xC0A80000;  // 192.168.0.0
  std::uint32_t dst_addr_hi = 0xC0A800FF;
  std::uint16_t dst_port_lo = 80;
  std::uint16_t dst_port_hi = 80;
};

struct ServiceClass {
  ClassId id = 0;
  Protocol protocol = Protocol::TCP;
  TupleTemplate tuple_template{};
};

inline constexpr std::size_t kMaxServiceClasses = 64;

struct Packet {
  Slot arrival_slot = 0;
  ClassId service_class = 0;
  std::int64_t flow_id = 0;
  FiveTuple tuple{};
  std::optional<RuleId> threat_marker;

  friend bool operator==(const Packet&, const Packet&) = default;
};

}  // namespace mfbalance
