#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mfbalance/ids_core.hpp"

using namespace mfbalance;

namespace {

RuleEntry prohibit(RuleId id, ClassId c, double cost, double p) { return {id, RuleKind::Prohibit, c, cost, p}; }
RuleEntry permit(RuleId id, ClassId c, double cost) { return {id, RuleKind::Permit, c, cost, 0.0}; }

// 5 prohibit rules (ids 1..5) and 3 permit rules (6..8), unit cost, class 0.
RuleSet five_three() {
  std::vector<RuleEntry> e;
  for (RuleId r = 1; r <= 5; ++r) e.push_back(prohibit(r, 0, 1.0, 0.02));
  for (RuleId r = 6; r <= 8; ++r) e.push_back(permit(r, 0, 1.0));
  return RuleSet::from_entries(e);
}

Packet packet_of(ClassId c, std::optional<RuleId> marker = std::nullopt) {
  Packet p;
  p.service_class = c;
  p.threat_marker = marker;
  return p;
}

// Hand-rolled generator: random rule set with up to `classes` classes.
std::vector<RuleEntry> random_entries(std::mt19937_64& g, int classes) {
  std::uniform_int_distribution<int> count(0, 6);
  std::uniform_real_distribution<double> cost(0.1, 5.0);
  std::vector<RuleEntry> e;
  RuleId next = 1;
  std::vector<std::size_t> pro_idx;
  for (ClassId c = 0; c < classes; ++c) {
    const int np = count(g), nq = count(g) + 1;
    for (int i = 0; i < np; ++i) {
      pro_idx.push_back(e.size());
      e.push_back(prohibit(next++, c, cost(g), 0.0));
    }
    for (int i = 0; i < nq; ++i) e.push_back(permit(next++, c, cost(g)));
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double total = u(g);
  std::vector<double> w(pro_idx.size());
  double sum = 0.0;
  for (auto& x : w) sum += (x = u(g) + 1e-3);
  for (std::size_t i = 0; i < pro_idx.size(); ++i) e[pro_idx[i]].block_prob = total * w[i] / sum;
  return e;
}

// Literal evaluation of the average service time from the entry list.
double oracle_avg(const std::vector<RuleEntry>& e) {
  double p = 0.0, pro = 0.0, per = 0.0;
  for (const auto& r : e) {
    if (r.kind == RuleKind::Prohibit) {
      p += r.block_prob;
      pro += r.cost;
    } else {
      per += r.cost;
    }
  }
  return p * pro + (1.0 - p) * per;
}

}  // namespace

TEST(MatchPacket, ImmediateHit) {
  const auto rs = five_three();
  const auto m = match_packet(packet_of(0, 1), rs);
  EXPECT_EQ(m.verdict, Verdict::Blocked);
  EXPECT_EQ(m.comparisons, 1);
  EXPECT_DOUBLE_EQ(m.cost, 1.0);
}

TEST(MatchPacket, BenignFullScan) {
  const auto m = match_packet(packet_of(0), five_three());
  EXPECT_EQ(m.verdict, Verdict::Permitted);
  EXPECT_EQ(m.comparisons, 8);
  EXPECT_DOUBLE_EQ(m.cost, 8.0);
}

TEST(MatchPacket, PrefixCost) {
  const auto m = match_packet(packet_of(0, 3), five_three());
  EXPECT_EQ(m.verdict, Verdict::Blocked);
  EXPECT_EQ(m.comparisons, 3);
}

TEST(MatchPacket, EmptyRuleSetRejected) { EXPECT_THROW(match_packet(packet_of(0), RuleSet{}), ParameterError); }

TEST(MatchPacket, OtherClassMarkerIsNotMatched) {
  std::vector<RuleEntry> e = {prohibit(1, 0, 1, 0.1), permit(2, 0, 1), prohibit(3, 1, 1, 0.1), permit(4, 1, 1)};
  const auto rs = RuleSet::from_entries(e);
  const auto m = match_packet(packet_of(0, 3), rs);
  EXPECT_EQ(m.verdict, Verdict::Permitted);
  EXPECT_EQ(m.comparisons, 2);
}

TEST(MatchPacket, BlockedNeverCostsMoreThanPermitted) {
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto rs = RuleSet::from_entries(random_entries(g, 3));
    for (ClassId c : rs.classes()) {
      const auto full = match_packet(packet_of(c), rs);
      EXPECT_GE(full.comparisons, 1);
      for (RuleId r : rs.prohibit_for(c)) {
        const auto hit = match_packet(packet_of(c, r), rs);
        EXPECT_EQ(hit.verdict, Verdict::Blocked);
        EXPECT_LE(hit.comparisons, full.comparisons);
        EXPECT_LE(hit.cost, full.cost + 1e-12);
      }
    }
  }
}

TEST(AvgIdsServiceTime, CertainBlock) {
  const auto rs = RuleSet::from_entries({prohibit(1, 0, 2.0, 1.0)});
  EXPECT_NEAR(avg_ids_service_time(rs), 2.0, 1e-12);
}

TEST(AvgIdsServiceTime, CertainPermit) {
  const auto rs = RuleSet::from_entries({permit(1, 0, 1), permit(2, 0, 1), permit(3, 0, 1)});
  EXPECT_NEAR(avg_ids_service_time(rs), 3.0, 1e-12);
}

TEST(AvgIdsServiceTime, MixedHandEvaluation) {
  const auto rs = RuleSet::from_entries(
      {prohibit(1, 0, 1.0, 0.1), prohibit(2, 0, 2.0, 0.2), permit(3, 0, 1), permit(4, 0, 1), permit(5, 0, 1)});
  EXPECT_NEAR(avg_ids_service_time(rs), 0.3 * 3.0 + 0.7 * 3.0, 1e-12);
}

TEST(AvgIdsServiceTime, MatchesLiteralOracle) {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto e = random_entries(g, 4);
    EXPECT_NEAR(avg_ids_service_time(RuleSet::from_entries(e)), oracle_avg(e), 1e-12);
  }
}

TEST(AvgIdsServiceTime, LinearInEachCost) {
  std::mt19937_64 g(6);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    auto e = random_entries(g, 3);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, e.size() - 1)(g);
    const double c0 = e[k].cost, c1 = u(g), c2 = u(g);
    auto at = [&](double c) {
      e[k].cost = c;
      return avg_ids_service_time(RuleSet::from_entries(e));
    };
    const double f0 = at(c0), f1 = at(c1), f2 = at(c2);
    // Linearity: the three points are collinear in the cost.
    if (std::abs(c1 - c0) > 1e-6 && std::abs(c2 - c0) > 1e-6) {
      EXPECT_NEAR((f1 - f0) / (c1 - c0), (f2 - f0) / (c2 - c0), 1e-9);
    }
  }
}

TEST(AvgIdsServiceTime, ContinuousInEachBlockProb) {
  std::mt19937_64 g(8);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto e = random_entries(g, 3);
    std::vector<std::size_t> pro;
    for (std::size_t i = 0; i < e.size(); ++i)
      if (e[i].kind == RuleKind::Prohibit) pro.push_back(i);
    if (pro.empty()) continue;
    const std::size_t k = pro[std::uniform_int_distribution<std::size_t>(0, pro.size() - 1)(g)];
    const double base = avg_ids_service_time(RuleSet::from_entries(e));
    double total = 0.0;
    for (std::size_t i : pro) total += e[i].block_prob;
    const double eps = std::min(1e-7, (1.0 - total) / 2.0);
    e[k].block_prob += eps;
    const double bumped = avg_ids_service_time(RuleSet::from_entries(e));
    double scale = 0.0;
    for (const auto& r : e) scale += r.cost;
    EXPECT_LE(std::abs(bumped - base), eps * scale + 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(RuleSetInvariants, OverlapRejected) {
  EXPECT_THROW(RuleSet({1, 2}, {2}, {{1, 0, 1}, {2, 0, 1}}, {}), InvariantError);
}

TEST(RuleSetInvariants, BlockMassAboveOneRejected) {
  EXPECT_THROW(RuleSet::from_entries({prohibit(1, 0, 1, 0.6), prohibit(2, 0, 1, 0.5)}), InvariantError);
}

TEST(RuleSetInvariants, NonPositiveCostRejected) {
  EXPECT_THROW(RuleSet::from_entries({permit(1, 0, 0.0)}), InvariantError);
}

TEST(BaseServiceTime, SingleClassIsIdentity) {
  const auto rs = five_three();
  EXPECT_NEAR(base_service_time(0, rs).value, avg_ids_service_time(rs), 1e-12);
}

TEST(BaseServiceTime, NoRulesIsFlaggedZero) {
  const auto t = base_service_time(9, five_three());
  EXPECT_TRUE(t.no_rules);
  EXPECT_EQ(t.value, 0.0);
}

TEST(BaseServiceTime, EvenSplitHalvesPermitCost) {
  const auto rs = RuleSet::from_entries({permit(1, 0, 1), permit(2, 0, 1), permit(3, 1, 1), permit(4, 1, 1)});
  const double total_permit = 4.0;
  EXPECT_NEAR(base_service_time(0, rs).value, total_permit / 2, 1e-12);
  EXPECT_NEAR(base_service_time(1, rs).value, total_permit / 2, 1e-12);
}

TEST(ServiceProfile, RatiosSumToOne) {
  std::mt19937_64 g(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto prof = make_service_profile(RuleSet::from_entries(random_entries(g, 5)));
    double sum = 0.0;
    for (const auto& [c, r] : prof.signature_ratio) sum += r;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(DpiTimeEstimate, PoissonUnchanged) { EXPECT_NEAR(dpi_time_estimate(10, 4, 0.5, 0), 10.0, 1e-12); }
TEST(DpiTimeEstimate, LowSpreadBranch) { EXPECT_NEAR(dpi_time_estimate(10, 4, 0.7, 0.3), 10.8, 1e-12); }
TEST(DpiTimeEstimate, MidSpreadBranch) { EXPECT_NEAR(dpi_time_estimate(10, 4, 0.7, 0.6), 10.16, 1e-12); }
TEST(DpiTimeEstimate, HighHurstCap) { EXPECT_NEAR(dpi_time_estimate(10, 4, 0.95, 0.2), 14.0, 1e-12); }
TEST(DpiTimeEstimate, WideSpreadCap) { EXPECT_NEAR(dpi_time_estimate(10, 4, 0.6, 1.5), 14.0, 1e-12); }

TEST(DpiTimeEstimate, DiscontinuityAtPointFour) {
  const double at = dpi_time_estimate(10, 4, 0.7, 0.4);
  const double above = dpi_time_estimate(10, 4, 0.7, 0.4 + 1e-9);
  EXPECT_NEAR(at, 10.8, 1e-12);
  EXPECT_NEAR(above, 10.0, 1e-8);
  EXPECT_GT(at - above, 0.79);
}

TEST(DpiTimeEstimate, NearHalfTakesPoissonBranch) {
  EXPECT_NEAR(dpi_time_estimate(10, 4, 0.5 + 5e-10, 2.0), 10.0, 1e-12);
  EXPECT_NEAR(dpi_time_estimate(10, 4, 0.3, 2.0), 10.0, 1e-12);
}

TEST(DpiTimeEstimate, NegativeInputsRejected) {
  EXPECT_THROW(dpi_time_estimate(-1, 4, 0.7, 0.3), ParameterError);
  EXPECT_THROW(dpi_time_estimate(10, -4, 0.7, 0.3), ParameterError);
  EXPECT_THROW(dpi_time_estimate(10, 4, 0.7, -0.3), ParameterError);
  EXPECT_THROW(dpi_time_estimate(10, 4, 0.0, 0.3), ParameterError);
}

TEST(DpiTimeEstimate, BoundedByFullScan) {
  std::mt19937_64 g(21);
  std::uniform_real_distribution<double> T(0.0, 50.0), H(1e-3, 1.2), dh(0.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = T(g), b = T(g);
    const double v = dpi_time_estimate(a, b, H(g), dh(g));
    EXPECT_GE(v, a);
    EXPECT_LE(v, a + b + 1e-12);
  }
}

TEST(DpiTimeEstimate, MonotoneWithinBranches) {
  std::mt19937_64 g(22);
  std::uniform_real_distribution<double> H(0.51, 0.88), lo(0.0, 0.39), mid(0.41, 0.98);
  for (int i = 0; i < 1000; ++i) {
    const double h = H(g), d2 = lo(g), d3 = mid(g);
    EXPECT_LT(dpi_time_estimate(10, 4, h, d2), dpi_time_estimate(10, 4, h + 0.01, d2));
    EXPECT_LT(dpi_time_estimate(10, 4, h, d3), dpi_time_estimate(10, 4, h + 0.01, d3));
    EXPECT_LT(dpi_time_estimate(10, 4, h, d3), dpi_time_estimate(10, 4, h, d3 + 0.01));
  }
}

TEST(MakeRuleSet, MassFollowsMix) {
  const auto rs = make_rule_set({{0, {2, 3, 1}}, {1, {4, 1, 2}}}, {{0, 0.25}, {1, 0.75}}, 0.1);
  EXPECT_NEAR(rs.total_block_prob(), 0.1, 1e-12);
  EXPECT_EQ(rs.prohibit_for(0).size(), 2u);
  EXPECT_NEAR(rs.full_scan_cost(1), 10.0, 1e-12);
  const auto cat = threat_catalog(rs);
  EXPECT_EQ(cat.at(1).size(), 4u);
}

TEST(RulesCsv, RoundTrip) {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rs = RuleSet::from_entries(random_entries(g, 3));
    std::stringstream ss;
    ss.precision(17);
    write_rules_csv(ss, rs);
    const auto back = read_rules_csv(ss);
    ASSERT_EQ(back.entries().size(), rs.entries().size());
    EXPECT_EQ(back.permit(), rs.permit());
    EXPECT_EQ(back.prohibit(), rs.prohibit());
    for (RuleId r : rs.prohibit()) EXPECT_NEAR(back.block_prob(r), rs.block_prob(r), 1e-12);
    EXPECT_NEAR(avg_ids_service_time(back), avg_ids_service_time(rs), 1e-9);
  }
}

TEST(RulesCsv, MalformedRejected) {
  std::stringstream ss("rule_id,kind,class_id,cost,block_prob\n1,maybe,0,1,\n");
  EXPECT_THROW(read_rules_csv(ss), ParameterError);
}
