#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "fogsim/matching.hpp"

using namespace fogsim;

namespace {

const std::array<double, 3> kTiers = {1e-4, 1e-3, 1e-2};

VmCatalog small_ladder() { return VmCatalog::ladder({1e8, 100, 1e5, 0.0}, 2.0, 6, kTiers); }

std::vector<Workload> random_members(std::size_t n, std::uint64_t seed) {
  FeatureRanges r = {{{2e8, 2e9}, {200, 2000}, {0.5, 2.0}, {2e5, 2e6}, {1e-3, 0.1}}};
  return generate_workloads(n, r, seed);
}

}  // namespace

TEST(DemandPoint, SingleMemberIsItself) {
  const Workload w{100, 10, 2, 5, 0.1};
  EXPECT_EQ(cluster_demand_point(std::vector<Workload>{w}), w);
}

TEST(DemandPoint, MaxDemandMinTolerance) {
  const std::vector<Workload> m = {{100, 10, 2, 5, 0.1}, {200, 10, 1, 5, 0.1}};
  const auto c = cluster_demand_point(m);
  EXPECT_EQ(c.cpu, 200);
  EXPECT_EQ(c.e2e, 1);
  EXPECT_EQ(c.io, 10);
}

TEST(DemandPoint, CornerDominatesEveryMember) {
  const auto members = random_members(20, 77);
  const auto c = cluster_demand_point(members);
  bool cpu_hit = false, e2e_hit = false;
  for (const auto& w : members) {
    EXPECT_GE(c.cpu, w.cpu);
    EXPECT_GE(c.io, w.io);
    EXPECT_GE(c.size, w.size);
    EXPECT_LE(c.e2e, w.e2e);
    EXPECT_LE(c.per, w.per);
    cpu_hit = cpu_hit || c.cpu == w.cpu;
    e2e_hit = e2e_hit || c.e2e == w.e2e;
  }
  EXPECT_TRUE(cpu_hit);
  EXPECT_TRUE(e2e_hit);
}

TEST(DemandPoint, EmptyClusterThrows) {
  EXPECT_THROW(cluster_demand_point(std::vector<Workload>{}), std::invalid_argument);
}

TEST(AlphaTilde, DirectArithmetic) {
  const Workload d{100, 50, 1, 10, 0.1};
  const VmOffer o{200, 100, 20, 0.01};
  EXPECT_DOUBLE_EQ(alpha_tilde(d, o), 1.5);
  const VmOffer fast{400, 200, 40, 0.01};
  EXPECT_DOUBLE_EQ(alpha_tilde(d, fast), 0.75);
}

TEST(AlphaTilde, LambdaIsAlphaOverAlphaTilde) {
  const Workload d{100, 50, 1, 10, 0.1};
  const VmOffer o{200, 100, 20, 0.01};
  const auto m = match_demand(d, VmCatalog{{{o, 0}}}, 3.0);
  EXPECT_DOUBLE_EQ(m.alpha_tilde, 1.5);
  EXPECT_DOUBLE_EQ(m.lambda_headroom, 2.0);
}

TEST(MatchOffers, BoundaryFeasibleAtAlphaTildeOne) {
  const Workload d{100, 50, 1.5, 10, 0.1};
  const VmOffer o{200, 100, 20, 0.01};
  ASSERT_DOUBLE_EQ(alpha_tilde(d, o), 1.0);
  const std::vector<std::vector<Workload>> members = {{d}};
  const auto plan = match_offers(members, VmCatalog{{{o, 0}}}, 1.0);
  const auto& m = plan.clusters[0];
  EXPECT_TRUE(m.feasible);
  EXPECT_FALSE(m.at_risk);
  EXPECT_DOUBLE_EQ(m.service_time, d.e2e);
  EXPECT_DOUBLE_EQ(m.lambda_headroom, 1.0);
}

TEST(MatchOffers, PerViolatingCatalogMakesAllInfeasible) {
  const VmOffer noisy{1e12, 1e9, 1e12, 0.5};
  std::vector<std::vector<Workload>> members = {random_members(5, 1), random_members(5, 2)};
  const auto plan = match_offers(members, VmCatalog{{{noisy, 0}}}, 1.5);
  for (const auto& c : plan.clusters) {
    EXPECT_TRUE(c.per_infeasible);
    EXPECT_FALSE(c.feasible);
  }
}

TEST(MatchOffers, PicksTightestFeasibleFit) {
  const auto cat = small_ladder();
  const Workload d{1e9, 1000, 1.0, 1e6, 1e-3};
  const auto m = match_demand(d, cat, 1.0);
  ASSERT_TRUE(m.feasible);
  EXPECT_LE(m.alpha_tilde, 1.0);
  EXPECT_LE(m.link_per, d.per);
  for (const auto& e : cat.entries) {
    const double a = alpha_tilde(d, e.offer);
    if (e.offer.per <= d.per && a <= 1.0) {
      EXPECT_LE(a, m.alpha_tilde);
    }
  }
  EXPECT_EQ(m.link_per, 1e-3);
}

TEST(MatchOffers, OversizedDemandTakesFastestAtRisk) {
  const auto cat = small_ladder();
  const Workload huge{1e12, 1e6, 0.1, 1e9, 1e-2};
  const auto m = match_demand(huge, cat, 1.0);
  EXPECT_TRUE(m.at_risk);
  EXPECT_FALSE(m.feasible);
  double fastest = std::numeric_limits<double>::infinity();
  for (const auto& e : cat.entries) {
    if (e.offer.per <= huge.per) fastest = std::min(fastest, alpha_tilde(huge, e.offer));
  }
  EXPECT_EQ(m.alpha_tilde, fastest);
}

TEST(MatchOffers, FeasibilityIffDeadlineAndPer) {
  const auto cat = small_ladder();
  for (const auto& w : random_members(50, 5)) {
    const auto m = match_demand(w, cat, 1.0);
    if (m.per_infeasible) continue;
    EXPECT_EQ(m.feasible, m.service_time <= w.e2e && m.link_per <= w.per);
    EXPECT_DOUBLE_EQ(m.lambda_headroom, m.alpha / m.alpha_tilde);
  }
}

TEST(MatchOffers, LargerCatalogNeverLosesFeasibility) {
  const auto big = small_ladder();
  VmCatalog sub;
  for (std::size_t k = 0; k < big.entries.size(); k += 2) sub.entries.push_back(big.entries[k]);
  for (const auto& w : random_members(60, 6)) {
    const auto a = match_demand(w, sub, 1.0);
    const auto b = match_demand(w, big, 1.0);
    if (a.feasible) {
      EXPECT_TRUE(b.feasible);
    }
    if (!a.per_infeasible) {
      EXPECT_FALSE(b.per_infeasible);
    }
  }
}

TEST(MatchOffers, CornerServiceCoversEveryMember) {
  const auto cat = VmCatalog::ladder({1e8, 100, 1e5, 0.0}, 2.0, 10, kTiers);
  const auto members = random_members(15, 8);
  const auto m = match_demand(cluster_demand_point(members), cat, 1.0);
  ASSERT_TRUE(m.feasible);
  for (const auto& w : members) {
    EXPECT_LE(service_time(w, m.offer, 1.0), w.e2e);
    EXPECT_LE(m.offer.per, w.per);
  }
}

TEST(MatchOffers, ValidatesInputs) {
  std::vector<std::vector<Workload>> members = {random_members(3, 1)};
  EXPECT_THROW(match_offers(members, VmCatalog{}, 1.5), ConfigError);
  EXPECT_THROW(match_offers(members, small_ladder(), 0.5), ConfigError);
  EXPECT_THROW(match_offers(members, small_ladder(), 3.5), ConfigError);
}

TEST(MatchOffers, EmptyClusterLeftUnpopulated) {
  std::vector<std::vector<Workload>> members = {random_members(3, 1), {}};
  const auto plan = match_offers(members, small_ladder(), 1.5);
  EXPECT_TRUE(plan.clusters[0].populated);
  EXPECT_FALSE(plan.clusters[1].populated);
  const nlohmann::json j = plan;
  EXPECT_EQ(j["clusters"].size(), 2u);
  EXPECT_FALSE(j["clusters"][1]["populated"].get<bool>());
}

TEST(EbN0, KnotsMapExactly) {
  const auto t = EbN0Table::default_table();
  for (const auto& k : t.knots()) EXPECT_EQ(t.ebn0_db(k.per), k.ebn0_db);
  EXPECT_EQ(t.ebn0_db(t.max_per()), 4.0);
  EXPECT_EQ(per_to_ebn0(t.min_per(), t), 14.0);
}

TEST(EbN0, LogLinearMidpoint) {
  const auto t = EbN0Table::default_table();
  const double per = std::pow(10.0, -2.5);
  EXPECT_NEAR(t.ebn0_db(per), 8.65, 1e-12);
  EXPECT_NEAR(t.ebn0_linear(per), std::pow(10.0, 0.865), 1e-12);
}

TEST(EbN0, MonotoneDecreasing) {
  const auto t = EbN0Table::default_table();
  double prev = std::numeric_limits<double>::infinity();
  for (double lp = -6.0; lp <= std::log10(0.3); lp += 0.01) {
    const double v = t.ebn0_db(std::pow(10.0, lp));
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(EbN0, OutsideDomainThrows) {
  const auto t = EbN0Table::default_table();
  EXPECT_THROW(t.ebn0_db(1e-7), DomainError);
  EXPECT_THROW(t.ebn0_db(0.5), DomainError);
}

TEST(EbN0, RejectsNonMonotoneTables) {
  EXPECT_THROW(EbN0Table({{1e-3, 5.0}, {1e-2, 6.0}}), ConfigError);
  EXPECT_THROW(EbN0Table({{1e-3, 5.0}}), ConfigError);
  EXPECT_THROW(EbN0Table({{1e-3, 5.0}, {1e-3, 4.0}}), ConfigError);
}

TEST(EbN0, ShippedCsvMatchesDefault) {
  std::ifstream in(std::string(FOGSIM_SOURCE_DIR) + "/config/ebn0.csv");
  ASSERT_TRUE(in);
  const auto t = EbN0Table::from_csv(in);
  const auto d = EbN0Table::default_table();
  ASSERT_EQ(t.knots().size(), d.knots().size());
  for (std::size_t k = 0; k < t.knots().size(); ++k) {
    EXPECT_EQ(t.knots()[k].per, d.knots()[k].per);
    EXPECT_EQ(t.knots()[k].ebn0_db, d.knots()[k].ebn0_db);
  }
}

TEST(Catalog, LadderAndMedian) {
  const auto c = small_ladder();
  EXPECT_EQ(c.entries.size(), 18u);
  const auto med = c.median_offer();
  EXPECT_EQ(med.per, 1e-4);
  std::size_t below = 0, above = 0;
  for (const auto& e : c.entries) {
    if (e.offer.cpu_rate < med.cpu_rate) ++below;
    if (e.offer.cpu_rate > med.cpu_rate) ++above;
  }
  EXPECT_LE(below, c.entries.size() / 2);
  EXPECT_LE(above, c.entries.size() / 2 + 3);
}

TEST(Catalog, ShippedCsvLoads) {
  std::ifstream in(std::string(FOGSIM_SOURCE_DIR) + "/config/catalog.csv");
  ASSERT_TRUE(in);
  const auto c = VmCatalog::from_csv(in);
  EXPECT_FALSE(c.entries.empty());
  for (const auto& e : c.entries) EXPECT_TRUE(e.offer.valid());
}

TEST(Catalog, InvalidRowsRejected) {
  std::stringstream ss("cpu_rate,io_rate,cap,per,count\n1e9,100,1e6,1.5,0\n");
  EXPECT_THROW(VmCatalog::from_csv(ss), ConfigError);
  std::stringstream empty("cpu_rate,io_rate,cap,per,count\n");
  EXPECT_THROW(VmCatalog::from_csv(empty), ConfigError);
}

TEST(Dispatch, CumulativeAdmissionSpillsToFreshInstance) {
  const Workload w{100, 50, 1, 10, 0.1};
  const VmOffer o{200 / 0.6 * 1.5, 100 / 0.6 * 1.5, 20 / 0.6 * 1.5, 0.01};
  ASSERT_NEAR(alpha_tilde(w, o), 0.6, 1e-12);
  MatchPlan plan;
  plan.lambda_target = 1.5;
  plan.clusters.push_back(match_demand(w, VmCatalog{{{o, 0}}}, 1.0));
  const std::vector<Workload> batch(5, w);
  const std::vector<int> labels(5, 0);
  const std::vector<double> arrivals = {0.5, 0.1, 0.2, 0.3, 0.4};
  const auto d = dispatch_workloads(plan, labels, batch, arrivals);
  ASSERT_EQ(d.instances.size(), 3u);
  EXPECT_EQ(d.instance_of[1], 0);
  EXPECT_EQ(d.instance_of[2], 0);
  EXPECT_EQ(d.instance_of[3], 1);
  EXPECT_EQ(d.instance_of[4], 1);
  EXPECT_EQ(d.instance_of[0], 2);
  for (const auto& inst : d.instances) EXPECT_LE(inst.admitted_load, plan.lambda_target + 1e-12);
}

TEST(Dispatch, HigherLambdaPacksMorePerInstance) {
  const auto members = random_members(100, 12);
  std::vector<std::vector<Workload>> groups = {members};
  const std::vector<int> labels(members.size(), 0);
  std::vector<double> arrivals(members.size());
  for (std::size_t m = 0; m < arrivals.size(); ++m) arrivals[m] = 0.01 * static_cast<double>(m);
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (double lambda : {1.0, 1.5, 2.0, 3.0}) {
    const auto plan = match_offers(groups, small_ladder(), lambda);
    const auto d = dispatch_workloads(plan, labels, members, arrivals);
    EXPECT_LE(d.instances.size(), prev);
    prev = d.instances.size();
  }
}

TEST(Dispatch, PerInfeasibleClusterAdmitsNothing) {
  const VmOffer noisy{1e12, 1e9, 1e12, 0.5};
  const auto members = random_members(4, 3);
  std::vector<std::vector<Workload>> groups = {members};
  const auto plan = match_offers(groups, VmCatalog{{{noisy, 0}}}, 1.5);
  const auto d = dispatch_workloads(plan, std::vector<int>(4, 0), members, std::vector<double>{0, 1, 2, 3});
  EXPECT_TRUE(d.instances.empty());
  for (int v : d.instance_of) EXPECT_EQ(v, kUnassigned);
}

TEST(Dispatch, FixedRoundRobin) {
  const VmOffer o{1e9, 1000, 1e6, 1e-4};
  const std::vector<std::size_t> order = {3, 0, 1, 2, 4};
  const auto d = dispatch_fixed(o, 2, order, 5);
  ASSERT_EQ(d.instances.size(), 2u);
  EXPECT_EQ(d.instance_of[3], 0);
  EXPECT_EQ(d.instance_of[0], 1);
  EXPECT_EQ(d.instance_of[1], 0);
  EXPECT_EQ(d.instance_of[2], 1);
  EXPECT_EQ(d.instance_of[4], 0);
}
