#include <gtest/gtest.h>

#include <random>

#include "faasmeter/attribution.hpp"

using namespace faasmeter;
using namespace faasmeter::attribution;

TEST(SplitControlPlane, ProportionalToActivations) {
  auto s = split_control_plane(10.0, {{"a", 3}, {"b", 1}});
  EXPECT_DOUBLE_EQ(s.total.at("a"), 7.5);
  EXPECT_DOUBLE_EQ(s.total.at("b"), 2.5);
  EXPECT_DOUBLE_EQ(s.per_invocation.at("a"), 2.5);
  EXPECT_DOUBLE_EQ(s.per_invocation.at("b"), 2.5);
}

TEST(SplitControlPlane, SingleAndNullPlayer) {
  auto s = split_control_plane(10.0, {{"a", 4}, {"z", 0}});
  EXPECT_DOUBLE_EQ(s.total.at("a"), 10.0);
  EXPECT_EQ(s.total.at("z"), 0.0);
  EXPECT_EQ(s.per_invocation.at("z"), 0.0);
  auto none = split_control_plane(10.0, {{"z", 0}});
  EXPECT_DOUBLE_EQ(none.unattributed, 10.0);
}

TEST(SplitControlPlane, MonotoneInOwnActivations) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> n(0, 20);
  for (int trial = 0; trial < 500; ++trial) {
    Activations a{{"a", n(rng)}, {"b", n(rng)}, {"c", n(rng)}};
    const double before = split_control_plane(50.0, a).total.at("a");
    a["a"] += 1 + n(rng);
    EXPECT_GE(split_control_plane(50.0, a).total.at("a"), before);
  }
}

TEST(SplitIdle, EvenAmongActive) {
  auto s = split_idle(90.0, {{"a", 1}, {"b", 2}, {"c", 5}});
  for (auto id : {"a", "b", "c"}) EXPECT_DOUBLE_EQ(s.total.at(id), 30.0);
  auto one = split_idle(90.0, {{"a", 3}});
  EXPECT_DOUBLE_EQ(one.total.at("a"), 90.0);
  auto server = split_idle(95.0 * 60.0, {{"a", 6}, {"b", 3}});
  EXPECT_DOUBLE_EQ(server.per_invocation.at("a"), 475.0);
  EXPECT_DOUBLE_EQ(server.per_invocation.at("b"), 950.0);
  auto none = split_idle(90.0, {{"a", 0}});
  EXPECT_DOUBLE_EQ(none.unattributed, 90.0);
  EXPECT_EQ(none.total.at("a"), 0.0);
}

TEST(Spectrum, ComponentsSumExactly) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 40.0);
  std::uniform_int_distribution<int> n(0, 9);
  for (int trial = 0; trial < 300; ++trial) {
    std::map<std::string, double> x, tau;
    Activations a;
    for (int f = 0; f < 5; ++f) {
      const std::string id = "f" + std::to_string(f);
      x[id] = u(rng);
      tau[id] = u(rng) / 10.0;
      a[id] = n(rng);
    }
    auto s = build_spectrum(x, tau, u(rng), u(rng) * 60.0, a, {0, 60}, 5000.0);
    double attributed = 0.0;
    for (const auto& e : s.entries) {
      EXPECT_EQ(e.j_total, e.j_indiv + e.phi_cp + e.phi_idle);
      EXPECT_GE(e.phi_cp, 0.0);
      EXPECT_GE(e.phi_idle, 0.0);
      if (e.activations == 0.0) {
        // null player
        EXPECT_EQ(e.j_indiv, 0.0);
        EXPECT_EQ(e.phi_cp, 0.0);
        EXPECT_EQ(e.phi_idle, 0.0);
        EXPECT_EQ(e.j_total, 0.0);
      }
      attributed += e.j_total * e.activations;
    }
    // efficiency bookkeeping
    EXPECT_EQ(s.measured_energy - s.attributed_energy - s.residual, 0.0);
    EXPECT_NEAR(attributed, s.attributed_energy, 1e-9 * std::max(1.0, attributed));
  }
}

TEST(Spectrum, LinearityOfSharedShares) {
  Activations a{{"a", 3}, {"b", 1}, {"c", 0}};
  const double j_cp = 12.0, j_idle = 300.0;
  // game 1: only cp; game 2: only idle; combined game shares add
  auto g1 = build_spectrum({}, {}, j_cp, 0.0, a, {0, 60}, 0.0);
  auto g2 = build_spectrum({}, {}, 0.0, j_idle, a, {0, 60}, 0.0);
  auto both = build_spectrum({}, {}, j_cp, j_idle, a, {0, 60}, 0.0);
  for (const auto& e : both.entries) {
    EXPECT_EQ(e.phi_cp + e.phi_idle, g1.find(e.function_id)->j_total + g2.find(e.function_id)->j_total);
  }
}

TEST(Spectrum, IndividualFromWattsTimesLatency) {
  auto s = build_spectrum({{"a", 30.0}}, {{"a", 2.0}}, 0.0, 0.0, {{"a", 1}}, {0, 60}, 60.0);
  EXPECT_DOUBLE_EQ(s.find("a")->j_indiv, 60.0);
  EXPECT_DOUBLE_EQ(s.residual, 0.0);
}

TEST(Spectrum, WindowHelperUsesControlPlaneColumn) {
  disagg::ContributionMatrix m;
  m.delta = 1.0;
  m.window = {0.0, 2.0};
  m.columns = {{"a", disagg::ColumnKind::Function}, {disagg::kControlPlaneColumn, disagg::ColumnKind::ControlPlane}};
  m.C.resize(2, 2);
  m.C << 1.0, 0.2, 0.5, 0.3;
  m.A.resize(2, 2);
  m.A << 1, 0, 1, 0;
  auto s = spectrum_for_window(m, {{"a", 10.0}}, {{"a", {1.0, 0.5}}}, 20.0, 5.0, 100.0);
  const auto* e = s.find("a");
  ASSERT_NE(e, nullptr);
  EXPECT_DOUBLE_EQ(e->phi_cp, 20.0 * 0.5 / 2.0);
  EXPECT_DOUBLE_EQ(e->phi_idle, 10.0 / 2.0);
  EXPECT_DOUBLE_EQ(e->j_indiv, 10.0 * 0.75);
}
