#include <gtest/gtest.h>

#include "faasmeter/scenario.hpp"

using namespace faasmeter;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({
    "id": "tiny", "seed": 3, "duration_s": 100,
    "functions": [{"id": "a", "mean_latency_s": 1.0, "watts": 10, "iat": {"kind": "exponential", "mean_s": 2}}],
    "truth": {"idle_watts": 15, "noise_std_watts": 1}
  })");
}

std::string error_of(const json& j) {
  try {
    parse_scenario(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Scenario, ParsesMinimal) {
  auto s = parse_scenario(minimal());
  EXPECT_EQ(s.id, "tiny");
  EXPECT_EQ(s.workload.seed, 3u);
  ASSERT_EQ(s.workload.functions.size(), 1u);
  EXPECT_EQ(s.truth.per_function_watts.at("a"), 10.0);
  EXPECT_EQ(s.truth.idle_watts, 15.0);
  EXPECT_EQ(s.profile.mode, kalman::SolveMode::Combined);
  EXPECT_FALSE(s.profile.idle_watts.has_value());
}

TEST(Scenario, UnknownKeyNamed) {
  auto j = minimal();
  j["truth"]["idle_wats"] = 1;
  EXPECT_NE(error_of(j).find("scenario.truth.idle_wats"), std::string::npos) << error_of(j);
  j = minimal();
  j["functions"][0]["iat"]["men_s"] = 1;
  EXPECT_NE(error_of(j).find("functions[0].iat.men_s"), std::string::npos) << error_of(j);
}

TEST(Scenario, MissingAndBadValues) {
  auto j = minimal();
  j["functions"][0].erase("watts");
  EXPECT_NE(error_of(j).find("watts: required"), std::string::npos);
  j = minimal();
  j["truth"]["noise_std_watts"] = -1;
  EXPECT_NE(error_of(j).find("noise_std_watts"), std::string::npos);
  j = minimal();
  j["profile"] = {{"mode", "bogus"}};
  EXPECT_FALSE(error_of(j).empty());
  j = minimal();
  j["functions"].push_back(j["functions"][0]);
  EXPECT_NE(error_of(j).find("duplicate"), std::string::npos);
}

TEST(Scenario, ProfileAndCap) {
  auto j = minimal();
  j["profile"] = json::parse(R"({"mode": "no-idle", "delta_s": 2, "principals": ["cp"], "online": true,
                                 "kalman": {"alpha": 0.7, "beta": 0.3}})");
  j["cap"] = json::parse(R"({"cap_watts": 80, "mode": "buffer", "buffer_watts": 10})");
  auto s = parse_scenario(j);
  EXPECT_EQ(s.profile.mode, kalman::SolveMode::NoIdle);
  EXPECT_EQ(s.profile.delta_s, 2.0);
  EXPECT_TRUE(s.profile.principals.control_plane);
  EXPECT_FALSE(s.profile.principals.os);
  EXPECT_TRUE(s.profile.online);
  EXPECT_EQ(s.profile.kalman.alpha, 0.7);
  EXPECT_EQ(s.cap.cap_watts, 80.0);
  EXPECT_EQ(s.cap.mode, CapMode::BufferOnly);
  EXPECT_EQ(s.cap.buffer_watts, 10.0);
}
