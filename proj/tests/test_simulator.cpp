#include <gtest/gtest.h>

#include <cmath>

#include "faasmeter/simulator.hpp"

using namespace faasmeter;
using namespace faasmeter::sim;

namespace {

FunctionSpec constant_fn(std::string id, double iat, double latency) {
  FunctionSpec f;
  f.id = std::move(id);
  f.mean_latency_s = latency;
  f.latency_cov = 0.0;
  f.iat.kind = IatKind::Constant;
  f.iat.mean_s = iat;
  return f;
}

FunctionSpec poisson_fn(std::string id, double iat, double latency, double cov) {
  FunctionSpec f;
  f.id = std::move(id);
  f.mean_latency_s = latency;
  f.latency_cov = cov;
  f.iat.kind = IatKind::Exponential;
  f.iat.mean_s = iat;
  return f;
}

// Brute-force integral of the noiseless model at fine resolution.
double brute_energy(const SimulatedRun& run, double dt) {
  double total = 0.0;
  const auto& t = run.truth;
  for (double x = dt / 2; x < run.horizon_s; x += dt) {
    double w = t.idle_watts;
    for (const auto& r : run.invocations.samples) {
      if (x >= r.start && x < r.end) w += t.per_function_watts.at(r.function_id);
      const double lo = std::max(0.0, r.start - run.options.cp_window_s / 2);
      if (x >= lo && x < lo + run.options.cp_window_s) w += t.control_plane_joules_per_invocation / run.options.cp_window_s;
    }
    total += w * dt;
  }
  return total;
}

}  // namespace

TEST(Workload, ConstantIatSixArrivals) {
  WorkloadSpec spec{{constant_fn("f", 10.0, 1.0)}, 60.0, 1};
  auto inv = generate_workload(spec);
  ASSERT_EQ(inv.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(inv.samples[i].start, 10.0 * static_cast<double>(i));
}

TEST(Workload, DeterministicUnderSeed) {
  WorkloadSpec spec{{poisson_fn("json", 2.0, 0.25, 0.5), poisson_fn("video", 9.0, 7.8, 0.3)}, 600.0, 42};
  EXPECT_EQ(generate_workload(spec), generate_workload(spec));
  auto other = spec;
  other.seed = 43;
  EXPECT_NE(generate_workload(spec), generate_workload(other));
}

TEST(Workload, LatencyMeanMatchesSpec) {
  WorkloadSpec spec{{poisson_fn("video", 0.5, 7.8, 0.3)}, 20000.0, 5};
  auto inv = generate_workload(spec);
  double sum = 0.0;
  for (const auto& r : inv.samples) sum += r.latency();
  // CoV 0.3 over ~40k draws: standard error ~0.15%
  EXPECT_NEAR(sum / static_cast<double>(inv.size()), 7.8, 7.8 * 0.01);
}

TEST(Workload, AblationKeepsSurvivorSchedules) {
  WorkloadSpec spec{{poisson_fn("a", 3.0, 1.0, 0.5), poisson_fn("b", 5.0, 2.0, 0.5)}, 500.0, 9};
  auto full = generate_workload(spec);
  auto ablated = generate_workload(without_function(spec, "a"));
  InvocationTrace only_b;
  for (const auto& r : full.samples)
    if (r.function_id == "b") only_b.samples.push_back(r);
  ASSERT_EQ(only_b.size(), ablated.size());
  for (std::size_t i = 0; i < ablated.size(); ++i) EXPECT_EQ(only_b.samples[i], ablated.samples[i]);
}

TEST(Workload, InvalidSpecRejected) {
  WorkloadSpec spec{{constant_fn("f", 0.0, 1.0)}, 60.0, 1};
  EXPECT_THROW(generate_workload(spec), InvariantError);
  spec = {{constant_fn("f", 1.0, 1.0)}, 0.0, 1};
  EXPECT_THROW(generate_workload(spec), InvariantError);
}

TEST(Synthesis, IdleOnlyIsConstant) {
  GroundTruth truth;
  truth.idle_watts = 95.0;
  SynthesisOptions opt;
  opt.horizon_s = 60.0;
  auto run = synthesize_power({}, truth, opt, 1);
  ASSERT_EQ(run.system_power.size(), 60u);
  for (const auto& s : run.system_power.samples) EXPECT_EQ(s.watts, 95.0);
}

TEST(Synthesis, ContinuousFunctionAddsToIdle) {
  GroundTruth truth;
  truth.idle_watts = 15.0;
  truth.per_function_watts["f"] = 30.0;
  InvocationTrace inv;
  inv.samples.push_back({"f", 0.0, 100.0, true});
  SynthesisOptions opt;
  opt.horizon_s = 100.0;
  auto run = synthesize_power(inv, truth, opt, 1);
  for (const auto& s : run.system_power.samples) EXPECT_DOUBLE_EQ(s.watts, 45.0);
}

TEST(Synthesis, NoiselessEnergyMatchesBruteForce) {
  WorkloadSpec spec{{poisson_fn("a", 4.0, 1.3, 0.4), poisson_fn("b", 7.0, 2.2, 0.4)}, 120.0, 3};
  GroundTruth truth;
  truth.idle_watts = 20.0;
  truth.per_function_watts = {{"a", 12.0}, {"b", 31.0}};
  truth.control_plane_joules_per_invocation = 1.5;
  auto run = simulate(spec, truth, {});
  const double analytic = analytic_energy(run);
  EXPECT_NEAR(energy(run.system_power), analytic, 1e-9 * analytic);
  EXPECT_NEAR(brute_energy(run, 1e-3), analytic, 1e-3 * analytic);
}

TEST(Synthesis, NoisyEnergyWithinThreeSigma) {
  WorkloadSpec spec{{poisson_fn("a", 2.0, 1.0, 0.4)}, 3000.0, 8};
  GroundTruth truth;
  truth.idle_watts = 50.0;
  truth.per_function_watts = {{"a", 20.0}};
  truth.noise_std_watts = 1.0;
  auto run = simulate(spec, truth, {});
  const double n = static_cast<double>(run.system_power.size());
  EXPECT_LE(std::abs(energy(run.system_power) - analytic_energy(run)), 3.0 * 1.0 * std::sqrt(n) * 1.0);
}

TEST(Synthesis, SkewInvisibleToTotalEnergy) {
  WorkloadSpec spec{{poisson_fn("a", 3.0, 1.0, 0.4)}, 300.0, 4};
  GroundTruth truth;
  truth.idle_watts = 10.0;
  truth.per_function_watts = {{"a", 40.0}};
  auto plain = simulate(spec, truth, {});
  truth.injected_skew_s = 2.5;
  SynthesisOptions opt;
  opt.horizon_s = plain.horizon_s;
  auto skewed = simulate(spec, truth, opt);
  EXPECT_LE(std::abs(energy(skewed.system_power) - energy(plain.system_power)), 2.5 * 50.0);
}

TEST(Synthesis, QueueingKeepsEveryInvocationInOrder) {
  WorkloadSpec spec{{poisson_fn("a", 0.3, 1.0, 0.5), poisson_fn("b", 0.4, 2.0, 0.5)}, 200.0, 12};
  auto arrivals = generate_workload(spec);
  auto capped = apply_concurrency_cap(arrivals, 2);
  ASSERT_EQ(capped.size(), arrivals.size());
  // never more than two running at once
  std::vector<std::pair<double, int>> ev;
  for (const auto& r : capped.samples) {
    ev.push_back({r.start, +1});
    ev.push_back({r.end, -1});
  }
  std::sort(ev.begin(), ev.end());
  int running = 0;
  for (const auto& e : ev) {
    running += e.second;
    EXPECT_LE(running, 2);
  }
  // per-function order preserved
  for (const std::string id : {"a", "b"}) {
    std::vector<double> in, out;
    for (const auto& r : arrivals.samples)
      if (r.function_id == id) in.push_back(r.start);
    for (const auto& r : capped.samples)
      if (r.function_id == id) out.push_back(r.start);
    ASSERT_EQ(in.size(), out.size());
    EXPECT_TRUE(std::is_sorted(out.begin(), out.end()));
    for (std::size_t i = 0; i < in.size(); ++i) EXPECT_GE(out[i], in[i]);
  }
}

TEST(Synthesis, DeterministicRun) {
  WorkloadSpec spec{{poisson_fn("a", 2.0, 1.0, 0.4)}, 200.0, 8};
  GroundTruth truth;
  truth.idle_watts = 50.0;
  truth.per_function_watts = {{"a", 20.0}};
  truth.noise_std_watts = 1.0;
  truth.quantization_step_watts = 1.0;
  auto a = simulate(spec, truth, {});
  auto b = simulate(spec, truth, {});
  EXPECT_EQ(a.system_power, b.system_power);
  EXPECT_EQ(a.counters, b.counters);
  EXPECT_EQ(a.utilization, b.utilization);
}

TEST(Synthesis, CpuTraceIsFractionOfDynamic) {
  WorkloadSpec spec{{poisson_fn("a", 2.0, 1.0, 0.4)}, 100.0, 8};
  GroundTruth truth;
  truth.idle_watts = 50.0;
  truth.per_function_watts = {{"a", 20.0}};
  auto run = simulate(spec, truth, {});
  ASSERT_TRUE(run.cpu_power.has_value());
  for (std::size_t k = 0; k < run.system_power.size(); ++k) {
    EXPECT_NEAR(run.cpu_power->samples[k].watts, 0.8 * (run.system_power.samples[k].watts - 50.0), 1e-9);
  }
}

TEST(Footprints, ProductAndIdleSplit) {
  InvocationTrace inv;
  inv.samples = {{"f", 0.0, 2.0, true}, {"g", 5.0, 6.0, true}, {"f", 10.0, 12.0, true}};
  GroundTruth truth;
  truth.idle_watts = 95.0;
  truth.per_function_watts = {{"f", 30.0}, {"g", 1.0}};
  SynthesisOptions opt;
  opt.horizon_s = 60.0;
  auto run = synthesize_power(inv, truth, opt, 1);
  EXPECT_DOUBLE_EQ(true_footprint(run, "f"), 60.0);
  auto idle = true_idle_shares(run, 0.0, 60.0);
  EXPECT_DOUBLE_EQ(idle.at("f"), 2850.0);
  EXPECT_DOUBLE_EQ(idle.at("g"), 2850.0);
  EXPECT_THROW(true_footprint(run, "nope"), InvariantError);
}
