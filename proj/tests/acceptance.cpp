// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "faasmeter/faasmeter.hpp"
#include "faasmeter/cli.hpp"

using namespace faasmeter;
namespace fs = std::filesystem;

namespace {

// Tolerances, all in one place.
constexpr double kOracleRel = 1e-6;           // 1
constexpr double kOracleSeconds = 1.0;        // 1
constexpr double kCosineMin = 0.98;           // 2
constexpr double kCosineSeconds = 30.0;       // 2
constexpr double kMarginalNoisyRel = 0.05;    // 3
constexpr double kMarginalExactRel = 1e-9;    // 3
constexpr double kTotalErrorBound = 0.10;     // 4
constexpr double kTotalErrorWindows = 0.50;   // 4
constexpr int kFreezeSteps = 1000;            // 5
constexpr double kSymmetrySe = 2.0;           // 6
constexpr double kSkewSamples = 1.0;          // 7, in sample periods
constexpr double kOvershootMax = 0.03;        // 8
constexpr double kCovMax = 0.3;               // 9
constexpr double kCovScenarioShare = 0.60;    // 9
constexpr double kLnvMax = 40.0;              // 9
constexpr double kLnvFunctionShare = 0.90;    // 9
constexpr int kSweepScenarios = 20;           // 9

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", n, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char b[128];
  std::snprintf(b, sizeof b, f, a);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Scenario scenario(const std::string& name) { return load_scenario(fs::path(FAASMETER_SCENARIO_DIR) / (name + ".json")); }

sim::FunctionSpec fn(std::string id, double iat, double latency, double cov = 0.3) {
  sim::FunctionSpec f;
  f.id = std::move(id);
  f.mean_latency_s = latency;
  f.latency_cov = cov;
  f.iat.mean_s = iat;
  return f;
}

ProfileConfig config(const Scenario& sc, kalman::SolveMode mode, bool online) {
  auto cfg = sc.profile;
  cfg.mode = mode;
  cfg.online = online;
  if (!cfg.idle_watts) cfg.idle_watts = pipeline::calibrate_idle(sc.truth, sc.synthesis, sc.workload.seed);
  return cfg;
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t = std::chrono::steady_clock::now();
  sim::WorkloadSpec spec{{fn("a", 2.0, 1.0), fn("b", 3.0, 2.2), fn("c", 1.5, 0.6)}, 600.0, 101};
  sim::GroundTruth truth;
  truth.per_function_watts = {{"a", 20.0}, {"b", 8.0}, {"c", 33.0}};
  auto run = sim::simulate(spec, truth, {});
  disagg::ContributionOptions opt;
  opt.window = {0.0, run.horizon_s};
  auto m = disagg::build_contributions(run.invocations, nullptr, opt);
  auto sol = disagg::solve_full(m, disagg::interval_power(run.system_power, 1.0, opt.window));
  double worst = 0.0;
  for (const auto& [id, w] : truth.per_function_watts) worst = std::max(worst, std::abs(*sol.watts(id) - w) / w);
  const double secs = seconds_since(t);
  report(1, worst <= kOracleRel && secs < kOracleSeconds,
         fmt("max rel err %.3g", worst) + fmt(", %.3f s", secs));
}

void criterion2() {
  const auto sc = scenario("four_fn");
  auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
  const auto truth = sim::true_footprints(run, sim::FootprintPolicy::IndividualPlusControlPlane);
  bool ok = true;
  std::string detail;
  for (auto mode : {kalman::SolveMode::NoIdle, kalman::SolveMode::Combined}) {
    const auto t = std::chrono::steady_clock::now();
    auto res = pipeline::profile(pipeline::from_run(run), config(sc, mode, false));
    const double c = validation::cosine_similarity(res.footprints, truth);
    const double secs = seconds_since(t);
    ok = ok && c >= kCosineMin && secs < kCosineSeconds;
    detail += std::string(kalman::to_string(mode)) + fmt(" cos %.4f", c) + fmt(" (%.2f s) ", secs);
  }
  report(2, ok, detail);
}

void criterion3() {
  auto sc = scenario("four_fn");
  double noisy = 0.0, exact = 0.0;
  {
    auto full = sim::simulate(sc.workload, sc.truth, sc.synthesis);
    auto marg = validation::marginal_footprints(sc.workload, sc.truth, sc.synthesis, full);
    for (const auto& [id, j] : sim::true_footprints(full, sim::FootprintPolicy::IndividualPlusControlPlane))
      noisy = std::max(noisy, std::abs(marg.at(id).joules_per_invocation - j) / j);
  }
  {
    auto truth = sc.truth;
    truth.noise_std_watts = 0.0;
    truth.quantization_step_watts = 0.0;
    truth.injected_skew_s = 0.0;
    auto full = sim::simulate(sc.workload, truth, sc.synthesis);
    auto marg = validation::marginal_footprints(sc.workload, truth, sc.synthesis, full);
    for (const auto& [id, j] : sim::true_footprints(full, sim::FootprintPolicy::IndividualPlusControlPlane))
      exact = std::max(exact, std::abs(marg.at(id).joules_per_invocation - j) / j);
  }
  report(3, noisy <= kMarginalNoisyRel && exact <= kMarginalExactRel,
         fmt("noisy max rel %.4f", noisy) + fmt(", noiseless max rel %.3g", exact));
}

void criterion4() {
  bool ok = true;
  std::string detail;
  for (const char* name : {"bursty", "dynamic"}) {
    const auto sc = scenario(name);
    auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
    auto res = pipeline::profile(pipeline::from_run(run), config(sc, kalman::SolveMode::NoIdle, true));
    std::size_t below = 0, n = 0;
    for (const auto& w : res.windows) {
      if (std::abs(w.window.length() - sc.profile.kalman.step_s) > 1e-9) continue;  // 60 s windows only
      ++n;
      if (validation::total_error(w.measured, w.predicted) < kTotalErrorBound) ++below;
    }
    const double frac = n ? static_cast<double>(below) / static_cast<double>(n) : 0.0;
    ok = ok && n > 0 && frac >= kTotalErrorWindows;
    detail += std::string(name) + ": " + std::to_string(below) + "/" + std::to_string(n) + " windows < 10%  ";
  }
  report(4, ok, detail);
}

void criterion5() {
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<std::string> ids{"f0", "f1", "f2", "f3", "f4", "f5"};
  std::map<std::string, double> prior;
  for (const auto& id : ids) prior[id] = 40.0 * u(rng);
  auto state = kalman::init_from_prior(prior, {});
  std::size_t checks = 0, broken = 0;
  for (int step = 0; step < kFreezeSteps; ++step) {
    disagg::ContributionMatrix m;
    m.delta = 1.0;
    m.window = {0.0, 30.0};
    for (const auto& id : ids) m.columns.push_back({id, disagg::ColumnKind::Function});
    m.C = Eigen::MatrixXd::Zero(30, static_cast<Eigen::Index>(ids.size()));
    m.A = m.C;
    for (Eigen::Index j = 0; j < m.C.cols(); ++j) {
      const double r = u(rng);
      if (r < 0.3) continue;
      for (Eigen::Index i = 0; i < 30; ++i) m.C(i, j) = u(rng) < 0.4 ? u(rng) : 0.0;
      if (r > 0.6)
        for (Eigen::Index i = 0; i < 30; ++i) m.A(i, j) = u(rng) < 0.2 ? 1.0 : 0.0;
    }
    Eigen::VectorXd w(30);
    for (Eigen::Index i = 0; i < 30; ++i) w(i) = 80.0 * u(rng);
    kalman::StepInput in;
    in.matrix = &m;
    in.target = w;
    in.u = disagg::solve_full(m, w);
    auto next = kalman::kalman_step(state, in);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (m.A.col(static_cast<Eigen::Index>(j)).sum() > 0.0) continue;
      ++checks;
      const double a = state.functions.at(ids[j]).x_hat, b = next.functions.at(ids[j]).x_hat;
      if (std::memcmp(&a, &b, sizeof a) != 0) ++broken;
    }
    state = std::move(next);
  }
  report(5, broken == 0 && checks > 0, std::to_string(checks) + " frozen checks, " + std::to_string(broken) + " changed");
}

void criterion6() {
  // twins: identical specs under different ids
  auto twin = [](std::string id) { return fn(std::move(id), 2.5, 1.2, 0.25); };
  sim::WorkloadSpec spec{{twin("twin_a"), twin("twin_b"), fn("other", 3.0, 2.0), fn("late", 4.0, 1.0)}, 2400.0, 61};
  spec.functions[3].start_s = 600.0;
  spec.functions[3].end_s = 1400.0;  // learned, then silent: a null player afterwards
  sim::GroundTruth truth;
  truth.idle_watts = 15.0;
  truth.per_function_watts = {{"twin_a", 20.0}, {"twin_b", 20.0}, {"other", 12.0}, {"late", 25.0}};
  truth.control_plane_joules_per_invocation = 0.5;
  truth.noise_std_watts = 1.0;
  truth.quantization_step_watts = 1.0;
  auto run = sim::simulate(spec, truth, {});
  ProfileConfig cfg;
  cfg.mode = kalman::SolveMode::NoIdle;
  cfg.idle_watts = pipeline::calibrate_idle(truth, {}, spec.seed);
  cfg.principals.control_plane = true;
  cfg.online = true;
  auto res = pipeline::profile(pipeline::from_run(run), cfg);

  bool null_ok = true, linear_ok = true, efficient_ok = true;
  std::vector<double> ja, jb;
  std::size_t null_seen = 0;
  for (const auto& w : res.windows) {
    const auto& s = w.spectrum;
    for (const auto& e : s.entries) {
      if (e.activations == 0.0) {
        ++null_seen;
        null_ok = null_ok && e.j_indiv == 0.0 && e.phi_cp == 0.0 && e.phi_idle == 0.0 && e.j_total == 0.0;
      }
      linear_ok = linear_ok && e.j_total == e.j_indiv + e.phi_cp + e.phi_idle;
      if (e.activations > 0.0 && e.function_id == "twin_a") ja.push_back(e.j_total);
      if (e.activations > 0.0 && e.function_id == "twin_b") jb.push_back(e.j_total);
    }
    efficient_ok = efficient_ok && s.measured_energy - s.attributed_energy - s.residual == 0.0;
  }
  auto se = [](const std::vector<double>& v) { return validation::stddev(v) / std::sqrt(static_cast<double>(v.size())); };
  const double gap = std::abs(validation::mean(ja) - validation::mean(jb));
  const double pooled = std::sqrt(se(ja) * se(ja) + se(jb) * se(jb));
  const bool sym_ok = ja.size() > 2 && jb.size() > 2 && gap <= kSymmetrySe * pooled;
  report(6, null_ok && linear_ok && efficient_ok && sym_ok && null_seen > 0,
         std::string("null ") + (null_ok ? "ok" : "bad") + " (" + std::to_string(null_seen) + " entries), linearity " +
             (linear_ok ? "ok" : "bad") + ", efficiency " + (efficient_ok ? "ok" : "bad") +
             fmt(", twins |dJ| %.3f J", gap) + fmt(" vs 2*SE %.3f J", kSymmetrySe * pooled));
}

void criterion7() {
  auto sc = scenario("skew");
  bool ok = true;
  std::string detail;
  for (double s : {-3.0, -1.0, 0.5, 2.0, 4.0}) {
    auto truth = sc.truth;
    truth.injected_skew_s = s;
    auto run = sim::simulate(sc.workload, truth, sc.synthesis);
    const double p = sc.synthesis.period_s;
    auto est = signal::estimate_skew(run.system_power, *run.cpu_power, {sc.profile.skew_bound_s, 0.01});
    ok = ok && std::abs(est.offset_s - s) <= kSkewSamples * p;
    detail += fmt("%+.1f->", s) + fmt("%+.2f ", est.offset_s);
  }
  auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
  auto est = signal::estimate_skew(run.system_power, *run.cpu_power, {sc.profile.skew_bound_s, 0.01});
  const double before = signal::variance(signal::aligned_difference(run.system_power, *run.cpu_power));
  const double after =
      signal::variance(signal::aligned_difference(signal::apply_skew(run.system_power, est.offset_s), *run.cpu_power));
  ok = ok && after < before;
  report(7, ok, detail + fmt("| var(sys-cpu) %.2f", before) + fmt(" -> %.2f", after));
}

void criterion8() {
  const auto sc = scenario("server");
  const double idle = pipeline::calibrate_idle(sc.truth, sc.synthesis, sc.workload.seed);
  const auto arrivals = sim::generate_workload(sc.workload);
  capping::CapRunOptions opt;
  opt.period_s = sc.synthesis.period_s;
  opt.cp_window_s = std::min(sc.synthesis.cp_window_s, opt.period_s);
  opt.initial_watts = idle;
  opt.seed = sc.workload.seed;
  const capping::CapPolicy policy{sc.cap.cap_watts, sc.cap.horizon_s, CapMode::FootprintAware, 0.0};

  const auto learned = capping::by_function(cli::profiled_footprints(sc, policy.horizon_s, idle));
  auto noisy = capping::run_capped(arrivals, sc.truth, policy, learned, opt);

  auto quiet = sc.truth;
  quiet.noise_std_watts = 0.0;
  quiet.quantization_step_watts = 0.0;
  auto clean = capping::run_capped(arrivals, quiet, policy, capping::exact_footprints(quiet, policy.horizon_s), opt);

  std::vector<double> caps{260.0, 230.0, 210.0, 200.0, 190.0, 180.0};
  std::vector<double> lat;
  bool starved = noisy.starved || clean.starved;
  for (double c : caps) {
    auto p = policy;
    p.cap_watts = c;
    auto r = capping::run_capped(arrivals, sc.truth, p, learned, opt);
    starved = starved || r.starved;
    lat.push_back(r.mean_latency);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < lat.size(); ++i) monotone = monotone && lat[i] >= lat[i - 1];
  std::string sweep;
  for (std::size_t i = 0; i < caps.size(); ++i) sweep += fmt("%.0fW:", caps[i]) + fmt("%.2fs ", lat[i]);
  report(8, noisy.overshoot_fraction <= kOvershootMax && clean.overshoot_fraction == 0.0 && monotone && !starved,
         fmt("overshoot noisy %.4f", noisy.overshoot_fraction) + fmt(", noiseless %.4f", clean.overshoot_fraction) +
             ", latency sweep " + sweep);
}

void criterion9() {
  // function pool: benchmark latencies with representative watts
  struct Pool {
    const char* id;
    double latency;
    double watts;
  };
  const std::vector<Pool> pool{{"dd", 0.7, 6.0},    {"image", 1.5, 18.0}, {"video", 7.8, 12.0}, {"AES", 1.4, 24.0},
                               {"json", 0.25, 10.0}, {"CNN", 1.3, 20.0},   {"ml_train", 5.1, 30.0}};
  std::mt19937_64 rng(909);
  std::size_t stable = 0;
  std::string medians;
  for (int k = 0; k < kSweepScenarios; ++k) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = 3 + static_cast<std::size_t>(k % 3);
    Scenario sc;
    sc.id = "sweep" + std::to_string(k);
    sc.workload.seed = 1000 + static_cast<std::uint64_t>(k);
    sc.workload.duration_s = 1200.0;
    sc.truth.idle_watts = 15.0;
    sc.truth.control_plane_joules_per_invocation = 0.5;
    sc.truth.noise_std_watts = 1.0;
    sc.truth.quantization_step_watts = 1.0;
    std::uniform_real_distribution<double> load(0.4, 0.9), cov(0.1, 0.35);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = pool[idx[i]];
      auto f = fn(p.id, p.latency / load(rng), p.latency, cov(rng));
      sc.workload.functions.push_back(f);
      sc.truth.per_function_watts[p.id] = p.watts;
    }
    sc.profile.principals.control_plane = true;
    auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
    auto res = pipeline::profile(pipeline::from_run(run), config(sc, kalman::SolveMode::NoIdle, true));
    auto stab = validation::stability_series(res, run.invocations);
    std::vector<double> covs;
    for (const auto& [id, v] : stab.window_footprints)
      if (v.size() >= 2) covs.push_back(validation::coefficient_of_variation(v));
    std::sort(covs.begin(), covs.end());
    const double med = covs.empty() ? INFINITY : covs[covs.size() / 2] * (covs.size() % 2 ? 1.0 : 0.5) +
                                                     (covs.size() % 2 ? 0.0 : 0.5 * covs[covs.size() / 2 - 1]);
    if (med <= kCovMax) ++stable;
    medians += fmt("%.2f ", med);
  }
  const double share = static_cast<double>(stable) / kSweepScenarios;

  std::size_t lnv_ok = 0, lnv_n = 0;
  for (const char* name : {"four_fn", "server", "jetson"}) {
    const auto sc = scenario(name);
    auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
    auto res = pipeline::profile(pipeline::from_run(run), config(sc, kalman::SolveMode::NoIdle, true));
    auto stab = validation::stability_series(res, run.invocations);
    for (const auto& [id, j] : stab.invocation_joules) {
      if (j.size() < 2) continue;
      ++lnv_n;
      if (validation::latency_normalized_variance(j, stab.invocation_latency.at(id)) <= kLnvMax) ++lnv_ok;
    }
  }
  const double lnv_share = lnv_n ? static_cast<double>(lnv_ok) / static_cast<double>(lnv_n) : 0.0;
  report(9, share >= kCovScenarioShare && lnv_share >= kLnvFunctionShare,
         std::to_string(stable) + "/" + std::to_string(kSweepScenarios) + " scenarios median CoV <= 0.3 [" + medians +
             "], LNV <= 40 for " + std::to_string(lnv_ok) + "/" + std::to_string(lnv_n) + " functions");
}

void criterion10() {
  const fs::path root = fs::temp_directory_path() / "faasmeter_acceptance_determinism";
  fs::remove_all(root);
  const std::string sc = (fs::path(FAASMETER_SCENARIO_DIR) / "four_fn.json").string();
  auto commands = [&](const fs::path& d) {
    const std::string o = d.string();
    std::vector<std::vector<std::string>> cmds{
        {"simulate", "--scenario", sc, "--out", o + "/sim"},
        {"profile", "--traces", o + "/sim", "--out", o + "/profile", "--mode", "combined", "--principals", "cp"},
        {"profile", "--traces", o + "/sim", "--out", o + "/online", "--mode", "no-idle", "--online"},
        {"report", "--in", o + "/profile", "--out", o + "/report", "--spectrum"},
        {"validate", "--scenario", sc, "--modes", "no-idle,combined", "--out", o + "/validate"},
        {"cap", "--scenario", sc, "--cap-watts", "90", "--out", o + "/cap"}};
    int rc = 0;
    std::ostringstream sink;
    for (const auto& c : cmds) rc |= cli::run(c, sink, sink);
    return rc;
  };
  const int rc1 = commands(root / "a");
  const int rc2 = commands(root / "b");
  std::size_t compared = 0, differ = 0;
  for (const char* sub : {"sim", "profile", "online", "report", "validate", "cap"}) {
    const auto a = manifest::read_file(root / "a" / sub / "manifest.json");
    const auto b = manifest::read_file(root / "b" / sub / "manifest.json");
    ++compared;
    if (a != b) ++differ;
    // manifests must also describe the files actually on disk
    for (const auto& [f, h] : manifest::read(root / "b" / sub))
      if (manifest::sha256_file(root / "b" / sub / f) != h) ++differ;
  }
  fs::remove_all(root);
  report(10, rc1 == 0 && rc2 == 0 && differ == 0,
         std::to_string(compared) + " command manifests compared, " + std::to_string(differ) + " mismatches");
}

}  // namespace

int main() {
  const std::vector<void (*)()> all{criterion1, criterion2, criterion3, criterion4, criterion5,
                                    criterion6, criterion7, criterion8, criterion9, criterion10};
  for (std::size_t i = 0; i < all.size(); ++i) {
    try {
      all[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), false, std::string("exception: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, all.size());
  return failures == 0 ? 0 : 1;
}
