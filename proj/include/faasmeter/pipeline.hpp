#pragma once

// End-to-end profiling of one trace set: skew correction, disaggregation
// (batch or online), and per-window spectra.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "faasmeter/attribution.hpp"
#include "faasmeter/disagg.hpp"
#include "faasmeter/kalman.hpp"
#include "faasmeter/scenario.hpp"
#include "faasmeter/signal.hpp"
#include "faasmeter/simulator.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::pipeline {

struct TraceSet {
  InvocationTrace invocations;
  PowerTrace system_power;
  std::optional<PowerTrace> cpu_power;
  std::optional<UtilizationTrace> utilization;
  std::optional<CounterTrace> counters;
};

inline TraceSet from_run(const sim::SimulatedRun& run) {
  return {run.invocations, run.system_power, run.cpu_power, run.utilization, run.counters};
}

struct SkewReport {
  std::string reference = "none";  // cpu | instructions | none
  std::optional<signal::SkewEstimate> estimate;
  bool flat_signal = false;
  std::vector<signal::SkewEstimate> drift;
};

struct WindowResult {
  disagg::Window window;
  Eigen::VectorXd measured;
  Eigen::VectorXd predicted;
  double baseline_watts = 0.0;
  std::map<std::string, double> watts;  // footprint power used for this window
  std::map<std::string, double> column_joules;  // X_j * sum(C_j); with the baseline these sum to the prediction
  attribution::FootprintSpectrum spectrum;
};

struct ProfileResult {
  kalman::SolveMode mode = kalman::SolveMode::NoIdle;
  double baseline_watts = 0.0;
  SkewReport skew;
  disagg::Solution solution;                 // batch solve over the whole trace
  std::map<std::string, double> watts;       // per function
  std::optional<double> control_plane_watts;
  std::map<std::string, double> mean_latency;
  std::map<std::string, double> activations;
  std::map<std::string, double> footprints;  // J_indiv + phi_cp, joules per invocation
  std::vector<WindowResult> windows;
  std::optional<kalman::OnlineResult> online;
  std::optional<disagg::PowerModelCpu> cpu_model;
  PowerTrace corrected_power;
  disagg::Window span;
};

namespace detail {

inline double grid_period(const PowerTrace& t) { return signal::detail::grid_period(t); }

inline SkewReport correct_skew(const TraceSet& ts, const ProfileConfig& cfg, PowerTrace& corrected) {
  SkewReport rep;
  corrected = ts.system_power;
  if (!cfg.correct_skew || ts.system_power.size() < 2) return rep;

  PowerTrace reference;
  if (ts.cpu_power && !ts.cpu_power->empty()) {
    reference = *ts.cpu_power;
    rep.reference = "cpu";
  } else if (ts.counters && !ts.counters->empty()) {
    reference = signal::instruction_rate_reference(*ts.counters);
    rep.reference = "instructions";
  } else {
    return rep;
  }
  const double p = grid_period(ts.system_power);
  const double origin = ts.system_power.samples.front().timestamp;
  const double end = end_time(ts.system_power, p);
  auto sys = resample(ts.system_power, p, origin, end);
  auto ref = resample(reference, p, origin, end);
  try {
    auto est = signal::estimate_skew(sys, ref, {cfg.skew_bound_s, 0.01});
    rep.estimate = est;
    corrected = signal::apply_skew(ts.system_power, est.offset_s);
  } catch (const FlatSignalError&) {
    rep.flat_signal = true;
  } catch (const InvariantError&) {
    // too short or zero mean: leave uncorrected
  }
  if (end - origin >= 2.0 * cfg.drift_interval_s) {
    try {
      auto drift = signal::monitor_drift(sys, ref, cfg.drift_interval_s, {cfg.skew_bound_s, 0.01});
      rep.drift = drift.estimates;
      rep.flat_signal = rep.flat_signal || drift.flat_signal;
    } catch (const InvariantError&) {
    }
  }
  return rep;
}

inline void require_inputs(const TraceSet& ts, const ProfileConfig& cfg) {
  if (ts.system_power.empty()) throw InvariantError("missing input: system power trace is empty");
  if (cfg.mode == kalman::SolveMode::Combined) {
    if (!ts.cpu_power || ts.cpu_power->empty())
      throw InvariantError("missing input: combined mode requires a CPU power trace (cpu rows in power.csv)");
    if (!ts.counters || ts.counters->empty())
      throw InvariantError("missing input: combined mode requires a counter trace (counters.csv)");
  }
  if ((cfg.principals.control_plane || cfg.principals.os) && (!ts.utilization || ts.utilization->empty()))
    throw InvariantError("missing input: shared principals require a utilization trace (utilization.csv)");
  if (cfg.mode != kalman::SolveMode::Full && !cfg.idle_watts)
    throw ConfigError(std::string("mode ") + std::string(kalman::to_string(cfg.mode)) + " requires idle watts");
}

inline std::map<std::string, double> functions_only(const std::map<std::string, double>& w) {
  std::map<std::string, double> out;
  for (const auto& [id, x] : w)
    if (id != disagg::kControlPlaneColumn && id != disagg::kOsColumn) out[id] = x;
  return out;
}

}  // namespace detail

inline ProfileResult profile(const TraceSet& ts, const ProfileConfig& cfg) {
  detail::require_inputs(ts, cfg);
  ProfileResult res;
  res.mode = cfg.mode;
  res.baseline_watts = cfg.mode == kalman::SolveMode::Full ? 0.0 : *cfg.idle_watts;
  res.skew = detail::correct_skew(ts, cfg, res.corrected_power);

  const double delta = cfg.delta_s;
  const double t0 = ts.system_power.samples.front().timestamp;
  const double t1 = end_time(ts.system_power, detail::grid_period(ts.system_power));
  res.span = {t0, t1};
  const UtilizationTrace* util = ts.utilization ? &*ts.utilization : nullptr;

  kalman::OnlineInputs in;
  in.invocations = &ts.invocations;
  in.system_power = &res.corrected_power;
  in.cpu_power = ts.cpu_power ? &*ts.cpu_power : nullptr;
  in.utilization = util;
  in.counters = ts.counters ? &*ts.counters : nullptr;
  in.principals = cfg.principals;
  in.mode = cfg.mode;
  in.idle_watts = res.baseline_watts;
  in.t0 = t0;
  in.t1 = t1;

  // batch solve over the whole span
  if (cfg.mode == kalman::SolveMode::Combined) {
    res.cpu_model = disagg::train_cpu_model(*ts.counters, *ts.cpu_power);
  }
  auto whole = kalman::solve_window(in, res.span, delta, res.cpu_model ? &*res.cpu_model : nullptr);
  res.solution = whole.u;
  std::map<std::string, double> watts;
  for (std::size_t j = 0; j < whole.u.columns.size(); ++j) watts[whole.u.columns[j].id] = whole.u.x(static_cast<Eigen::Index>(j));

  if (cfg.online) {
    auto params = cfg.kalman;
    params.delta = delta;
    res.online = kalman::run_online(in, params);
    watts = res.online->final_state.all_watts();
  }

  res.watts = detail::functions_only(watts);
  if (auto it = watts.find(disagg::kControlPlaneColumn); it != watts.end()) res.control_plane_watts = it->second;

  // footprints over the whole span
  const auto& m = whole.matrix;
  double total_a = 0.0;
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    if (m.columns[j].kind != disagg::ColumnKind::Function) continue;
    const double a = m.A.col(static_cast<Eigen::Index>(j)).sum();
    res.activations[m.columns[j].id] = a;
    total_a += a;
  }
  res.mean_latency = disagg::mean_latency(disagg::window_latencies(ts.invocations, res.span));
  double phi_cp = 0.0;
  if (res.control_plane_watts && total_a > 0.0) {
    phi_cp = *res.control_plane_watts * m.C.col(*m.index_of(disagg::kControlPlaneColumn)).sum() / total_a;
  }
  for (const auto& [id, tau] : res.mean_latency) {
    auto x = res.watts.find(id);
    res.footprints[id] = (x == res.watts.end() ? 0.0 : x->second) * tau + phi_cp;
  }

  // per-window predictions and spectra
  std::vector<disagg::Window> windows;
  std::vector<std::map<std::string, double>> window_watts;
  if (res.online) {
    for (const auto& step : res.online->steps) {
      windows.push_back(step.window);
      window_watts.push_back(step.watts);
    }
  } else {
    for (double a = t0; a + 1e-9 < t1; a += cfg.window_s) {
      windows.push_back({a, std::min(t1, a + cfg.window_s)});
      window_watts.push_back(watts);
    }
  }
  for (std::size_t k = 0; k < windows.size(); ++k) {
    const auto& w = windows[k];
    if (w.length() < delta) continue;
    disagg::ContributionOptions opt;
    opt.delta = delta;
    opt.window = w;
    opt.principals = cfg.principals;
    auto wm = disagg::build_contributions(ts.invocations, util, opt);
    WindowResult wr;
    wr.window = w;
    wr.baseline_watts = res.baseline_watts;
    wr.measured = disagg::interval_power(res.corrected_power, delta, w);
    wr.watts = window_watts[k];
    Eigen::VectorXd x(wm.cols());
    for (std::size_t j = 0; j < wm.columns.size(); ++j) {
      auto it = wr.watts.find(wm.columns[j].id);
      x(static_cast<Eigen::Index>(j)) = it == wr.watts.end() ? 0.0 : it->second;
      wr.column_joules[wm.columns[j].id] = x(static_cast<Eigen::Index>(j)) * wm.C.col(static_cast<Eigen::Index>(j)).sum();
    }
    wr.predicted = disagg::predicted_power(wm, x, wr.baseline_watts);
    const double x_cp = wr.watts.count(disagg::kControlPlaneColumn) ? wr.watts.at(disagg::kControlPlaneColumn) : 0.0;
    const double measured_energy = wr.measured.sum() * delta;
    wr.spectrum = attribution::spectrum_for_window(wm, detail::functions_only(wr.watts),
                                                   disagg::window_latencies(ts.invocations, w), x_cp,
                                                   wr.baseline_watts, measured_energy);
    res.windows.push_back(std::move(wr));
  }
  return res;
}

// Mean system power of an idle-only run under the same truth and options.
inline double calibrate_idle(const sim::GroundTruth& truth, const sim::SynthesisOptions& opt, std::uint64_t seed,
                             double duration_s = 300.0) {
  auto o = opt;
  o.horizon_s = duration_s;
  auto run = sim::synthesize_power({}, truth, o, seed ^ 0x1d1eULL);
  double s = 0.0;
  for (const auto& x : run.system_power.samples) s += x.watts;
  return s / static_cast<double>(run.system_power.size());
}

}  // namespace faasmeter::pipeline
