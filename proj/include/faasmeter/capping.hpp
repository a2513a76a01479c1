#pragma once

// Footprint-aware software power capping over a simulated FCFS queue.
//
// At every tick (one power sample period) the head of the queue is admitted
// while  W * t + sum(J admitted this tick) + J_head <= W_cap * t,
// where W is the last measured sample and J is the invocation's energy over
// the horizon t. BufferOnly mode admits while W + b * (admitted + 1) < W_cap.

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "faasmeter/error.hpp"
#include "faasmeter/random.hpp"
#include "faasmeter/scenario.hpp"
#include "faasmeter/simulator.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::capping {

struct CapPolicy {
  double cap_watts = 0.0;
  double horizon_s = 1.0;
  CapMode mode = CapMode::FootprintAware;
  double buffer_watts = 0.0;

  void validate() const {
    if (!(cap_watts > 0.0)) throw ConfigError("cap must be positive");
    if (!(horizon_s > 0.0)) throw ConfigError("cap horizon must be positive");
    if (!(buffer_watts >= 0.0)) throw ConfigError("buffer must be nonnegative");
  }
};

enum class Decision { Admit, Defer };

struct QueueDecision {
  std::size_t invocation = 0;  // index into the arrival trace
  std::string function_id;
  Decision decision = Decision::Defer;
  double predicted_joules = 0.0;  // energy over the horizon if admitted
  double observed_watts = 0.0;
  double t = 0.0;
  bool fallback = false;  // no footprint: decided by the buffer rule
};

// Single decision; `already_joules` and `already_count` describe admissions
// made earlier in the same tick.
inline QueueDecision admit(const std::string& function_id, double observed_watts, std::optional<double> footprint,
                           const CapPolicy& policy, double already_joules = 0.0, std::size_t already_count = 0) {
  QueueDecision d;
  d.function_id = function_id;
  d.observed_watts = observed_watts;
  const bool use_buffer = policy.mode == CapMode::BufferOnly || !footprint;
  d.fallback = policy.mode == CapMode::FootprintAware && !footprint;
  if (use_buffer) {
    const double b = policy.buffer_watts * static_cast<double>(already_count + 1);
    d.predicted_joules = (observed_watts + b) * policy.horizon_s;
    d.decision = observed_watts + b < policy.cap_watts ? Decision::Admit : Decision::Defer;
  } else {
    d.predicted_joules = observed_watts * policy.horizon_s + already_joules + *footprint;
    d.decision = d.predicted_joules <= policy.cap_watts * policy.horizon_s ? Decision::Admit : Decision::Defer;
  }
  return d;
}

using FootprintFn = std::function<std::optional<double>(const InvocationRecord&)>;

// Energy an invocation adds within the horizon: watts over the part of its
// run inside the horizon, plus its control-plane joules.
inline double horizon_joules(double watts, double latency, double cp_joules, double horizon) {
  return watts * std::min(latency, horizon) + cp_joules;
}

inline FootprintFn by_function(std::map<std::string, double> joules) {
  return [j = std::move(joules)](const InvocationRecord& r) -> std::optional<double> {
    auto it = j.find(r.function_id);
    if (it == j.end()) return std::nullopt;
    return it->second;
  };
}

// Per-function horizon energy from estimated watts and mean latencies.
inline std::map<std::string, double> horizon_footprints(const std::map<std::string, double>& watts,
                                                        const std::map<std::string, double>& mean_latency,
                                                        double cp_joules, double horizon) {
  std::map<std::string, double> out;
  for (const auto& [id, w] : watts) {
    auto t = mean_latency.find(id);
    if (t != mean_latency.end()) out[id] = horizon_joules(w, t->second, cp_joules, horizon);
  }
  return out;
}

// Oracle: each invocation's own latency and true watts.
inline FootprintFn exact_footprints(const sim::GroundTruth& truth, double horizon) {
  return [truth, horizon](const InvocationRecord& r) -> std::optional<double> {
    auto it = truth.per_function_watts.find(r.function_id);
    if (it == truth.per_function_watts.end()) return std::nullopt;
    return horizon_joules(it->second, r.latency(), truth.control_plane_joules_per_invocation, horizon);
  };
}

struct CapRunOptions {
  double period_s = 1.0;
  double cp_window_s = 0.5;  // causal: [start, start + window)
  double initial_watts = 0.0;
  std::size_t starvation_ticks = 10;
  std::uint64_t seed = 0;
};

struct CappedRun {
  InvocationTrace invocations;  // actual start/end
  std::vector<double> arrivals;  // arrival time per record in `invocations`
  PowerTrace power;
  std::vector<QueueDecision> decisions;
  std::size_t deferrals = 0;
  std::size_t fallbacks = 0;
  double overshoot_fraction = 0.0;
  std::map<std::string, std::vector<double>> latencies;  // includes queue wait
  double mean_latency = 0.0;
  double latency_variance = 0.0;
  double mean_wait = 0.0;
  bool starved = false;
  std::string diagnostic;
};

namespace detail {

struct Running {
  double start;
  double end;
  double watts;
  double cp_joules;
};

inline double bin_energy(const std::vector<Running>& running, double lo, double hi, double cp_window) {
  double e = 0.0;
  for (const auto& r : running) {
    const double ov = std::min(r.end, hi) - std::max(r.start, lo);
    if (ov > 0.0) e += r.watts * ov;
    if (r.cp_joules > 0.0) {
      const double cov = std::min(r.start + cp_window, hi) - std::max(r.start, lo);
      if (cov > 0.0) e += r.cp_joules * cov / cp_window;
    }
  }
  return e;
}

inline void summarize(CappedRun& out, double cap) {
  std::vector<double> all;
  double wait = 0.0;
  for (std::size_t i = 0; i < out.invocations.size(); ++i) {
    const auto& r = out.invocations.samples[i];
    const double l = r.end - out.arrivals[i];
    out.latencies[r.function_id].push_back(l);
    all.push_back(l);
    wait += r.start - out.arrivals[i];
  }
  if (!all.empty()) {
    double s = 0.0;
    for (double x : all) s += x;
    out.mean_latency = s / static_cast<double>(all.size());
    double ss = 0.0;
    for (double x : all) ss += (x - out.mean_latency) * (x - out.mean_latency);
    out.latency_variance = all.size() > 1 ? ss / static_cast<double>(all.size() - 1) : 0.0;
    out.mean_wait = wait / static_cast<double>(all.size());
  }
  std::size_t over = 0;
  for (const auto& s : out.power.samples)
    if (s.watts > cap) ++over;
  out.overshoot_fraction = out.power.empty() ? 0.0 : static_cast<double>(over) / static_cast<double>(out.power.size());
}

}  // namespace detail

// Closed loop: arrivals queue FCFS, admitted invocations start at the tick,
// power is measured per tick with the truth's noise model.
inline CappedRun run_capped(const InvocationTrace& arrivals, const sim::GroundTruth& truth, const CapPolicy& policy,
                            const FootprintFn& footprint, const CapRunOptions& opt) {
  policy.validate();
  sim::validate(truth);
  if (!(opt.period_s > 0.0)) throw ConfigError("tick period must be positive");
  validate(arrivals);

  CappedRun out;
  out.power.meta = {0.0, opt.period_s, "capped system"};
  out.invocations.meta = arrivals.meta;
  const double p = opt.period_s;
  auto noise = make_stream(opt.seed, "noise:capped");
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::deque<std::size_t> queue;
  std::vector<detail::Running> running;
  std::vector<std::pair<double, std::size_t>> started;  // (arrival, index) per admitted record
  std::size_t next = 0;
  double observed = opt.initial_watts;
  std::size_t idle_deferred_ticks = 0;
  const auto& arr = arrivals.samples;

  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * p;
    while (next < arr.size() && arr[next].start <= t + 1e-9) queue.push_back(next++);

    double already = 0.0;
    std::size_t admitted = 0;
    bool head_deferred = false;
    while (!queue.empty()) {
      const auto idx = queue.front();
      const auto& r = arr[idx];
      auto d = admit(r.function_id, observed, footprint(r), policy, already, admitted);
      d.invocation = idx;
      d.t = t;
      if (d.fallback) ++out.fallbacks;
      out.decisions.push_back(d);
      if (d.decision == Decision::Defer) {
        ++out.deferrals;
        head_deferred = true;
        break;
      }
      auto fp = footprint(r);
      already += fp ? *fp : 0.0;
      ++admitted;
      queue.pop_front();
      const double latency = r.latency();
      InvocationRecord rec{r.function_id, t, t + latency, r.warm};
      out.invocations.samples.push_back(rec);
      out.arrivals.push_back(r.start);
      running.push_back({t, t + latency, truth.per_function_watts.at(r.function_id),
                         truth.control_plane_joules_per_invocation});
    }

    // measure the bin [t, t + p)
    double w = truth.idle_watts + detail::bin_energy(running, t, t + p, opt.cp_window_s) / p;
    if (truth.noise_std_watts > 0.0) w += truth.noise_std_watts * gauss(noise);
    if (truth.quantization_step_watts > 0.0)
      w = std::round(w / truth.quantization_step_watts) * truth.quantization_step_watts;
    w = std::max(0.0, w) + 0.0;
    out.power.samples.push_back({t, PowerSource::System, w});
    observed = w;

    std::erase_if(running, [&](const detail::Running& r) { return r.end <= t + p && r.start + opt.cp_window_s <= t + p; });

    if (head_deferred && admitted == 0 && running.empty()) {
      if (++idle_deferred_ticks >= opt.starvation_ticks) {
        out.starved = true;
        out.diagnostic = "starvation: head invocation of '" + arr[queue.front()].function_id + "' deferred for " +
                         std::to_string(idle_deferred_ticks) + " ticks with nothing running (cap " +
                         faasmeter::detail::format_number(policy.cap_watts) + " W, observed " +
                         faasmeter::detail::format_number(observed) + " W)";
        break;
      }
    } else {
      idle_deferred_ticks = 0;
    }
    if (next >= arr.size() && queue.empty() && running.empty()) break;
  }

  // records sorted by start for a valid trace; starts are already nondecreasing
  detail::summarize(out, policy.cap_watts);
  return out;
}

inline CappedRun run_capped(const sim::WorkloadSpec& spec, const sim::GroundTruth& truth, const CapPolicy& policy,
                            const FootprintFn& footprint, CapRunOptions opt) {
  if (opt.seed == 0) opt.seed = spec.seed;
  return run_capped(sim::generate_workload(spec), truth, policy, footprint, opt);
}

inline nlohmann::json to_json(const QueueDecision& d) {
  return {{"t", d.t},
          {"invocation", d.invocation},
          {"function_id", d.function_id},
          {"decision", d.decision == Decision::Admit ? "admit" : "defer"},
          {"predicted_joules", d.predicted_joules},
          {"observed_watts", d.observed_watts},
          {"fallback", d.fallback}};
}

}  // namespace faasmeter::capping
