#pragma once

// Workload and power-signal simulator with hidden ground truth.
//
// The generating model is additive: instantaneous system power is
//   idle + sum over running invocations of the function's active watts
//        + control-plane power (a fixed energy per invocation smeared over a
//          short window at the invocation start).
// The measured system trace is the bin average of that signal, delayed by the
// injected skew, with Gaussian noise and uniform quantization applied.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "faasmeter/error.hpp"
#include "faasmeter/random.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::sim {

enum class IatKind { Constant, Exponential, Lognormal, Bursty };

// Bursty arrivals are Poisson with the given mean IAT during "on" phases of an
// on/off cycle and absent during "off" phases.
struct IatDistribution {
  IatKind kind = IatKind::Exponential;
  double mean_s = 1.0;
  double cov = 1.0;  // lognormal only
  double on_s = 0.0;
  double off_s = 0.0;
  double phase_s = 0.0;
};

struct FunctionSpec {
  std::string id;
  double mean_latency_s = 1.0;
  double latency_cov = 0.0;
  IatDistribution iat;
  double start_s = 0.0;                                    // first possible arrival
  double end_s = std::numeric_limits<double>::infinity();  // no arrivals at or after
};

struct WorkloadSpec {
  std::vector<FunctionSpec> functions;
  double duration_s = 0.0;
  std::uint64_t seed = 0;
};

struct GroundTruth {
  double idle_watts = 0.0;
  std::map<std::string, double> per_function_watts;
  double control_plane_joules_per_invocation = 0.0;
  double noise_std_watts = 0.0;
  double quantization_step_watts = 0.0;
  double injected_skew_s = 0.0;

  bool operator==(const GroundTruth&) const = default;
};

// Piecewise skew: from `from_s` on, the sensor lags by `skew_s`.
struct SkewStep {
  double from_s = 0.0;
  double skew_s = 0.0;
  bool operator==(const SkewStep&) const = default;
};

struct SynthesisOptions {
  double period_s = 1.0;
  std::size_t concurrency_cap = 0;  // 0: unlimited
  double cpu_fraction = 0.8;
  double cp_window_s = 0.5;
  double cpu_noise_std_watts = 0.0;
  double horizon_s = 0.0;  // 0: derived from the schedule
  std::vector<SkewStep> skew_schedule;
  std::map<std::string, double> concurrency_discount;  // empty: additive power
  std::map<std::string, double> function_cpu_percent;  // utilization while running; default 100
  double cp_cpu_percent = 25.0;
  double os_cpu_percent = 2.0;
  int cores = 8;
  double counter_noise_cov = 0.01;
  bool emit_cpu = true;
  bool emit_counters = true;

  bool operator==(const SynthesisOptions&) const = default;
};

// Constants of the synthetic counter model. The system-wide cycle counters
// report full core capacity, so a function's normalized core-cycle share is
// linear in its CPU power.
inline constexpr double kCyclesPerJoule = 1e8;
inline constexpr double kCoreCapacityCyclesPerS = 4e9;
inline constexpr double kReferenceCyclesPerS = 2.4e9;
inline constexpr double kBackgroundInstructionsPerPercentS = 2e7;

struct SimulatedRun {
  InvocationTrace invocations;
  PowerTrace system_power;
  std::optional<PowerTrace> cpu_power;
  UtilizationTrace utilization;
  std::optional<CounterTrace> counters;
  GroundTruth truth;  // validation only; estimation code never reads it
  SynthesisOptions options;
  double horizon_s = 0.0;
};

inline void validate(const WorkloadSpec& spec) {
  if (!(spec.duration_s > 0.0) || !std::isfinite(spec.duration_s)) {
    throw InvariantError("workload duration must be positive");
  }
  std::set<std::string> seen;
  for (const auto& f : spec.functions) {
    faasmeter::detail::check_identifier(f.id);
    if (!seen.insert(f.id).second) throw InvariantError("duplicate function id '" + f.id + "'");
    if (!(f.mean_latency_s > 0.0)) throw InvariantError("function '" + f.id + "': mean latency must be positive");
    if (!(f.latency_cov >= 0.0)) throw InvariantError("function '" + f.id + "': latency CoV must be nonnegative");
    if (!(f.iat.mean_s > 0.0)) throw InvariantError("function '" + f.id + "': IAT mean must be positive");
    if (f.iat.kind == IatKind::Lognormal && !(f.iat.cov >= 0.0)) {
      throw InvariantError("function '" + f.id + "': IAT CoV must be nonnegative");
    }
    if (f.iat.kind == IatKind::Bursty && (!(f.iat.on_s > 0.0) || !(f.iat.off_s >= 0.0))) {
      throw InvariantError("function '" + f.id + "': bursty IAT needs on_s > 0 and off_s >= 0");
    }
  }
}

inline void validate(const GroundTruth& t) {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvariantError(std::string(name) + " must be finite and >= 0");
  };
  nonneg(t.idle_watts, "idle_watts");
  nonneg(t.control_plane_joules_per_invocation, "control_plane_joules_per_invocation");
  nonneg(t.noise_std_watts, "noise_std_watts");
  nonneg(t.quantization_step_watts, "quantization_step_watts");
  for (const auto& [id, w] : t.per_function_watts) nonneg(w, ("per_function_watts." + id).c_str());
  if (!(std::abs(t.injected_skew_s) <= 10.0)) throw InvariantError("injected_skew_s must lie within +-10 s");
}

namespace detail {

inline double round_ms(double t) { return std::round(t * 1000.0) / 1000.0; }

// Lognormal with the given mean and coefficient of variation; constant when cov = 0.
inline double sample_lognormal(std::mt19937_64& rng, double mean, double cov) {
  if (cov <= 0.0) return mean;
  const double sigma2 = std::log1p(cov * cov);
  std::lognormal_distribution<double> dist(std::log(mean) - 0.5 * sigma2, std::sqrt(sigma2));
  return dist(rng);
}

inline double next_arrival(std::mt19937_64& rng, const IatDistribution& iat, double t) {
  switch (iat.kind) {
    case IatKind::Constant: return t + iat.mean_s;
    case IatKind::Exponential: return t + std::exponential_distribution<double>(1.0 / iat.mean_s)(rng);
    case IatKind::Lognormal: return t + sample_lognormal(rng, iat.mean_s, iat.cov);
    case IatKind::Bursty: {
      double next = t + std::exponential_distribution<double>(1.0 / iat.mean_s)(rng);
      const double cycle = iat.on_s + iat.off_s;
      if (cycle <= 0.0) return next;
      const double pos = std::fmod(next - iat.phase_s, cycle);
      const double in_cycle = pos < 0.0 ? pos + cycle : pos;
      if (in_cycle >= iat.on_s) next += cycle - in_cycle;  // skip the off phase
      return next;
    }
  }
  return t + iat.mean_s;
}

// Continuous-time step function with values on [times[i], times[i+1]);
// zero outside [times.front(), times.back()).
struct StepFunction {
  std::vector<double> times;
  std::vector<double> values;  // size times.size() - 1
  std::vector<double> prefix;  // integral up to times[i]

  void finish() {
    prefix.assign(times.size(), 0.0);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      prefix[i + 1] = prefix[i] + values[i] * (times[i + 1] - times[i]);
    }
  }

  double cumulative(double t) const {
    if (times.size() < 2 || t <= times.front()) return 0.0;
    if (t >= times.back()) return prefix.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto i = static_cast<std::size_t>(it - times.begin()) - 1;
    return prefix[i] + values[i] * (t - times[i]);
  }

  double integral(double a, double b) const { return cumulative(b) - cumulative(a); }
};

struct DynamicPower {
  StepFunction functions;
  StepFunction control_plane;
};

inline double discounted(double n, double discount) { return n / (1.0 + discount * (n - 1.0)); }

inline std::pair<double, double> cp_window(const InvocationRecord& r, double width) {
  const double lo = std::max(0.0, r.start - 0.5 * width);
  return {lo, lo + width};
}

inline DynamicPower build_dynamic_power(const InvocationTrace& inv, const GroundTruth& truth,
                                        const SynthesisOptions& opt) {
  // Function index per id, in a fixed order.
  std::map<std::string, std::size_t> index;
  std::vector<double> watts;
  std::vector<double> discount;
  for (const auto& r : inv.samples) {
    if (index.emplace(r.function_id, index.size()).second) {
      auto w = truth.per_function_watts.find(r.function_id);
      if (w == truth.per_function_watts.end()) {
        throw InvariantError("ground truth has no active power for function '" + r.function_id + "'");
      }
      watts.push_back(w->second);
      auto d = opt.concurrency_discount.find(r.function_id);
      discount.push_back(d == opt.concurrency_discount.end() ? 0.0 : d->second);
    }
  }

  struct Event {
    double t;
    int fn;  // -1: control plane
    double delta;
  };
  std::vector<Event> events;
  events.reserve(inv.size() * 4);
  const double cp_power =
      opt.cp_window_s > 0.0 ? truth.control_plane_joules_per_invocation / opt.cp_window_s : 0.0;
  for (const auto& r : inv.samples) {
    const int f = static_cast<int>(index.at(r.function_id));
    events.push_back({r.start, f, 1.0});
    events.push_back({r.end, f, -1.0});
    if (cp_power > 0.0) {
      auto [lo, hi] = cp_window(r, opt.cp_window_s);
      events.push_back({lo, -1, cp_power});
      events.push_back({hi, -1, -cp_power});
    }
  }
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });

  DynamicPower out;
  std::vector<double> running(watts.size(), 0.0);
  double cp = 0.0;
  std::size_t i = 0;
  while (i < events.size()) {
    const double t = events[i].t;
    while (i < events.size() && events[i].t == t) {
      if (events[i].fn < 0) cp += events[i].delta;
      else running[static_cast<std::size_t>(events[i].fn)] += events[i].delta;
      ++i;
    }
    double fn_power = 0.0;
    for (std::size_t f = 0; f < watts.size(); ++f) {
      if (running[f] > 0.5) fn_power += watts[f] * discounted(running[f], discount[f]);
    }
    const double cp_now = std::abs(cp) < 1e-12 * std::max(1.0, cp_power) ? 0.0 : cp;
    out.functions.times.push_back(t);
    out.control_plane.times.push_back(t);
    if (i < events.size()) {
      out.functions.values.push_back(fn_power);
      out.control_plane.values.push_back(cp_now);
    }
  }
  out.functions.finish();
  out.control_plane.finish();
  return out;
}

inline double skew_at(const GroundTruth& truth, const SynthesisOptions& opt, double t) {
  double skew = truth.injected_skew_s;
  for (const auto& step : opt.skew_schedule)
    if (t >= step.from_s) skew = step.skew_s;
  return skew;
}

inline double max_abs_skew(const GroundTruth& truth, const SynthesisOptions& opt) {
  double m = std::abs(truth.injected_skew_s);
  for (const auto& step : opt.skew_schedule) m = std::max(m, std::abs(step.skew_s));
  return m;
}

}  // namespace detail

// Arrival schedule with undelayed start/end times, sorted by start.
inline InvocationTrace generate_workload(const WorkloadSpec& spec) {
  validate(spec);
  struct Pending {
    InvocationRecord record;
    std::size_t order;
  };
  std::vector<Pending> all;
  for (std::size_t fi = 0; fi < spec.functions.size(); ++fi) {
    const auto& f = spec.functions[fi];
    auto iat_rng = make_stream(spec.seed, "iat:" + f.id);
    auto lat_rng = make_stream(spec.seed, "latency:" + f.id);
    const double stop = std::min(spec.duration_s, f.end_s);
    double t = std::max(0.0, f.start_s);
    if (f.iat.kind == IatKind::Bursty) {
      const double cycle = f.iat.on_s + f.iat.off_s;
      const double pos = std::fmod(t - f.iat.phase_s, cycle);
      const double in_cycle = pos < 0.0 ? pos + cycle : pos;
      if (in_cycle >= f.iat.on_s) t += cycle - in_cycle;
    }
    while (t < stop) {
      const double start = detail::round_ms(t);
      const double latency = std::max(0.001, detail::round_ms(detail::sample_lognormal(lat_rng, f.mean_latency_s,
                                                                                       f.latency_cov)));
      if (start < stop) all.push_back({{f.id, start, detail::round_ms(start + latency), true}, fi});
      const double next = detail::next_arrival(iat_rng, f.iat, t);
      if (!(next > t)) throw InvariantError("IAT distribution of '" + f.id + "' produced a non-positive gap");
      t = next;
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const Pending& a, const Pending& b) {
    return a.record.start != b.record.start ? a.record.start < b.record.start : a.order < b.order;
  });
  InvocationTrace out;
  out.meta.source_label = "simulated invocations";
  out.samples.reserve(all.size());
  for (auto& p : all) out.samples.push_back(std::move(p.record));
  return out;
}

// FCFS queueing onto `cap` slots (0 = unlimited). Latencies are preserved;
// start times only move later.
inline InvocationTrace apply_concurrency_cap(const InvocationTrace& arrivals, std::size_t cap) {
  if (cap == 0) return arrivals;
  InvocationTrace out = arrivals;
  std::priority_queue<double, std::vector<double>, std::greater<>> free_at;
  for (std::size_t k = 0; k < cap; ++k) free_at.push(-std::numeric_limits<double>::infinity());
  for (auto& r : out.samples) {
    const double latency = r.end - r.start;
    const double start = detail::round_ms(std::max(r.start, free_at.top()));
    free_at.pop();
    r.start = start;
    r.end = detail::round_ms(start + latency);
    free_at.push(r.end);
  }
  return out;
}

inline SimulatedRun synthesize_power(const InvocationTrace& arrivals, const GroundTruth& truth,
                                     const SynthesisOptions& opt, std::uint64_t seed) {
  validate(truth);
  if (!(opt.period_s > 0.0)) throw InvariantError("synthesis period must be positive");
  if (!(opt.cpu_fraction >= 0.0 && opt.cpu_fraction <= 1.0)) throw InvariantError("cpu_fraction must lie in [0,1]");
  validate(arrivals);

  SimulatedRun run;
  run.truth = truth;
  run.options = opt;
  run.invocations = apply_concurrency_cap(arrivals, opt.concurrency_cap);
  run.invocations.meta.source_label = "simulated invocations";
  const auto& inv = run.invocations.samples;

  const double p = opt.period_s;
  double horizon = opt.horizon_s;
  if (horizon <= 0.0) {
    double last = 0.0;
    for (const auto& r : inv) last = std::max({last, r.end, detail::cp_window(r, opt.cp_window_s).second});
    horizon = last + detail::max_abs_skew(truth, opt) + p;
  }
  const auto bins = static_cast<std::size_t>(std::ceil(horizon / p - 1e-9));
  run.horizon_s = static_cast<double>(bins) * p;

  const auto dyn = detail::build_dynamic_power(run.invocations, truth, opt);
  auto dynamic_avg = [&](double a, double b) {
    return (dyn.functions.integral(a, b) + dyn.control_plane.integral(a, b)) / (b - a);
  };

  auto noise_rng = make_stream(seed, "noise:system");
  auto cpu_noise_rng = make_stream(seed, "noise:cpu");
  std::normal_distribution<double> gauss(0.0, 1.0);

  TraceMeta power_meta{0.0, p, "simulated system"};
  run.system_power.meta = power_meta;
  run.system_power.samples.reserve(bins);
  PowerTrace cpu;
  cpu.meta = {0.0, p, "simulated cpu"};
  for (std::size_t k = 0; k < bins; ++k) {
    const double t = static_cast<double>(k) * p;
    const double lagged = t - detail::skew_at(truth, opt, t);
    double w = truth.idle_watts + dynamic_avg(lagged, lagged + p);
    if (truth.noise_std_watts > 0.0) w += truth.noise_std_watts * gauss(noise_rng);
    if (truth.quantization_step_watts > 0.0) {
      w = std::round(w / truth.quantization_step_watts) * truth.quantization_step_watts;
    }
    run.system_power.samples.push_back({t, PowerSource::System, std::max(0.0, w) + 0.0});

    if (opt.emit_cpu) {
      double c = opt.cpu_fraction * dynamic_avg(t, t + p);
      if (opt.cpu_noise_std_watts > 0.0) c += opt.cpu_noise_std_watts * gauss(cpu_noise_rng);
      cpu.samples.push_back({t, PowerSource::Cpu, std::max(0.0, c) + 0.0});
    }
  }
  if (opt.emit_cpu) run.cpu_power = std::move(cpu);

  // Utilization and counters: per-bin overlap of each invocation.
  std::vector<double> fn_percent(bins, 0.0);
  std::vector<double> cp_active(bins, 0.0);

  struct ContainerSlice {
    std::size_t bin;
    std::size_t inv;
    double overlap;
  };
  std::vector<ContainerSlice> slices;
  for (std::size_t n = 0; n < inv.size(); ++n) {
    const auto& r = inv[n];
    const auto first = static_cast<std::size_t>(std::floor(r.start / p));
    for (std::size_t k = first; k < bins; ++k) {
      const double lo = static_cast<double>(k) * p;
      if (lo >= r.end) break;
      const double ov = std::min(r.end, lo + p) - std::max(r.start, lo);
      if (ov > 0.0) slices.push_back({k, n, ov});
    }
    auto [wlo, whi] = detail::cp_window(r, opt.cp_window_s);
    for (auto k = static_cast<std::size_t>(std::floor(wlo / p)); k < bins; ++k) {
      const double lo = static_cast<double>(k) * p;
      if (lo >= whi) break;
      const double ov = std::min(whi, lo + p) - std::max(wlo, lo);
      if (ov > 0.0) cp_active[k] += ov / p;
    }
  }
  std::stable_sort(slices.begin(), slices.end(),
                   [](const ContainerSlice& a, const ContainerSlice& b) { return a.bin < b.bin; });

  for (const auto& s : slices) {
    auto it = opt.function_cpu_percent.find(inv[s.inv].function_id);
    const double percent = it == opt.function_cpu_percent.end() ? 100.0 : it->second;
    fn_percent[s.bin] += percent * s.overlap / p;
  }

  run.utilization.meta = {0.0, p, "simulated utilization"};
  run.utilization.samples.reserve(bins * 3);
  for (std::size_t k = 0; k < bins; ++k) {
    const double t = static_cast<double>(k) * p;
    const double cp = opt.cp_cpu_percent * cp_active[k];
    const double os = opt.os_cpu_percent;
    run.utilization.samples.push_back({t, Principal::ControlPlane, cp});
    run.utilization.samples.push_back({t, Principal::Os, os});
    run.utilization.samples.push_back({t, Principal::SystemWide, fn_percent[k] + cp + os});
  }

  if (opt.emit_counters) {
    CounterTrace counters;
    counters.meta = {0.0, p, "simulated counters"};
    auto counter_rng = make_stream(seed, "counters");
    auto jitter = [&] {
      return opt.counter_noise_cov > 0.0 ? std::max(0.0, 1.0 + opt.counter_noise_cov * gauss(counter_rng)) : 1.0;
    };
    std::size_t s = 0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double t = static_cast<double>(k) * p;
      std::vector<CounterSample> rows;
      double llc_sum = 0.0;
      double instr_sum = 0.0;
      for (; s < slices.size() && slices[s].bin == k; ++s) {
        const auto& r = inv[slices[s].inv];
        const double fn_watts = truth.per_function_watts.at(r.function_id);
        const double ipc = 0.6 + 2.0 * unit_hash(r.function_id, 1);
        const double llc_rate = 1e5 * (1.0 + 50.0 * unit_hash(r.function_id, 2));
        const double ov = slices[s].overlap;
        CounterVector c{};
        c[0] = static_cast<std::uint64_t>(std::llround(ov * opt.cpu_fraction * fn_watts * kCyclesPerJoule * jitter()));
        c[1] = static_cast<std::uint64_t>(std::llround(ov * kReferenceCyclesPerS));
        c[2] = static_cast<std::uint64_t>(std::llround(ov * llc_rate * jitter()));
        c[3] = static_cast<std::uint64_t>(std::llround(static_cast<double>(c[0]) * ipc));
        llc_sum += static_cast<double>(c[2]);
        instr_sum += static_cast<double>(c[3]);
        rows.push_back({t, r.function_id, c});
      }
      const double background = opt.cp_cpu_percent * cp_active[k] + opt.os_cpu_percent;
      CounterVector sys{};
      sys[0] = static_cast<std::uint64_t>(std::llround(opt.cores * kCoreCapacityCyclesPerS * p));
      sys[1] = static_cast<std::uint64_t>(std::llround(opt.cores * kReferenceCyclesPerS * p));
      sys[2] = static_cast<std::uint64_t>(std::llround(llc_sum + background * 1e3 * p));
      sys[3] = static_cast<std::uint64_t>(
          std::llround(instr_sum + background * kBackgroundInstructionsPerPercentS * p));
      counters.samples.push_back({t, std::string(kSystemCounterId), sys});
      for (auto& row : rows) counters.samples.push_back(std::move(row));
    }
    run.counters = std::move(counters);
  }
  return run;
}

inline std::map<std::string, double> mean_latencies(const InvocationTrace& inv) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : inv.samples) {
    auto& [sum, n] = acc[r.function_id];
    sum += r.latency();
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [id, a] : acc) out[id] = a.first / static_cast<double>(a.second);
  return out;
}

enum class FootprintPolicy { Individual, IndividualPlusControlPlane };

// Per-invocation joules the estimators should recover.
inline std::map<std::string, double> true_footprints(const SimulatedRun& run,
                                                     FootprintPolicy policy = FootprintPolicy::Individual) {
  std::map<std::string, double> out;
  for (const auto& [id, latency] : mean_latencies(run.invocations)) {
    double j = run.truth.per_function_watts.at(id) * latency;
    if (policy == FootprintPolicy::IndividualPlusControlPlane) j += run.truth.control_plane_joules_per_invocation;
    out[id] = j;
  }
  return out;
}

inline double true_footprint(const SimulatedRun& run, const std::string& function_id,
                             FootprintPolicy policy = FootprintPolicy::Individual) {
  auto all = true_footprints(run, policy);
  auto it = all.find(function_id);
  if (it == all.end()) throw InvariantError("unknown function id '" + function_id + "'");
  return it->second;
}

// Per-function idle share over [t0, t1): idle energy split evenly among the
// functions with at least one invocation completing in the window.
inline std::map<std::string, double> true_idle_shares(const SimulatedRun& run, double t0, double t1) {
  std::set<std::string> active;
  for (const auto& r : run.invocations.samples)
    if (r.end >= t0 && r.end < t1) active.insert(r.function_id);
  std::map<std::string, double> out;
  if (active.empty()) return out;
  const double share = run.truth.idle_watts * (t1 - t0) / static_cast<double>(active.size());
  for (const auto& id : active) out[id] = share;
  return out;
}

// Integral of the noiseless, unskewed generating model over [0, horizon).
inline double analytic_energy(const SimulatedRun& run) {
  double total = run.truth.idle_watts * run.horizon_s;
  for (const auto& r : run.invocations.samples) total += run.truth.per_function_watts.at(r.function_id) * r.latency();
  total += run.truth.control_plane_joules_per_invocation * static_cast<double>(run.invocations.size());
  return total;
}

inline SimulatedRun simulate(const WorkloadSpec& spec, const GroundTruth& truth, const SynthesisOptions& opt) {
  return synthesize_power(generate_workload(spec), truth, opt, spec.seed);
}

// Same workload with one function removed; surviving schedules are identical
// because every function draws from its own named random stream.
inline WorkloadSpec without_function(WorkloadSpec spec, const std::string& id) {
  auto it = std::remove_if(spec.functions.begin(), spec.functions.end(),
                           [&](const FunctionSpec& f) { return f.id == id; });
  if (it == spec.functions.end()) throw InvariantError("unknown function id '" + id + "'");
  spec.functions.erase(it, spec.functions.end());
  return spec;
}

}  // namespace faasmeter::sim
