#pragma once

// Temporal skew estimation and correction for power signals.
//
// The skew s* of a power signal W against a reference R minimizes the mean of
//   (W(t + s) / mean(W) - R(t) / mean(R))^2
// over |s| <= bound. The search is exhaustive at sample resolution followed by
// a parabolic refinement through the best grid point and its neighbours.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "faasmeter/error.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::signal {

struct SkewEstimate {
  double offset_s = 0.0;
  double residual = 0.0;  // objective value at the optimum
  double estimated_at = 0.0;
};

struct SkewOptions {
  double bound_s = 5.0;
  double flat_cov = 0.01;  // coefficient of variation below which a signal is flat
};

namespace detail {

struct AlignedPair {
  std::vector<double> power;
  std::vector<double> reference;
  double period = 0.0;
  double origin = 0.0;
};

inline double grid_period(const PowerTrace& t) {
  if (t.meta.nominal_period_s > 0.0) return t.meta.nominal_period_s;
  if (t.size() < 2) throw InvariantError("cannot infer the sample period of a trace with < 2 samples");
  return t.samples[1].timestamp - t.samples[0].timestamp;
}

inline AlignedPair align(const PowerTrace& power, const PowerTrace& reference) {
  if (power.size() < 2 || reference.size() < 2) throw InvariantError("skew estimation needs at least two samples");
  require_single_source(power);
  require_single_source(reference);
  AlignedPair out;
  out.period = grid_period(power);
  const double pr = grid_period(reference);
  if (!(out.period > 0.0) || std::abs(pr - out.period) > 1e-9 * std::max(1.0, out.period)) {
    throw InvariantError("power and reference must share a sample period");
  }
  const double p = out.period;
  out.origin = std::max(power.samples.front().timestamp, reference.samples.front().timestamp);
  auto fill = [&](const PowerTrace& t, std::vector<double>& dst) {
    const double shift = (t.samples.front().timestamp - out.origin) / p;
    if (std::abs(shift - std::round(shift)) > 1e-6) throw InvariantError("power and reference grids are not aligned");
    for (const auto& s : t.samples) {
      const double k = (s.timestamp - out.origin) / p;
      if (std::abs(k - std::round(k)) > 1e-6) throw InvariantError("trace is not on a uniform grid");
      if (k < -0.5) continue;
      const auto idx = static_cast<std::size_t>(std::llround(k));
      if (idx != dst.size()) throw InvariantError("trace has gaps or duplicates; resample first");
      dst.push_back(s.watts);
    }
  };
  fill(power, out.power);
  fill(reference, out.reference);
  const auto n = std::min(out.power.size(), out.reference.size());
  out.power.resize(n);
  out.reference.resize(n);
  return out;
}

inline double mean(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t i = lo; i < hi; ++i) s += v[i];
  return s / static_cast<double>(hi - lo);
}

inline double coefficient_of_variation(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean(v, 0, v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  return m != 0.0 ? sd / std::abs(m) : 0.0;
}

// Mean squared normalized difference for an integer lag (power index = ref index + lag).
inline double objective(const std::vector<double>& w, const std::vector<double>& r, long lag) {
  const long n = static_cast<long>(w.size());
  const long lo = std::max(0L, -lag);
  const long hi = std::min(n, n - lag);
  if (hi - lo < 2) return std::numeric_limits<double>::infinity();
  double wm = 0.0, rm = 0.0;
  for (long t = lo; t < hi; ++t) {
    wm += w[static_cast<std::size_t>(t + lag)];
    rm += r[static_cast<std::size_t>(t)];
  }
  wm /= static_cast<double>(hi - lo);
  rm /= static_cast<double>(hi - lo);
  if (wm == 0.0 || rm == 0.0) return std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (long t = lo; t < hi; ++t) {
    const double d = w[static_cast<std::size_t>(t + lag)] / wm - r[static_cast<std::size_t>(t)] / rm;
    acc += d * d;
  }
  return acc / static_cast<double>(hi - lo);
}

inline SkewEstimate estimate_aligned(const AlignedPair& a, const SkewOptions& opt) {
  const double p = a.period;
  const auto n = a.power.size();
  if (static_cast<double>(n) * p < 2.0 * opt.bound_s) {
    throw InvariantError("traces are shorter than twice the skew bound");
  }
  const double wm = mean(a.power, 0, n);
  const double rm = mean(a.reference, 0, n);
  if (wm == 0.0 || rm == 0.0) throw InvariantError("skew estimation needs signals with nonzero mean");
  if (coefficient_of_variation(a.power) < opt.flat_cov || coefficient_of_variation(a.reference) < opt.flat_cov) {
    throw FlatSignalError("signal is flat over the window; skew is unidentifiable");
  }

  const long max_lag = static_cast<long>(std::floor(opt.bound_s / p + 1e-9));
  std::vector<double> f(static_cast<std::size_t>(2 * max_lag + 1));
  for (long k = -max_lag; k <= max_lag; ++k) f[static_cast<std::size_t>(k + max_lag)] = objective(a.power, a.reference, k);
  long best = 0;
  for (long k = -max_lag; k <= max_lag; ++k) {
    const double v = f[static_cast<std::size_t>(k + max_lag)];
    const double fb = f[static_cast<std::size_t>(best + max_lag)];
    if (v < fb || (v == fb && std::abs(k) < std::abs(best))) best = k;
  }

  SkewEstimate est;
  est.offset_s = static_cast<double>(best) * p;
  est.residual = f[static_cast<std::size_t>(best + max_lag)];
  if (best > -max_lag && best < max_lag) {
    const double fm = f[static_cast<std::size_t>(best - 1 + max_lag)];
    const double f0 = est.residual;
    const double fp = f[static_cast<std::size_t>(best + 1 + max_lag)];
    const double curvature = fm - 2.0 * f0 + fp;
    if (curvature > 0.0 && std::isfinite(curvature)) {
      const double delta = std::clamp(0.5 * (fm - fp) / curvature, -0.5, 0.5);
      est.offset_s = (static_cast<double>(best) + delta) * p;
      est.residual = std::min(f0, f0 - 0.25 * (fm - fp) * delta);
    }
  }
  est.offset_s = std::clamp(est.offset_s, -opt.bound_s, opt.bound_s);
  return est;
}

}  // namespace detail

// Both traces must be on a common uniform grid (see resample()).
inline SkewEstimate estimate_skew(const PowerTrace& power, const PowerTrace& reference, const SkewOptions& opt = {}) {
  auto aligned = detail::align(power, reference);
  auto est = detail::estimate_aligned(aligned, opt);
  est.estimated_at = aligned.origin + static_cast<double>(aligned.power.size()) * aligned.period;
  return est;
}

inline SkewEstimate estimate_skew(const PowerTrace& power, const PowerTrace& reference, double bound_s) {
  return estimate_skew(power, reference, SkewOptions{bound_s, 0.01});
}

// Shifts timestamps by -offset, dropping samples that leave the original window.
inline PowerTrace apply_skew(const PowerTrace& power, double offset_s) {
  PowerTrace out;
  out.meta = power.meta;
  if (power.empty()) return out;
  const double lo = power.samples.front().timestamp;
  const double hi = power.samples.back().timestamp;
  for (const auto& s : power.samples) {
    const double t = s.timestamp - offset_s;
    if (t >= lo - 1e-9 && t <= hi + 1e-9) out.samples.push_back({t, s.source, s.watts});
  }
  return out;
}

// Unitless load series from system-wide instruction counts, for use as a skew
// reference when no CPU power trace exists.
inline PowerTrace instruction_rate_reference(const CounterTrace& counters) {
  PowerTrace out;
  out.meta = counters.meta;
  out.meta.source_label = "system instruction rate";
  for (const auto& c : counters.samples) {
    if (c.function_id == kSystemCounterId) {
      out.samples.push_back({c.timestamp, PowerSource::Cpu, static_cast<double>(c.counters[3]) * 1e-9});
    }
  }
  return out;
}

// Pointwise a - b on a's grid, after resampling b onto it.
inline std::vector<double> aligned_difference(const PowerTrace& a, const PowerTrace& b) {
  if (a.empty() || b.empty()) return {};
  const double p = detail::grid_period(a);
  const double lo = std::max(a.samples.front().timestamp, b.samples.front().timestamp);
  const double hi = std::min(end_time(a, p), end_time(b, p));
  if (hi <= lo) return {};
  auto ra = resample(a, p, lo, hi);
  auto rb = resample(b, p, lo, hi);
  std::vector<double> out(ra.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ra.samples[i].watts - rb.samples[i].watts;
  return out;
}

inline double variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = detail::mean(v, 0, v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

// Re-estimates skew over consecutive windows of `interval_s`, emitting an
// estimate only when it moves by more than one sample period.
class DriftMonitor {
 public:
  explicit DriftMonitor(double interval_s, SkewOptions opt = {}) : interval_s_(interval_s), opt_(opt) {
    if (interval_s < 10.0) throw InvariantError("drift monitoring interval must be >= 10 s");
  }

  // Power and reference samples must arrive pairwise on a common grid.
  std::optional<SkewEstimate> push(const PowerSample& power, const PowerSample& reference) {
    if (power.timestamp != reference.timestamp) throw InvariantError("drift monitor inputs are not aligned");
    if (window_.power.empty()) window_.origin = power.timestamp;
    window_.power.push_back(power.watts);
    window_.reference.push_back(reference.watts);
    if (window_.power.size() >= 2 && window_.period == 0.0) window_.period = power.timestamp - last_t_;
    last_t_ = power.timestamp;
    if (window_.period <= 0.0) return std::nullopt;
    const double covered = static_cast<double>(window_.power.size()) * window_.period;
    if (covered + 1e-9 < interval_s_) return std::nullopt;

    std::optional<SkewEstimate> emitted;
    try {
      auto est = detail::estimate_aligned(window_, opt_);
      est.estimated_at = power.timestamp + window_.period;
      if (!last_ || std::abs(est.offset_s - last_->offset_s) > window_.period) {
        last_ = est;
        emitted = est;
      }
    } catch (const FlatSignalError&) {
      flat_ = true;
    }
    const double period = window_.period;
    window_ = {};
    window_.period = period;
    return emitted;
  }

  bool flat_signal_seen() const { return flat_; }
  const std::optional<SkewEstimate>& current() const { return last_; }

 private:
  double interval_s_;
  SkewOptions opt_;
  detail::AlignedPair window_;
  double last_t_ = 0.0;
  std::optional<SkewEstimate> last_;
  bool flat_ = false;
};

struct DriftReport {
  std::vector<SkewEstimate> estimates;
  bool flat_signal = false;
};

inline DriftReport monitor_drift(const PowerTrace& power, const PowerTrace& reference, double interval_s,
                                 SkewOptions opt = {}) {
  auto aligned = detail::align(power, reference);
  DriftMonitor monitor(interval_s, opt);
  DriftReport report;
  for (std::size_t i = 0; i < aligned.power.size(); ++i) {
    const double t = aligned.origin + static_cast<double>(i) * aligned.period;
    if (auto est = monitor.push({t, PowerSource::System, aligned.power[i]}, {t, PowerSource::Cpu, aligned.reference[i]})) {
      report.estimates.push_back(*est);
    }
  }
  report.flat_signal = monitor.flat_signal_seen();
  return report;
}

}  // namespace faasmeter::signal
