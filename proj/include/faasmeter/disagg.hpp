#pragma once

// Statistical power disaggregation.
//
// Time is cut into N intervals of width delta. C[i][j] holds the seconds
// principal j ran during interval i and W[i] the mean measured power. Per
// principal power X is the nonnegative least-squares fit of (C / delta) X = W.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "faasmeter/error.hpp"
#include "faasmeter/nnls.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::disagg {

struct Window {
  double t0 = 0.0;
  double t1 = 0.0;
  double length() const { return t1 - t0; }
  bool operator==(const Window&) const = default;
};

enum class ColumnKind { Function, ControlPlane, Os };

struct Column {
  std::string id;
  ColumnKind kind = ColumnKind::Function;
  bool operator==(const Column&) const = default;
};

inline constexpr const char* kControlPlaneColumn = "@control_plane";
inline constexpr const char* kOsColumn = "@os";

struct PrincipalSet {
  bool control_plane = false;
  bool os = false;
};

struct ContributionMatrix {
  double delta = 1.0;
  Window window;
  std::vector<Column> columns;
  Eigen::MatrixXd C;  // seconds of running time, N x M
  Eigen::MatrixXd A;  // invocations completed, N x M
  Eigen::VectorXd W;  // mean watts per interval; empty until attached

  Eigen::Index rows() const { return C.rows(); }
  Eigen::Index cols() const { return C.cols(); }
  double interval_start(Eigen::Index i) const { return window.t0 + static_cast<double>(i) * delta; }

  std::optional<Eigen::Index> index_of(const std::string& id) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].id == id) return static_cast<Eigen::Index>(j);
    return std::nullopt;
  }
};

struct ContributionOptions {
  double delta = 1.0;
  Window window;
  PrincipalSet principals;
  // Functions that get a column even without activity in the window.
  std::vector<std::string> always_include;
};

namespace detail {

inline Eigen::Index interval_count(const Window& w, double delta) {
  return static_cast<Eigen::Index>(std::ceil(w.length() / delta - 1e-9));
}

// Mean over interval i of a utilization principal (time-weighted by sample spacing).
inline std::vector<double> principal_series(const UtilizationTrace& util, Principal principal, const Window& w,
                                            double delta, Eigen::Index n) {
  PowerTrace as_power;
  as_power.meta = util.meta;
  for (const auto& s : util.samples)
    if (s.principal == principal) as_power.samples.push_back({s.timestamp, PowerSource::System, s.cpu_percent});
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  if (as_power.empty()) return out;
  auto r = resample(as_power, delta, w.t0, w.t0 + static_cast<double>(n) * delta);
  for (std::size_t i = 0; i < out.size() && i < r.size(); ++i) out[i] = r.samples[i].watts;
  return out;
}

}  // namespace detail

// Function columns are ordered by id; shared principals follow.
inline ContributionMatrix build_contributions(const InvocationTrace& invocations, const UtilizationTrace* utilization,
                                              const ContributionOptions& opt) {
  if (!(opt.delta > 0.0)) throw InvariantError("interval width delta must be positive");
  if (!(opt.window.t1 > opt.window.t0)) throw InvariantError("empty disaggregation window");
  if ((opt.principals.control_plane || opt.principals.os) && (utilization == nullptr || utilization->empty())) {
    throw InvariantError("shared-principal columns require a utilization trace");
  }
  const auto& w = opt.window;
  const Eigen::Index n = detail::interval_count(w, opt.delta);

  std::set<std::string> ids(opt.always_include.begin(), opt.always_include.end());
  for (const auto& r : invocations.samples)
    if (r.end > w.t0 && r.start < w.t1) ids.insert(r.function_id);

  ContributionMatrix m;
  m.delta = opt.delta;
  m.window = w;
  for (const auto& id : ids) m.columns.push_back({id, ColumnKind::Function});
  if (opt.principals.control_plane) m.columns.push_back({kControlPlaneColumn, ColumnKind::ControlPlane});
  if (opt.principals.os) m.columns.push_back({kOsColumn, ColumnKind::Os});

  const auto cols = static_cast<Eigen::Index>(m.columns.size());
  m.C = Eigen::MatrixXd::Zero(n, cols);
  m.A = Eigen::MatrixXd::Zero(n, cols);

  std::map<std::string, Eigen::Index> col_of;
  for (Eigen::Index j = 0; j < cols; ++j) col_of[m.columns[static_cast<std::size_t>(j)].id] = j;

  for (const auto& r : invocations.samples) {
    if (!(r.end > w.t0 && r.start < w.t1)) continue;
    const Eigen::Index j = col_of.at(r.function_id);
    const auto first = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor((r.start - w.t0) / opt.delta)));
    for (Eigen::Index i = first; i < n; ++i) {
      const double lo = m.interval_start(i);
      const double hi = std::min(lo + opt.delta, w.t1);
      if (lo >= r.end) break;
      const double ov = std::min(r.end, hi) - std::max(r.start, lo);
      if (ov > 0.0) m.C(i, j) += ov;
    }
    if (r.end >= w.t0 && r.end < w.t1) {
      const auto i = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(std::floor((r.end - w.t0) / opt.delta)));
      m.A(i, j) += 1.0;
    }
  }

  auto shared_column = [&](Principal principal, const char* id) {
    const Eigen::Index j = col_of.at(id);
    auto share = detail::principal_series(*utilization, principal, w, opt.delta, n);
    auto system = detail::principal_series(*utilization, Principal::SystemWide, w, opt.delta, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sys = system[static_cast<std::size_t>(i)];
      const double c = sys > 0.0 ? share[static_cast<std::size_t>(i)] / sys * opt.delta : 0.0;
      m.C(i, j) = std::clamp(c, 0.0, opt.delta);
    }
  };
  if (opt.principals.control_plane) shared_column(Principal::ControlPlane, kControlPlaneColumn);
  if (opt.principals.os) shared_column(Principal::Os, kOsColumn);
  return m;
}

// Mean watts per interval of the window.
inline Eigen::VectorXd interval_power(const PowerTrace& power, double delta, const Window& w) {
  const Eigen::Index n = detail::interval_count(w, delta);
  auto r = resample(power, delta, w.t0, w.t0 + static_cast<double>(n) * delta);
  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = r.samples[static_cast<std::size_t>(i)].watts;
  return out;
}

inline void attach_power(ContributionMatrix& m, const PowerTrace& power) {
  m.W = interval_power(power, m.delta, m.window);
}

// Latencies of invocations completing inside the window, per function.
inline std::map<std::string, std::vector<double>> window_latencies(const InvocationTrace& invocations, const Window& w) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& r : invocations.samples)
    if (r.end >= w.t0 && r.end < w.t1) out[r.function_id].push_back(r.latency());
  return out;
}

inline std::map<std::string, double> mean_latency(const std::map<std::string, std::vector<double>>& latencies) {
  std::map<std::string, double> out;
  for (const auto& [id, v] : latencies) {
    double s = 0.0;
    for (double x : v) s += x;
    if (!v.empty()) out[id] = s / static_cast<double>(v.size());
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Solution {
  std::vector<Column> columns;
  Eigen::VectorXd x;               // watts per column
  std::vector<bool> identifiable;  // false for all-zero columns
  bool degenerate = false;         // active submatrix rank deficient
  double residual_norm = 0.0;

  std::optional<double> watts(const std::string& id) const {
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].id == id) return x(static_cast<Eigen::Index>(j));
    return std::nullopt;
  }

  std::map<std::string, double> function_watts() const {
    std::map<std::string, double> out;
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j].kind == ColumnKind::Function) out[columns[j].id] = x(static_cast<Eigen::Index>(j));
    return out;
  }
};

// NNLS over the nonzero columns of `design`. On rank deficiency the
// minimum-norm least-squares solution is preferred when it is nonnegative.
inline Solution solve_design(const Eigen::MatrixXd& design, const Eigen::VectorXd& target,
                             std::vector<Column> columns) {
  if (design.rows() != target.size()) throw InvariantError("contribution rows and power samples differ in length");
  Solution sol;
  sol.columns = std::move(columns);
  const Eigen::Index m = design.cols();
  sol.x = Eigen::VectorXd::Zero(m);
  sol.identifiable.assign(static_cast<std::size_t>(m), false);

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (design.col(j).cwiseAbs().maxCoeff() > 0.0) {
      active.push_back(j);
      sol.identifiable[static_cast<std::size_t>(j)] = true;
    }
  }
  if (active.empty()) {
    sol.residual_norm = target.norm();
    return sol;
  }
  Eigen::MatrixXd sub(design.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t k = 0; k < active.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = design.col(active[k]);

  auto nn = linalg::nnls(sub, target);
  Eigen::VectorXd z = nn.x;

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(sub);
  if (cod.rank() < sub.cols()) {
    sol.degenerate = true;
    Eigen::VectorXd min_norm = cod.solve(target);
    const double tol = 1e-9 * std::max(1.0, min_norm.cwiseAbs().maxCoeff());
    const double r_nn = (sub * z - target).norm();
    const double r_mn = (sub * min_norm - target).norm();
    if (min_norm.minCoeff() >= -tol && r_mn <= r_nn * (1.0 + 1e-9) + 1e-12) z = min_norm.cwiseMax(0.0);
  }
  for (std::size_t k = 0; k < active.size(); ++k) sol.x(active[k]) = z(static_cast<Eigen::Index>(k));
  sol.residual_norm = (design * sol.x - target).norm();
  return sol;
}

inline Eigen::MatrixXd fractions(const ContributionMatrix& m) { return m.C / m.delta; }

inline Solution solve_full(const ContributionMatrix& m, const Eigen::VectorXd& w) {
  return solve_design(fractions(m), w, m.columns);
}

inline Solution solve_full(const ContributionMatrix& m) {
  if (m.W.size() != m.rows()) throw InvariantError("contribution matrix has no attached power");
  return solve_full(m, m.W);
}

inline Eigen::VectorXd subtract_idle(const Eigen::VectorXd& w, double idle_watts) {
  return (w.array() - idle_watts).cwiseMax(0.0).matrix();
}

inline Solution solve_no_idle(const ContributionMatrix& m, const Eigen::VectorXd& w, double idle_watts) {
  return solve_full(m, subtract_idle(w, idle_watts));
}

inline Solution solve_no_idle(const ContributionMatrix& m, double idle_watts) {
  if (m.W.size() != m.rows()) throw InvariantError("contribution matrix has no attached power");
  return solve_no_idle(m, m.W, idle_watts);
}

// Predicted mean power per interval: baseline + (C / delta) X.
inline Eigen::VectorXd predicted_power(const ContributionMatrix& m, const Eigen::VectorXd& x, double baseline_watts) {
  return (fractions(m) * x).array() + baseline_watts;
}

// ---------------------------------------------------------------------------
// CPU power model over normalized performance counters.

using CounterFeatures = Eigen::Vector4d;

// Linear map from normalized counters to watts. The intercept is the CPU
// baseline; it is not attributed to any single function.
struct PowerModelCpu {
  CounterFeatures weights = CounterFeatures::Zero();
  double intercept = 0.0;
  double trained_at = 0.0;
  double training_error = 0.0;
  std::size_t samples = 0;

  double predict_function(const CounterFeatures& s) const {
    if (s.isZero(0.0)) return 0.0;
    return std::max(0.0, weights.dot(s));
  }
  double predict_total(const CounterFeatures& s_sum) const { return std::max(0.0, weights.dot(s_sum) + intercept); }
};

inline constexpr double kRetrainThreshold = 0.05;
inline constexpr std::size_t kMinTrainingSamples = 30;

// Normalized counters of one sampling interval.
struct NormalizedInterval {
  double timestamp = 0.0;
  std::map<std::string, CounterFeatures> functions;  // concurrent containers summed
  CounterFeatures total = CounterFeatures::Zero();
};

inline std::int64_t time_key(double t) { return std::llround(t * 1e6); }

// Groups counter rows per timestamp, sums containers of the same function and
// divides by the system-wide counters of that timestamp (0/0 -> 0).
inline std::vector<NormalizedInterval> normalize_counters(const CounterTrace& function_counters,
                                                          const CounterTrace& system_counters) {
  std::map<std::int64_t, CounterVector> system;
  for (const auto& s : system_counters.samples)
    if (s.function_id == kSystemCounterId) system[time_key(s.timestamp)] = s.counters;

  std::map<std::int64_t, std::pair<double, std::map<std::string, std::array<double, 4>>>> raw;
  for (const auto& s : system_counters.samples)
    if (s.function_id == kSystemCounterId) raw[time_key(s.timestamp)].first = s.timestamp;
  for (const auto& s : function_counters.samples) {
    if (s.function_id == kSystemCounterId) continue;
    auto& slot = raw[time_key(s.timestamp)];
    slot.first = s.timestamp;
    auto& acc = slot.second[s.function_id];
    for (std::size_t k = 0; k < 4; ++k) acc[k] += static_cast<double>(s.counters[k]);
  }

  std::vector<NormalizedInterval> out;
  out.reserve(raw.size());
  for (const auto& [key, slot] : raw) {
    NormalizedInterval iv;
    iv.timestamp = slot.first;
    auto sys = system.find(key);
    for (const auto& [id, acc] : slot.second) {
      CounterFeatures s = CounterFeatures::Zero();
      for (int k = 0; k < 4; ++k) {
        const double num = acc[static_cast<std::size_t>(k)];
        const double den = sys == system.end() ? 0.0 : static_cast<double>(sys->second[static_cast<std::size_t>(k)]);
        if (num == 0.0) continue;
        if (den == 0.0) {
          throw InvariantError("zero system-wide counters at t=" + faasmeter::detail::format_number(slot.first) +
                               " while function '" + id + "' has activity");
        }
        s(k) = num / den;
      }
      iv.functions[id] = s;
      iv.total += s;
    }
    out.push_back(std::move(iv));
  }
  return out;
}

inline CounterTrace system_rows(const CounterTrace& counters) {
  CounterTrace out;
  out.meta = counters.meta;
  for (const auto& s : counters.samples)
    if (s.function_id == kSystemCounterId) out.samples.push_back(s);
  return out;
}

namespace detail {

inline std::vector<std::pair<CounterFeatures, double>> training_pairs(const std::vector<NormalizedInterval>& intervals,
                                                                      const PowerTrace& cpu_power) {
  std::map<std::int64_t, double> cpu;
  for (const auto& s : cpu_power.samples)
    if (s.source == PowerSource::Cpu || cpu_power.samples.front().source == s.source) cpu[time_key(s.timestamp)] = s.watts;
  std::vector<std::pair<CounterFeatures, double>> pairs;
  for (const auto& iv : intervals) {
    auto it = cpu.find(time_key(iv.timestamp));
    if (it != cpu.end()) pairs.emplace_back(iv.total, it->second);
  }
  return pairs;
}

inline double relative_error(const PowerModelCpu& model, const std::vector<std::pair<CounterFeatures, double>>& pairs) {
  double abs_err = 0.0, total = 0.0;
  for (const auto& [s, y] : pairs) {
    abs_err += std::abs(model.predict_total(s) - y);
    total += std::abs(y);
  }
  return total > 0.0 ? abs_err / total : (abs_err > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
}

}  // namespace detail

// Least-squares fit of cpu_power[t] = w . sum_j S_j[t] + b.
inline PowerModelCpu train_cpu_model(const CounterTrace& function_counters, const PowerTrace& cpu_power,
                                     const CounterTrace& system_counters) {
  auto pairs = detail::training_pairs(normalize_counters(function_counters, system_counters), cpu_power);
  if (pairs.size() < kMinTrainingSamples) {
    throw InvariantError("CPU model needs at least " + std::to_string(kMinTrainingSamples) +
                         " aligned samples, got " + std::to_string(pairs.size()));
  }
  const auto n = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd x(n, 5);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.block<1, 4>(i, 0) = pairs[static_cast<std::size_t>(i)].first.transpose();
    x(i, 4) = 1.0;
    y(i) = pairs[static_cast<std::size_t>(i)].second;
  }
  // Column scaling keeps the minimum-norm solve well conditioned.
  Eigen::VectorXd scale = x.cwiseAbs().colwise().maxCoeff().transpose();
  for (Eigen::Index k = 0; k < 5; ++k)
    if (scale(k) == 0.0) scale(k) = 1.0;
  Eigen::VectorXd beta = (x * scale.cwiseInverse().asDiagonal()).completeOrthogonalDecomposition().solve(y);
  beta = beta.cwiseQuotient(scale);

  PowerModelCpu model;
  model.weights = beta.head<4>();
  model.intercept = beta(4);
  model.samples = pairs.size();
  model.trained_at = cpu_power.empty() ? 0.0 : cpu_power.samples.back().timestamp;
  model.training_error = detail::relative_error(model, pairs);
  return model;
}

inline PowerModelCpu train_cpu_model(const CounterTrace& counters, const PowerTrace& cpu_power) {
  return train_cpu_model(counters, cpu_power, counters);
}

// Relative error of the summed prediction against observed CPU power.
inline double model_error(const PowerModelCpu& model, const CounterTrace& counters, const PowerTrace& cpu_power) {
  auto pairs = detail::training_pairs(normalize_counters(counters, counters), cpu_power);
  if (pairs.empty()) throw InvariantError("no counter samples align with the CPU power trace");
  return detail::relative_error(model, pairs);
}

inline bool needs_retrain(const PowerModelCpu& model, const CounterTrace& counters, const PowerTrace& cpu_power,
                          double threshold = kRetrainThreshold) {
  return model_error(model, counters, cpu_power) > threshold;
}

// Per-function CPU power per counter interval: function id -> (timestamp -> watts).
using CpuPowerSeries = std::map<std::string, std::map<std::int64_t, double>>;

inline CpuPowerSeries predict_cpu_power(const PowerModelCpu& model, const CounterTrace& function_counters,
                                        const CounterTrace& system_counters) {
  CpuPowerSeries out;
  for (const auto& iv : normalize_counters(function_counters, system_counters)) {
    for (const auto& [id, s] : iv.functions) out[id][time_key(iv.timestamp)] = model.predict_function(s);
  }
  return out;
}

inline CpuPowerSeries predict_cpu_power(const PowerModelCpu& model, const CounterTrace& counters) {
  return predict_cpu_power(model, counters, counters);
}

inline double counter_period(const CounterTrace& counters) {
  if (counters.meta.nominal_period_s > 0.0) return counters.meta.nominal_period_s;
  double last = std::numeric_limits<double>::quiet_NaN();
  for (const auto& s : counters.samples) {
    if (s.function_id != kSystemCounterId) continue;
    if (!std::isnan(last) && s.timestamp > last) return s.timestamp - last;
    last = s.timestamp;
  }
  throw InvariantError("cannot determine the counter sampling period");
}

// CPU joules per function over the window.
inline std::map<std::string, double> cpu_energy(const CpuPowerSeries& series, double period, const Window& w) {
  std::map<std::string, double> out;
  const auto lo = time_key(w.t0), hi = time_key(w.t1);
  for (const auto& [id, points] : series) {
    double e = 0.0;
    for (auto it = points.lower_bound(lo); it != points.end() && it->first < hi; ++it) e += it->second * period;
    out[id] = e;
  }
  return out;
}

struct CombinedSolution {
  Solution total;  // X_CPU + X_Rest
  Solution rest;
  std::map<std::string, double> cpu_watts;  // X_CPU per function (while running)
};

// Combined mode: X = X_CPU + X_Rest, where X_CPU comes from the counter model and
// X_Rest disaggregates W_sys - W_cpu (minus the non-CPU idle when given).
inline CombinedSolution solve_combined(const ContributionMatrix& m, const Eigen::VectorXd& w_sys,
                                       const Eigen::VectorXd& w_cpu, const PowerModelCpu& model,
                                       const CounterTrace& counters, std::optional<double> rest_idle_watts = {}) {
  if (w_sys.size() != m.rows() || w_cpu.size() != m.rows()) {
    throw InvariantError("combined mode needs system and CPU power on the contribution grid");
  }
  Eigen::VectorXd w_rest = (w_sys - w_cpu).cwiseMax(0.0);
  CombinedSolution out;
  out.rest = rest_idle_watts ? solve_no_idle(m, w_rest, *rest_idle_watts) : solve_full(m, w_rest);

  const auto series = counters.empty() ? CpuPowerSeries{} : predict_cpu_power(model, counters);
  const double period = counters.empty() ? m.delta : counter_period(counters);
  const auto energy = cpu_energy(series, period, m.window);

  out.total = out.rest;
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    if (m.columns[j].kind != ColumnKind::Function) continue;
    const auto jj = static_cast<Eigen::Index>(j);
    const double running = m.C.col(jj).sum();
    auto e = energy.find(m.columns[j].id);
    const double x_cpu = (running > 0.0 && e != energy.end()) ? e->second / running : 0.0;
    out.cpu_watts[m.columns[j].id] = x_cpu;
    out.total.x(jj) += x_cpu;
  }
  out.total.residual_norm = out.rest.residual_norm;
  return out;
}

}  // namespace faasmeter::disagg
