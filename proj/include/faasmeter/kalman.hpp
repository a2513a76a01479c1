#pragma once

// Online refinement of per-function power across fixed time steps.
//
//   U_i  = disaggregation of step i
//   Z    = mean over rows of (W_i - (C_i / delta) X_{i-1})
//   P_j  = alpha * P_prev_j + gamma / (1 + var_j(T))
//   K_j  = P_j A_j / (sum_k A_k^2 P_k + r)
//   P_prev_j = (1 - K_j A_j) P_j
//   X_j  = alpha X_j + beta U_j + K_j Z          (clamped >= 0)
//
// Functions that completed nothing in the step keep X and P untouched.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "faasmeter/disagg.hpp"
#include "faasmeter/error.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::kalman {

struct KalmanParams {
  double alpha = 0.8;
  double beta = 0.2;
  double gamma = 0.1;
  double p0 = 1.0;
  double r_scale = 1.0;  // r = r_scale / delta
  double delta = 1.0;
  double step_s = 60.0;
  double init_s = 100.0;
  double max_alpha_beta = 1.2;

  double r() const { return r_scale / delta; }

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
    };
    unit(alpha, "alpha");
    unit(beta, "beta");
    unit(gamma, "gamma");
    if (alpha + beta > max_alpha_beta) throw ConfigError("alpha + beta exceeds the configured bound");
    if (!(p0 >= 0.0)) throw ConfigError("p0 must be nonnegative");
    if (!(r_scale >= 0.0)) throw ConfigError("negative measurement noise r");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    if (!(step_s >= delta)) throw ConfigError("step must be at least one interval");
    if (!(init_s >= delta)) throw ConfigError("initial window must be at least one interval");
  }
};

// Running mean and variance (Welford).
struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

struct FunctionState {
  double x_hat = 0.0;
  double p = 0.0;
  double p_prev = 0.0;
  Welford latency;
};

struct KalmanState {
  std::map<std::string, FunctionState> functions;
  KalmanParams params;
  double t = 0.0;  // end of the last absorbed window

  std::optional<double> watts(const std::string& id) const {
    auto it = functions.find(id);
    if (it == functions.end()) return std::nullopt;
    return it->second.x_hat;
  }
  std::map<std::string, double> all_watts() const {
    std::map<std::string, double> out;
    for (const auto& [id, f] : functions) out[id] = f.x_hat;
    return out;
  }
};

// One step's worth of measurements.
struct StepInput {
  const disagg::ContributionMatrix* matrix = nullptr;
  Eigen::VectorXd target;  // mean watts per interval the footprints should explain
  disagg::Solution u;      // per-window disaggregation of `target`
  std::map<std::string, std::vector<double>> latencies;
};

namespace detail {

inline std::vector<double> activations(const disagg::ContributionMatrix& m) {
  std::vector<double> a(m.columns.size(), 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    if (m.columns[j].kind != disagg::ColumnKind::Function) continue;
    a[j] = m.A.col(static_cast<Eigen::Index>(j)).sum();
    total += a[j];
  }
  // shared principals serve every invocation
  for (std::size_t j = 0; j < m.columns.size(); ++j)
    if (m.columns[j].kind != disagg::ColumnKind::Function) a[j] = total;
  return a;
}

inline void check_input(const StepInput& in) {
  if (in.matrix == nullptr) throw InvariantError("Kalman step without a contribution matrix");
  const auto& m = *in.matrix;
  if (in.target.size() != m.rows()) throw InvariantError("dimension mismatch between C and W");
  if (in.u.x.size() != m.cols() || in.u.columns != m.columns) throw InvariantError("dimension mismatch between C and U");
}

}  // namespace detail

inline KalmanState empty_state(const KalmanParams& params) {
  params.validate();
  KalmanState s;
  s.params = params;
  return s;
}

// Seeds the state from the disaggregation of a long initial window.
inline KalmanState init_state(const StepInput& in, const KalmanParams& params) {
  auto s = empty_state(params);
  detail::check_input(in);
  const auto& m = *in.matrix;
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    if (!in.u.identifiable[j]) continue;
    auto& f = s.functions[m.columns[j].id];
    f.x_hat = in.u.x(static_cast<Eigen::Index>(j));
    f.p = f.p_prev = params.p0;
  }
  for (const auto& [id, lat] : in.latencies) {
    auto it = s.functions.find(id);
    if (it == s.functions.end()) continue;
    for (double v : lat) it->second.latency.push(v);
  }
  s.t = m.window.t1;
  return s;
}

// Warm start from footprints of an earlier profiling run.
inline KalmanState init_from_prior(const std::map<std::string, double>& watts, const KalmanParams& params) {
  auto s = empty_state(params);
  for (const auto& [id, w] : watts) {
    if (!(w >= 0.0)) throw InvariantError("prior footprint for '" + id + "' is negative");
    auto& f = s.functions[id];
    f.x_hat = w;
    f.p = f.p_prev = params.p0;
  }
  return s;
}

inline KalmanState kalman_step(KalmanState state, const StepInput& in) {
  detail::check_input(in);
  const auto& m = *in.matrix;
  const auto& prm = state.params;
  const auto a = detail::activations(m);
  const Eigen::MatrixXd f = disagg::fractions(m);

  // prior estimate per column; newcomers contribute their own U
  Eigen::VectorXd prior(m.cols());
  std::vector<bool> known(m.columns.size(), false);
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    auto it = state.functions.find(m.columns[j].id);
    known[j] = it != state.functions.end();
    prior(static_cast<Eigen::Index>(j)) = known[j] ? it->second.x_hat : in.u.x(static_cast<Eigen::Index>(j));
  }
  const double z = m.rows() > 0 ? (in.target - f * prior).mean() : 0.0;

  for (const auto& [id, lat] : in.latencies) {
    auto it = state.functions.find(id);
    if (it == state.functions.end()) continue;
    for (double v : lat) it->second.latency.push(v);
  }

  double denom = prm.r();
  std::vector<double> p_new(m.columns.size(), 0.0);
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    if (!known[j] || a[j] <= 0.0) continue;
    const auto& fs = state.functions.at(m.columns[j].id);
    p_new[j] = prm.alpha * fs.p_prev + prm.gamma / (1.0 + fs.latency.variance());
    denom += a[j] * a[j] * p_new[j];
  }

  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto& id = m.columns[j].id;
    if (!known[j]) {
      if (!in.u.identifiable[j]) continue;
      auto& fs = state.functions[id];
      fs.x_hat = in.u.x(jj);
      fs.p = fs.p_prev = prm.p0;
      auto lat = in.latencies.find(id);
      if (lat != in.latencies.end())
        for (double v : lat->second) fs.latency.push(v);
      continue;
    }
    if (a[j] <= 0.0) continue;
    auto& fs = state.functions.at(id);
    const double k = denom > 0.0 ? p_new[j] * a[j] / denom : 0.0;
    fs.p = p_new[j];
    fs.p_prev = std::max(0.0, (1.0 - k * a[j]) * p_new[j]);
    fs.x_hat = std::max(0.0, prm.alpha * fs.x_hat + prm.beta * in.u.x(jj) + k * z);
  }
  state.t = m.window.t1;
  return state;
}

// Innovation-driven part of a single update, for inspecting gain shaping.
inline double innovation_gain(const KalmanState& state, const disagg::ContributionMatrix& m, const std::string& id) {
  const auto a = detail::activations(m);
  const auto& prm = state.params;
  double denom = prm.r();
  double pj = 0.0, aj = 0.0;
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    auto it = state.functions.find(m.columns[j].id);
    if (it == state.functions.end() || a[j] <= 0.0) continue;
    const double p = prm.alpha * it->second.p_prev + prm.gamma / (1.0 + it->second.latency.variance());
    denom += a[j] * a[j] * p;
    if (m.columns[j].id == id) {
      pj = p;
      aj = a[j];
    }
  }
  return denom > 0.0 ? pj * aj / denom : 0.0;
}

// ---------------------------------------------------------------------------

enum class SolveMode { Full, NoIdle, Combined };

inline std::string_view to_string(SolveMode m) {
  switch (m) {
    case SolveMode::Full: return "full";
    case SolveMode::NoIdle: return "no-idle";
    case SolveMode::Combined: return "combined";
  }
  return "?";
}

struct OnlineInputs {
  const InvocationTrace* invocations = nullptr;
  const PowerTrace* system_power = nullptr;
  const PowerTrace* cpu_power = nullptr;
  const UtilizationTrace* utilization = nullptr;
  const CounterTrace* counters = nullptr;
  disagg::PrincipalSet principals;
  SolveMode mode = SolveMode::NoIdle;
  double idle_watts = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;  // 0: end of the system power trace
  std::map<std::string, double> prior;
};

struct FootprintPoint {
  double t = 0.0;
  std::string function_id;
  double watts = 0.0;
  double joules_per_invocation = 0.0;
  double p_variance = 0.0;
};

struct StepRecord {
  disagg::Window window;
  std::map<std::string, double> watts;
  std::map<std::string, double> activations;
  std::map<std::string, std::vector<double>> latencies;
  Eigen::VectorXd measured;   // W_sys per interval
  Eigen::VectorXd predicted;  // baseline + (C / delta) X
  double baseline_watts = 0.0;
  std::vector<disagg::Column> columns;
  Eigen::MatrixXd contributions;  // C of the window, seconds
  bool retrained = false;
};

struct OnlineResult {
  std::vector<FootprintPoint> series;
  std::vector<StepRecord> steps;
  KalmanState final_state;
  std::optional<disagg::PowerModelCpu> cpu_model;
};

namespace detail {

inline CounterTrace slice(const CounterTrace& c, const disagg::Window& w) {
  CounterTrace out;
  out.meta = c.meta;
  for (const auto& s : c.samples)
    if (s.timestamp >= w.t0 && s.timestamp < w.t1) out.samples.push_back(s);
  return out;
}

inline PowerTrace slice(const PowerTrace& p, const disagg::Window& w) {
  PowerTrace out;
  out.meta = p.meta;
  for (const auto& s : p.samples)
    if (s.timestamp >= w.t0 && s.timestamp < w.t1) out.samples.push_back(s);
  return out;
}

struct WindowSolve {
  disagg::ContributionMatrix matrix;
  Eigen::VectorXd measured;
  Eigen::VectorXd target;
  disagg::Solution u;
  std::map<std::string, std::vector<double>> latencies;
};

}  // namespace detail

// Disaggregates one window in the requested mode. The target is what the
// footprints explain: W for Full, W - idle otherwise.
inline detail::WindowSolve solve_window(const OnlineInputs& in, const disagg::Window& w, double delta,
                                        const disagg::PowerModelCpu* model) {
  detail::WindowSolve out;
  disagg::ContributionOptions opt;
  opt.delta = delta;
  opt.window = w;
  opt.principals = in.principals;
  out.matrix = disagg::build_contributions(*in.invocations, in.utilization, opt);
  out.measured = disagg::interval_power(*in.system_power, delta, w);
  out.matrix.W = out.measured;
  out.latencies = disagg::window_latencies(*in.invocations, w);
  switch (in.mode) {
    case SolveMode::Full:
      out.target = out.measured;
      out.u = disagg::solve_full(out.matrix, out.target);
      break;
    case SolveMode::NoIdle:
      out.target = disagg::subtract_idle(out.measured, in.idle_watts);
      out.u = disagg::solve_full(out.matrix, out.target);
      break;
    case SolveMode::Combined: {
      if (in.cpu_power == nullptr) throw InvariantError("combined mode requires a CPU power trace");
      if (in.counters == nullptr) throw InvariantError("combined mode requires a counter trace");
      out.target = disagg::subtract_idle(out.measured, in.idle_watts);
      const Eigen::VectorXd w_cpu = disagg::interval_power(*in.cpu_power, delta, w);
      auto comb = disagg::solve_combined(out.matrix, out.measured, w_cpu, *model, detail::slice(*in.counters, w),
                                         in.idle_watts);
      out.u = std::move(comb.total);
      break;
    }
  }
  return out;
}

inline double baseline_for(const OnlineInputs& in) { return in.mode == SolveMode::Full ? 0.0 : in.idle_watts; }

// Initial window, then steps of step_s until t1.
inline OnlineResult run_online(const OnlineInputs& in, const KalmanParams& params) {
  params.validate();
  if (in.invocations == nullptr || in.system_power == nullptr) throw InvariantError("online profiling needs invocations and system power");
  OnlineResult out;
  out.final_state = empty_state(params);
  if (in.system_power->empty()) return out;

  const double t1 = in.t1 > 0.0 ? in.t1 : end_time(*in.system_power, params.delta);
  const double t0 = in.t0;
  if (t1 - t0 < params.delta) return out;

  std::optional<disagg::PowerModelCpu> model;
  if (in.mode == SolveMode::Combined) {
    if (in.cpu_power == nullptr) throw InvariantError("combined mode requires a CPU power trace");
    if (in.counters == nullptr) throw InvariantError("combined mode requires a counter trace");
    model = disagg::train_cpu_model(*in.counters, *in.cpu_power);
  }

  auto record = [&](const detail::WindowSolve& ws, const KalmanState& s, bool retrained) {
    StepRecord rec;
    rec.window = ws.matrix.window;
    rec.measured = ws.measured;
    rec.baseline_watts = baseline_for(in);
    rec.columns = ws.matrix.columns;
    rec.contributions = ws.matrix.C;
    rec.latencies = ws.latencies;
    rec.retrained = retrained;
    Eigen::VectorXd x(ws.matrix.cols());
    for (std::size_t j = 0; j < ws.matrix.columns.size(); ++j) {
      auto v = s.watts(ws.matrix.columns[j].id);
      x(static_cast<Eigen::Index>(j)) = v ? *v : 0.0;
      const double a = ws.matrix.A.col(static_cast<Eigen::Index>(j)).sum();
      if (a > 0.0) rec.activations[ws.matrix.columns[j].id] = a;
    }
    rec.predicted = disagg::predicted_power(ws.matrix, x, rec.baseline_watts);
    rec.watts = s.all_watts();
    for (const auto& [id, f] : s.functions) {
      out.series.push_back({rec.window.t1, id, f.x_hat, f.x_hat * f.latency.mean, f.p});
    }
    out.steps.push_back(std::move(rec));
  };

  const double init_end = std::min(t1, t0 + params.init_s);
  auto init = solve_window(in, {t0, init_end}, params.delta, model ? &*model : nullptr);
  KalmanState state;
  if (!in.prior.empty()) {
    state = init_from_prior(in.prior, params);
    StepInput si{&init.matrix, init.target, init.u, init.latencies};
    state = kalman_step(std::move(state), si);
  } else {
    state = init_state({&init.matrix, init.target, init.u, init.latencies}, params);
  }
  record(init, state, false);

  for (double a = init_end; a + 1e-9 < t1; a += params.step_s) {
    const disagg::Window w{a, std::min(t1, a + params.step_s)};
    if (w.length() < params.delta) break;
    bool retrained = false;
    if (model) {
      const auto cslice = detail::slice(*in.counters, w);
      const auto pslice = detail::slice(*in.cpu_power, w);
      try {
        if (disagg::needs_retrain(*model, cslice, pslice)) {
          model = disagg::train_cpu_model(cslice, pslice);
          retrained = true;
        }
      } catch (const InvariantError&) {
        // too few samples in a short tail window; keep the current model
      }
    }
    auto ws = solve_window(in, w, params.delta, model ? &*model : nullptr);
    state = kalman_step(std::move(state), {&ws.matrix, ws.target, ws.u, ws.latencies});
    record(ws, state, retrained);
  }
  out.final_state = state;
  out.cpu_model = model;
  return out;
}

}  // namespace faasmeter::kalman
