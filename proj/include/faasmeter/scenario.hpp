#pragma once

// Scenario files: workload + hidden truth + synthesis and profiling options,
// as one JSON document. Unknown keys are rejected with their full path.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faasmeter/disagg.hpp"
#include "faasmeter/error.hpp"
#include "faasmeter/kalman.hpp"
#include "faasmeter/simulator.hpp"

namespace faasmeter {

enum class CapMode { FootprintAware, BufferOnly };

struct CapConfig {
  double cap_watts = 0.0;  // 0: not configured
  double horizon_s = 1.0;
  CapMode mode = CapMode::FootprintAware;
  double buffer_watts = 20.0;
};

struct ProfileConfig {
  kalman::SolveMode mode = kalman::SolveMode::Combined;
  double delta_s = 1.0;
  disagg::PrincipalSet principals;
  std::optional<double> idle_watts;  // unset: calibrate from an idle run
  bool correct_skew = true;
  double skew_bound_s = 5.0;
  double drift_interval_s = 120.0;
  bool online = false;
  double window_s = 60.0;
  kalman::KalmanParams kalman;
};

struct Scenario {
  std::string id;
  sim::WorkloadSpec workload;
  sim::GroundTruth truth;
  sim::SynthesisOptions synthesis;
  ProfileConfig profile;
  CapConfig cap;
};

namespace detail {

// Walks a JSON object, remembering which keys were read.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  void mark(const std::string& key) { seen_.insert(key); }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  double number(const std::string& key, double fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key) + ": expected a number");
    return v.get<double>();
  }
  double number(const std::string& key) {
    if (!has(key)) throw ConfigError(at(key) + ": required key missing");
    return number(key, 0.0);
  }
  std::optional<double> optional_number(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return number(key, 0.0);
  }
  double nonnegative(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v >= 0.0)) throw ConfigError(at(key) + ": must be >= 0");
    return v;
  }
  double positive(const std::string& key, double fallback) {
    const double v = number(key, fallback);
    if (!(v > 0.0)) throw ConfigError(at(key) + ": must be > 0");
    return v;
  }
  std::uint64_t unsigned_int(const std::string& key, std::uint64_t fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key) + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string string(const std::string& key) {
    if (!has(key)) throw ConfigError(at(key) + ": required key missing");
    return string(key, "");
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(at(it.key()) + ": unknown key");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline sim::IatKind parse_iat_kind(const std::string& s, const std::string& where) {
  if (s == "constant") return sim::IatKind::Constant;
  if (s == "exponential") return sim::IatKind::Exponential;
  if (s == "lognormal") return sim::IatKind::Lognormal;
  if (s == "bursty") return sim::IatKind::Bursty;
  throw ConfigError(where + ": unknown IAT kind '" + s + "'");
}

inline std::string_view to_string(sim::IatKind k) {
  switch (k) {
    case sim::IatKind::Constant: return "constant";
    case sim::IatKind::Exponential: return "exponential";
    case sim::IatKind::Lognormal: return "lognormal";
    case sim::IatKind::Bursty: return "bursty";
  }
  return "?";
}

}  // namespace detail

inline kalman::SolveMode parse_mode(const std::string& s) {
  if (s == "full") return kalman::SolveMode::Full;
  if (s == "no-idle") return kalman::SolveMode::NoIdle;
  if (s == "combined") return kalman::SolveMode::Combined;
  throw ConfigError("unknown mode '" + s + "' (expected full, no-idle or combined)");
}

inline CapMode parse_cap_mode(const std::string& s) {
  if (s == "footprint") return CapMode::FootprintAware;
  if (s == "buffer") return CapMode::BufferOnly;
  throw ConfigError("unknown cap mode '" + s + "' (expected footprint or buffer)");
}

inline disagg::PrincipalSet parse_principals(const std::vector<std::string>& names) {
  disagg::PrincipalSet p;
  for (const auto& n : names) {
    if (n == "cp") p.control_plane = true;
    else if (n == "os") p.os = true;
    else if (n == "none" || n.empty()) continue;
    else throw ConfigError("unknown principal '" + n + "' (expected cp or os)");
  }
  return p;
}

inline kalman::KalmanParams parse_kalman(const nlohmann::json& j, const std::string& path, double delta) {
  detail::ObjectReader r(j, path);
  kalman::KalmanParams k;
  k.alpha = r.number("alpha", k.alpha);
  k.beta = r.number("beta", k.beta);
  k.gamma = r.number("gamma", k.gamma);
  k.p0 = r.number("p0", k.p0);
  k.r_scale = r.number("r_scale", k.r_scale);
  k.step_s = r.positive("step_s", k.step_s);
  k.init_s = r.positive("init_s", k.init_s);
  k.max_alpha_beta = r.positive("max_alpha_beta", k.max_alpha_beta);
  k.delta = delta;
  r.finish();
  try {
    k.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return k;
}

inline ProfileConfig parse_profile(const nlohmann::json& j, const std::string& path) {
  detail::ObjectReader r(j, path);
  ProfileConfig p;
  try {
    p.mode = parse_mode(r.string("mode", "combined"));
  } catch (const ConfigError& e) {
    throw ConfigError(r.at("mode") + ": " + e.what());
  }
  p.delta_s = r.positive("delta_s", p.delta_s);
  if (r.has("principals")) {
    const auto& v = r.raw("principals");
    if (!v.is_array()) throw ConfigError(r.at("principals") + ": expected an array");
    try {
      p.principals = parse_principals(v.get<std::vector<std::string>>());
    } catch (const std::exception& e) {
      throw ConfigError(r.at("principals") + ": " + e.what());
    }
  } else {
    r.mark("principals");
  }
  p.idle_watts = r.optional_number("idle_watts");
  if (p.idle_watts && *p.idle_watts < 0.0) throw ConfigError(r.at("idle_watts") + ": must be >= 0");
  p.correct_skew = r.boolean("correct_skew", p.correct_skew);
  p.skew_bound_s = r.positive("skew_bound_s", p.skew_bound_s);
  p.drift_interval_s = r.number("drift_interval_s", p.drift_interval_s);
  if (p.drift_interval_s < 10.0) throw ConfigError(r.at("drift_interval_s") + ": must be >= 10");
  p.online = r.boolean("online", p.online);
  p.window_s = r.positive("window_s", p.window_s);
  if (r.has("kalman")) p.kalman = parse_kalman(r.raw("kalman"), r.at("kalman"), p.delta_s);
  else r.mark("kalman");
  p.kalman.delta = p.delta_s;
  r.finish();
  return p;
}

inline Scenario parse_scenario(const nlohmann::json& j) {
  detail::ObjectReader r(j, "scenario");
  Scenario s;
  s.id = r.string("id");
  faasmeter::detail::check_identifier(s.id);
  s.workload.seed = r.unsigned_int("seed", 0);
  s.workload.duration_s = r.positive("duration_s", 0.0);
  if (!r.has("functions")) throw ConfigError(r.at("functions") + ": required key missing");
  const auto& fns = r.raw("functions");
  if (!fns.is_array() || fns.empty()) throw ConfigError(r.at("functions") + ": expected a nonempty array");

  for (std::size_t i = 0; i < fns.size(); ++i) {
    const std::string path = r.at("functions") + "[" + std::to_string(i) + "]";
    detail::ObjectReader f(fns[i], path);
    sim::FunctionSpec spec;
    spec.id = f.string("id");
    try {
      faasmeter::detail::check_identifier(spec.id);
    } catch (const std::exception& e) {
      throw ConfigError(f.at("id") + ": " + e.what());
    }
    spec.mean_latency_s = f.positive("mean_latency_s", 0.0);
    spec.latency_cov = f.nonnegative("latency_cov", 0.0);
    spec.start_s = f.nonnegative("start_s", 0.0);
    spec.end_s = f.number("end_s", std::numeric_limits<double>::infinity());
    if (!f.has("watts")) throw ConfigError(f.at("watts") + ": required key missing");
    const double watts = f.nonnegative("watts", 0.0);
    s.truth.per_function_watts[spec.id] = watts;
    if (f.has("cpu_percent")) s.synthesis.function_cpu_percent[spec.id] = f.nonnegative("cpu_percent", 100.0);
    else f.mark("cpu_percent");
    if (f.has("concurrency_discount"))
      s.synthesis.concurrency_discount[spec.id] = f.nonnegative("concurrency_discount", 0.0);
    else f.mark("concurrency_discount");
    if (!f.has("iat")) throw ConfigError(f.at("iat") + ": required key missing");
    detail::ObjectReader iat(f.raw("iat"), f.at("iat"));
    spec.iat.kind = detail::parse_iat_kind(iat.string("kind", "exponential"), iat.at("kind"));
    spec.iat.mean_s = iat.positive("mean_s", 1.0);
    spec.iat.cov = iat.nonnegative("cov", 1.0);
    spec.iat.on_s = iat.nonnegative("on_s", 0.0);
    spec.iat.off_s = iat.nonnegative("off_s", 0.0);
    spec.iat.phase_s = iat.nonnegative("phase_s", 0.0);
    iat.finish();
    f.finish();
    for (const auto& other : s.workload.functions)
      if (other.id == spec.id) throw ConfigError(f.at("id") + ": duplicate function id '" + spec.id + "'");
    s.workload.functions.push_back(spec);
  }

  if (r.has("truth")) {
    detail::ObjectReader t(r.raw("truth"), r.at("truth"));
    s.truth.idle_watts = t.nonnegative("idle_watts", 0.0);
    s.truth.control_plane_joules_per_invocation = t.nonnegative("control_plane_joules_per_invocation", 0.0);
    s.truth.noise_std_watts = t.nonnegative("noise_std_watts", 0.0);
    s.truth.quantization_step_watts = t.nonnegative("quantization_step_watts", 0.0);
    s.truth.injected_skew_s = t.number("injected_skew_s", 0.0);
    t.finish();
  } else {
    r.mark("truth");
  }

  if (r.has("synthesis")) {
    auto& o = s.synthesis;
    detail::ObjectReader y(r.raw("synthesis"), r.at("synthesis"));
    o.period_s = y.positive("period_s", o.period_s);
    o.concurrency_cap = static_cast<std::size_t>(y.unsigned_int("concurrency_cap", 0));
    o.cpu_fraction = y.nonnegative("cpu_fraction", o.cpu_fraction);
    if (o.cpu_fraction > 1.0) throw ConfigError(y.at("cpu_fraction") + ": must be <= 1");
    o.cp_window_s = y.positive("cp_window_s", o.cp_window_s);
    o.cpu_noise_std_watts = y.nonnegative("cpu_noise_std_watts", o.cpu_noise_std_watts);
    o.horizon_s = y.nonnegative("horizon_s", o.horizon_s);
    o.cp_cpu_percent = y.nonnegative("cp_cpu_percent", o.cp_cpu_percent);
    o.os_cpu_percent = y.nonnegative("os_cpu_percent", o.os_cpu_percent);
    o.cores = static_cast<int>(y.unsigned_int("cores", static_cast<std::uint64_t>(o.cores)));
    if (o.cores < 1) throw ConfigError(y.at("cores") + ": must be >= 1");
    o.counter_noise_cov = y.nonnegative("counter_noise_cov", o.counter_noise_cov);
    o.emit_cpu = y.boolean("emit_cpu", o.emit_cpu);
    o.emit_counters = y.boolean("emit_counters", o.emit_counters);
    if (y.has("skew_schedule")) {
      const auto& arr = y.raw("skew_schedule");
      if (!arr.is_array()) throw ConfigError(y.at("skew_schedule") + ": expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        detail::ObjectReader st(arr[i], y.at("skew_schedule") + "[" + std::to_string(i) + "]");
        o.skew_schedule.push_back({st.nonnegative("from_s", 0.0), st.number("skew_s", 0.0)});
        st.finish();
      }
    } else {
      y.mark("skew_schedule");
    }
    y.finish();
  } else {
    r.mark("synthesis");
  }

  if (r.has("profile")) s.profile = parse_profile(r.raw("profile"), r.at("profile"));
  else r.mark("profile");

  if (r.has("cap")) {
    detail::ObjectReader c(r.raw("cap"), r.at("cap"));
    s.cap.cap_watts = c.nonnegative("cap_watts", 0.0);
    s.cap.horizon_s = c.positive("horizon_s", s.cap.horizon_s);
    try {
      s.cap.mode = parse_cap_mode(c.string("mode", "footprint"));
    } catch (const ConfigError& e) {
      throw ConfigError(c.at("mode") + ": " + e.what());
    }
    s.cap.buffer_watts = c.nonnegative("buffer_watts", s.cap.buffer_watts);
    c.finish();
  } else {
    r.mark("cap");
  }
  r.finish();

  try {
    sim::validate(s.workload);
    sim::validate(s.truth);
  } catch (const InvariantError& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  for (const auto& step : s.synthesis.skew_schedule)
    if (std::abs(step.skew_s) > 10.0) throw ConfigError("scenario.synthesis.skew_schedule: skew bounded by +-10 s");
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_scenario(j);
}

// Truth as written next to simulated traces.
inline nlohmann::json truth_to_json(const sim::GroundTruth& t, const std::map<std::string, double>& footprints) {
  nlohmann::json j;
  j["idle_watts"] = t.idle_watts;
  j["per_function_watts"] = t.per_function_watts;
  j["control_plane_joules_per_invocation"] = t.control_plane_joules_per_invocation;
  j["noise_std_watts"] = t.noise_std_watts;
  j["quantization_step_watts"] = t.quantization_step_watts;
  j["injected_skew_s"] = t.injected_skew_s;
  j["individual_footprints_joules"] = footprints;
  return j;
}

}  // namespace faasmeter
