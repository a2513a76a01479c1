#pragma once

// Canonical trace types (power, invocations, utilization, counters) and their
// CSV/JSON-sidecar serialization.
//
// Every trace is a plain value: a vector of samples plus a TraceMeta. Readers
// validate the type invariants and reject out-of-order rows; writers emit the
// shortest round-trip decimal representation so read(write(t)) == t.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include <json.hpp>

#include "faasmeter/error.hpp"

namespace faasmeter {

enum class PowerSource { System, Cpu, Rest };
enum class Principal { ControlPlane, Os, SystemWide };

inline std::string_view to_string(PowerSource s) {
  switch (s) {
    case PowerSource::System: return "system";
    case PowerSource::Cpu: return "cpu";
    case PowerSource::Rest: return "rest";
  }
  return "?";
}

inline std::string_view to_string(Principal p) {
  switch (p) {
    case Principal::ControlPlane: return "control_plane";
    case Principal::Os: return "os";
    case Principal::SystemWide: return "system_wide";
  }
  return "?";
}

// Sidecar metadata: timestamps in a trace are seconds relative to epoch_unix_s.
struct TraceMeta {
  double epoch_unix_s = 0.0;
  double nominal_period_s = 0.0;
  std::string source_label;

  bool operator==(const TraceMeta&) const = default;
};

struct PowerSample {
  double timestamp = 0.0;
  PowerSource source = PowerSource::System;
  double watts = 0.0;

  bool operator==(const PowerSample&) const = default;
};

struct InvocationRecord {
  std::string function_id;
  double start = 0.0;
  double end = 0.0;
  bool warm = true;

  double latency() const { return end - start; }
  bool operator==(const InvocationRecord&) const = default;
};

struct UtilizationSample {
  double timestamp = 0.0;
  Principal principal = Principal::SystemWide;
  double cpu_percent = 0.0;

  bool operator==(const UtilizationSample&) const = default;
};

// unhalted core cycles, unhalted reference cycles, LLC misses, instructions
using CounterVector = std::array<std::uint64_t, 4>;

// Counter rows carrying this function id hold the system-wide totals.
inline constexpr std::string_view kSystemCounterId = "__system__";

struct CounterSample {
  double timestamp = 0.0;
  std::string function_id;
  CounterVector counters{};

  bool operator==(const CounterSample&) const = default;
};

template <typename Sample>
struct Trace {
  using sample_type = Sample;
  std::vector<Sample> samples;
  TraceMeta meta;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  bool operator==(const Trace&) const = default;
};

using PowerTrace = Trace<PowerSample>;
using InvocationTrace = Trace<InvocationRecord>;
using UtilizationTrace = Trace<UtilizationSample>;
using CounterTrace = Trace<CounterSample>;

enum class TraceKind { Power, Invocation, Utilization, Counter };
using AnyTrace = std::variant<PowerTrace, InvocationTrace, UtilizationTrace, CounterTrace>;

namespace detail {

inline std::string format_number(double v) {
  if (v == 0.0) return "0";  // also folds -0
  std::array<char, 400> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed);
  if (ec != std::errc{}) throw InvariantError("cannot format number");
  return std::string(buf.data(), ptr);
}

inline double parse_double(std::string_view field, const std::string& file, std::size_t line) {
  double v = 0.0;
  auto* first = field.data();
  auto* last = field.data() + field.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v)) {
    throw ParseError(file, line, "not a finite number: '" + std::string(field) + "'");
  }
  return v;
}

inline std::uint64_t parse_count(std::string_view field, const std::string& file, std::size_t line) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw ParseError(file, line, "not a nonnegative integer counter: '" + std::string(field) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline PowerSource parse_source(std::string_view s, const std::string& file, std::size_t line) {
  if (s == "system") return PowerSource::System;
  if (s == "cpu") return PowerSource::Cpu;
  if (s == "rest") return PowerSource::Rest;
  throw ParseError(file, line, "unknown power source '" + std::string(s) + "'");
}

inline Principal parse_principal(std::string_view s, const std::string& file, std::size_t line) {
  if (s == "control_plane") return Principal::ControlPlane;
  if (s == "os") return Principal::Os;
  if (s == "system_wide") return Principal::SystemWide;
  throw ParseError(file, line, "unknown principal '" + std::string(s) + "'");
}

inline bool parse_bool(std::string_view s, const std::string& file, std::size_t line) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ParseError(file, line, "not a boolean: '" + std::string(s) + "'");
}

inline void check_identifier(const std::string& id) {
  if (id.empty() || id.find_first_of(",\r\n") != std::string::npos) {
    throw InvariantError("function id must be nonempty and free of commas/newlines: '" + id + "'");
  }
}

template <typename Sample>
constexpr std::string_view header_for() {
  if constexpr (std::is_same_v<Sample, PowerSample>) return "timestamp,source,watts";
  else if constexpr (std::is_same_v<Sample, InvocationRecord>) return "function_id,start,end,warm";
  else if constexpr (std::is_same_v<Sample, UtilizationSample>) return "timestamp,principal,cpu_percent";
  else return "timestamp,function_id,c0,c1,c2,c3";
}

inline double order_key(const PowerSample& s) { return s.timestamp; }
inline double order_key(const InvocationRecord& s) { return s.start; }
inline double order_key(const UtilizationSample& s) { return s.timestamp; }
inline double order_key(const CounterSample& s) { return s.timestamp; }

inline void check_record(const PowerSample& s) {
  if (!std::isfinite(s.timestamp) || !std::isfinite(s.watts) || s.watts < 0.0) {
    throw InvariantError("power sample at t=" + format_number(s.timestamp) + " has invalid watts " +
                         format_number(std::isfinite(s.watts) ? s.watts : -1.0));
  }
}

inline void check_record(const InvocationRecord& r) {
  check_identifier(r.function_id);
  if (!std::isfinite(r.start) || !std::isfinite(r.end) || !(r.end > r.start)) {
    throw InvariantError("invocation of '" + r.function_id + "' at start=" + format_number(r.start) +
                         " must have finite, positive latency");
  }
}

inline void check_record(const UtilizationSample& s) {
  if (!std::isfinite(s.timestamp) || !std::isfinite(s.cpu_percent) || s.cpu_percent < 0.0) {
    throw InvariantError("utilization sample at t=" + format_number(s.timestamp) + " has invalid cpu_percent");
  }
}

inline void check_record(const CounterSample& s) {
  check_identifier(s.function_id);
  if (!std::isfinite(s.timestamp)) throw InvariantError("counter sample has non-finite timestamp");
}

inline std::string to_row(const PowerSample& s) {
  return format_number(s.timestamp) + "," + std::string(to_string(s.source)) + "," + format_number(s.watts);
}
inline std::string to_row(const InvocationRecord& r) {
  return r.function_id + "," + format_number(r.start) + "," + format_number(r.end) + "," + (r.warm ? "true" : "false");
}
inline std::string to_row(const UtilizationSample& s) {
  return format_number(s.timestamp) + "," + std::string(to_string(s.principal)) + "," + format_number(s.cpu_percent);
}
inline std::string to_row(const CounterSample& s) {
  std::string row = format_number(s.timestamp) + "," + s.function_id;
  for (auto c : s.counters) row += "," + std::to_string(c);
  return row;
}

template <typename Sample>
Sample from_row(const std::vector<std::string_view>& f, const std::string& file, std::size_t line) {
  auto expect = [&](std::size_t n) {
    if (f.size() != n) {
      throw ParseError(file, line, "expected " + std::to_string(n) + " fields, got " + std::to_string(f.size()));
    }
  };
  if constexpr (std::is_same_v<Sample, PowerSample>) {
    expect(3);
    return {parse_double(f[0], file, line), parse_source(f[1], file, line), parse_double(f[2], file, line)};
  } else if constexpr (std::is_same_v<Sample, InvocationRecord>) {
    expect(4);
    return {std::string(f[0]), parse_double(f[1], file, line), parse_double(f[2], file, line),
            parse_bool(f[3], file, line)};
  } else if constexpr (std::is_same_v<Sample, UtilizationSample>) {
    expect(3);
    return {parse_double(f[0], file, line), parse_principal(f[1], file, line), parse_double(f[2], file, line)};
  } else {
    expect(6);
    CounterSample s{parse_double(f[0], file, line), std::string(f[1]), {}};
    for (std::size_t k = 0; k < 4; ++k) s.counters[k] = parse_count(f[2 + k], file, line);
    return s;
  }
}

inline void check_rest_consistency(const PowerTrace& t) {
  // Rest rows must equal System - Cpu at the same timestamp.
  constexpr double kTolerance = 1e-6;
  std::size_t i = 0;
  const auto& s = t.samples;
  while (i < s.size()) {
    std::size_t j = i;
    const PowerSample *sys = nullptr, *cpu = nullptr, *rest = nullptr;
    while (j < s.size() && s[j].timestamp == s[i].timestamp) {
      if (s[j].source == PowerSource::System) sys = &s[j];
      if (s[j].source == PowerSource::Cpu) cpu = &s[j];
      if (s[j].source == PowerSource::Rest) rest = &s[j];
      ++j;
    }
    if (sys && cpu && rest) {
      double expected = std::max(sys->watts - cpu->watts, 0.0);
      if (std::abs(rest->watts - expected) > kTolerance * std::max(1.0, sys->watts)) {
        throw InvariantError("rest power at t=" + format_number(rest->timestamp) + " differs from system - cpu");
      }
    }
    i = j;
  }
}

inline void check_utilization_bounds(const UtilizationTrace& t) {
  std::size_t i = 0;
  const auto& s = t.samples;
  while (i < s.size()) {
    std::size_t j = i;
    double system = -1.0;
    double principal_max = 0.0;
    while (j < s.size() && s[j].timestamp == s[i].timestamp) {
      if (s[j].principal == Principal::SystemWide) system = s[j].cpu_percent;
      else principal_max = std::max(principal_max, s[j].cpu_percent);
      ++j;
    }
    if (system >= 0.0 && principal_max > system * (1.0 + 1e-9) + 1e-9) {
      throw InvariantError("utilization at t=" + format_number(s[i].timestamp) +
                           ": principal cpu_percent exceeds system-wide");
    }
    i = j;
  }
}

}  // namespace detail

// Throws InvariantError on the first offending record.
template <typename Sample>
void validate(const Trace<Sample>& trace) {
  double last = -std::numeric_limits<double>::infinity();
  for (const auto& s : trace.samples) {
    detail::check_record(s);
    double key = detail::order_key(s);
    if (key < last) {
      throw InvariantError("record out of order at t=" + detail::format_number(key) + " (previous " +
                           detail::format_number(last) + ")");
    }
    last = key;
  }
  if constexpr (std::is_same_v<Sample, PowerSample>) detail::check_rest_consistency(trace);
  if constexpr (std::is_same_v<Sample, UtilizationSample>) detail::check_utilization_bounds(trace);
}

// power.csv -> power.meta.json
inline std::filesystem::path meta_path(const std::filesystem::path& trace_path) {
  auto p = trace_path;
  p.replace_extension(".meta.json");
  return p;
}

inline nlohmann::json meta_to_json(const TraceMeta& m) {
  return {{"epoch_unix_s", m.epoch_unix_s}, {"nominal_period_s", m.nominal_period_s}, {"source_label", m.source_label}};
}

inline TraceMeta meta_from_json(const nlohmann::json& j) {
  TraceMeta m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "epoch_unix_s") m.epoch_unix_s = it->get<double>();
    else if (it.key() == "nominal_period_s") m.nominal_period_s = it->get<double>();
    else if (it.key() == "source_label") m.source_label = it->get<std::string>();
    else throw ConfigError("unknown metadata key '" + it.key() + "'");
  }
  return m;
}

template <typename Sample>
Trace<Sample> read_trace_as(const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + file);
  Trace<Sample> trace;
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!saw_header) {
      if (line != detail::header_for<Sample>()) {
        throw ParseError(file, lineno, "expected header '" + std::string(detail::header_for<Sample>()) + "'");
      }
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    auto sample = detail::from_row<Sample>(detail::split(line), file, lineno);
    try {
      detail::check_record(sample);
      if (!trace.samples.empty() && detail::order_key(sample) < detail::order_key(trace.samples.back())) {
        throw InvariantError("row out of order");
      }
    } catch (const InvariantError& e) {
      throw ParseError(file, lineno, std::string("invariant violation: ") + e.what() + " in row '" + line + "'");
    }
    trace.samples.push_back(std::move(sample));
  }
  if (!saw_header) throw ParseError(file, lineno, "missing header");
  try {
    validate(trace);
  } catch (const InvariantError& e) {
    throw ParseError(file, lineno, std::string("invariant violation: ") + e.what());
  }

  auto mp = meta_path(path);
  if (std::filesystem::exists(mp)) {
    std::ifstream min(mp);
    try {
      trace.meta = meta_from_json(nlohmann::json::parse(min));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(mp.string(), 1, e.what());
    }
  }
  return trace;
}

inline AnyTrace read_trace(const std::filesystem::path& path, TraceKind kind) {
  switch (kind) {
    case TraceKind::Power: return read_trace_as<PowerSample>(path);
    case TraceKind::Invocation: return read_trace_as<InvocationRecord>(path);
    case TraceKind::Utilization: return read_trace_as<UtilizationSample>(path);
    case TraceKind::Counter: return read_trace_as<CounterSample>(path);
  }
  throw InvariantError("unknown trace kind");
}

inline PowerTrace read_power(const std::filesystem::path& p) { return read_trace_as<PowerSample>(p); }
inline InvocationTrace read_invocations(const std::filesystem::path& p) { return read_trace_as<InvocationRecord>(p); }
inline UtilizationTrace read_utilization(const std::filesystem::path& p) { return read_trace_as<UtilizationSample>(p); }
inline CounterTrace read_counters(const std::filesystem::path& p) { return read_trace_as<CounterSample>(p); }

// Writes the CSV and its metadata sidecar.
template <typename Sample>
void write_trace(const Trace<Sample>& trace, const std::filesystem::path& path) {
  validate(trace);
  std::ostringstream out;
  out << detail::header_for<Sample>() << '\n';
  for (const auto& s : trace.samples) out << detail::to_row(s) << '\n';

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << out.str();
  if (!f) throw IoError("write failed for " + path.string());

  std::ofstream m(meta_path(path), std::ios::binary | std::ios::trunc);
  if (!m) throw IoError("cannot write " + meta_path(path).string());
  m << meta_to_json(trace.meta).dump(2) << '\n';
}

inline void write_trace(const AnyTrace& trace, const std::filesystem::path& path) {
  std::visit([&](const auto& t) { write_trace(t, path); }, trace);
}

// ---------------------------------------------------------------------------
// Power-trace helpers. A power trace is interpreted as a step signal: sample i
// holds from its timestamp until the next sample; the last one holds for the
// nominal period (or the last spacing when no period is recorded).

inline PowerTrace only(const PowerTrace& trace, PowerSource source) {
  PowerTrace out;
  out.meta = trace.meta;
  for (const auto& s : trace.samples)
    if (s.source == source) out.samples.push_back(s);
  return out;
}

inline bool has_source(const PowerTrace& trace, PowerSource source) {
  return std::any_of(trace.samples.begin(), trace.samples.end(),
                     [&](const PowerSample& s) { return s.source == source; });
}

inline void require_single_source(const PowerTrace& trace) {
  for (const auto& s : trace.samples) {
    if (s.source != trace.samples.front().source) {
      throw InvariantError("operation requires a single-source power trace");
    }
  }
}

// Duration the final sample holds for.
inline double tail_length(const PowerTrace& trace, double fallback = 0.0) {
  if (trace.meta.nominal_period_s > 0.0) return trace.meta.nominal_period_s;
  const auto& s = trace.samples;
  for (std::size_t i = s.size(); i-- > 1;) {
    double gap = s[i].timestamp - s[i - 1].timestamp;
    if (gap > 0.0) return gap;
  }
  return fallback;
}

inline double end_time(const PowerTrace& trace, double fallback_tail = 0.0) {
  if (trace.empty()) return 0.0;
  return trace.samples.back().timestamp + tail_length(trace, fallback_tail);
}

// Integral of the step signal, joules.
inline double energy(const PowerTrace& trace) {
  require_single_source(trace);
  const auto& s = trace.samples;
  double total = 0.0;
  double tail = tail_length(trace);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double next = i + 1 < s.size() ? s[i + 1].timestamp : s[i].timestamp + tail;
    total += s[i].watts * (next - s[i].timestamp);
  }
  return total;
}

// Time-weighted bin means on the grid origin + k*period covering [origin, end).
// Bins without coverage hold the previous output value.
inline PowerTrace resample(const PowerTrace& trace, double period, double origin, double end) {
  if (!(period > 0.0)) throw InvariantError("resample period must be positive");
  if (trace.empty()) throw InvariantError("cannot resample an empty trace");
  require_single_source(trace);

  const auto& s = trace.samples;
  const double tail = tail_length(trace, period);
  const auto bins = static_cast<std::size_t>(std::max(0.0, std::ceil((end - origin) / period - 1e-9)));

  PowerTrace out;
  out.meta = trace.meta;
  out.meta.nominal_period_s = period;
  out.samples.reserve(bins);

  std::size_t seg = 0;
  double held = s.front().watts;
  for (std::size_t k = 0; k < bins; ++k) {
    const double lo = origin + static_cast<double>(k) * period;
    const double hi = lo + period;
    double integral = 0.0;
    double covered = 0.0;
    while (seg < s.size()) {
      const double a = s[seg].timestamp;
      const double b = seg + 1 < s.size() ? s[seg + 1].timestamp : a + tail;
      if (a >= hi) break;
      const double ov = std::min(b, hi) - std::max(a, lo);
      if (ov > 0.0) {
        integral += s[seg].watts * ov;
        covered += ov;
      }
      if (b > hi) break;
      ++seg;
    }
    const double value = covered > 0.0 ? integral / covered : held;
    held = value;
    out.samples.push_back({lo, s.front().source, value});
  }
  return out;
}

inline PowerTrace resample(const PowerTrace& trace, double period) {
  if (trace.empty()) throw InvariantError("cannot resample an empty trace");
  return resample(trace, period, trace.samples.front().timestamp, end_time(trace, period));
}

inline std::vector<double> watts_of(const PowerTrace& trace) {
  std::vector<double> v;
  v.reserve(trace.size());
  for (const auto& s : trace.samples) v.push_back(s.watts);
  return v;
}

}  // namespace faasmeter
