#pragma once

// Command-line front end: simulate | signal sync | profile | validate | cap | report.
// Exit codes: 0 ok, 1 usage, 2 validation failure, 3 I/O.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "faasmeter/capping.hpp"
#include "faasmeter/manifest.hpp"
#include "faasmeter/pipeline.hpp"
#include "faasmeter/scenario.hpp"
#include "faasmeter/signal.hpp"
#include "faasmeter/simulator.hpp"
#include "faasmeter/trace.hpp"
#include "faasmeter/validation.hpp"

namespace faasmeter::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kValidation = 2;
inline constexpr int kIo = 3;

inline std::string default_out() {
  const char* env = std::getenv("FAASMETER_OUT");
  return env && *env ? env : "faasmeter-out";
}

namespace detail {

using faasmeter::detail::format_number;

// Collects the artifacts of one command for the manifest.
class Outputs {
 public:
  Outputs(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  const fs::path& dir() const { return dir_; }

  void text(const std::string& name, const std::string& body) {
    std::ofstream out(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir_ / name).string());
    out << body;
    if (!out) throw IoError("write failed for " + (dir_ / name).string());
    add(name);
  }

  template <typename Sample>
  void trace(const std::string& name, const Trace<Sample>& t) {
    write_trace(t, dir_ / name);
    add(name);
    add(meta_path(fs::path(name)).string());
  }

  void finish() const { manifest::write(dir_, files_, command_); }

 private:
  void add(const std::string& f) {
    if (std::find(files_.begin(), files_.end(), f) == files_.end()) files_.push_back(f);
  }
  fs::path dir_;
  std::string command_;
  std::vector<std::string> files_;
};

inline json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline std::string jsonl(const std::vector<json>& lines) {
  std::string s;
  for (const auto& l : lines) s += l.dump() + "\n";
  return s;
}

inline PowerTrace merge_power(const PowerTrace& system, const std::optional<PowerTrace>& cpu) {
  PowerTrace out;
  out.meta = system.meta;
  out.meta.source_label = cpu ? "system+cpu" : system.meta.source_label;
  out.samples = system.samples;
  if (cpu) out.samples.insert(out.samples.end(), cpu->samples.begin(), cpu->samples.end());
  std::stable_sort(out.samples.begin(), out.samples.end(),
                   [](const PowerSample& a, const PowerSample& b) { return a.timestamp < b.timestamp; });
  return out;
}

inline pipeline::TraceSet load_traces(const fs::path& dir) {
  if (!fs::exists(dir / "invocations.csv")) throw IoError("missing input: " + (dir / "invocations.csv").string());
  if (!fs::exists(dir / "power.csv")) throw IoError("missing input: " + (dir / "power.csv").string());
  pipeline::TraceSet ts;
  ts.invocations = read_invocations(dir / "invocations.csv");
  const auto power = read_power(dir / "power.csv");
  ts.system_power = only(power, PowerSource::System);
  if (has_source(power, PowerSource::Cpu)) ts.cpu_power = only(power, PowerSource::Cpu);
  if (fs::exists(dir / "utilization.csv")) {
    auto u = read_utilization(dir / "utilization.csv");
    if (!u.empty()) ts.utilization = std::move(u);
  }
  if (fs::exists(dir / "counters.csv")) {
    auto c = read_counters(dir / "counters.csv");
    if (!c.empty()) ts.counters = std::move(c);
  }
  return ts;
}

inline json skew_json(const pipeline::SkewReport& s) {
  json j;
  j["reference"] = s.reference;
  j["offset_s"] = s.estimate ? json(s.estimate->offset_s) : json(nullptr);
  j["residual"] = s.estimate ? json(s.estimate->residual) : json(nullptr);
  j["flat_signal"] = s.flat_signal;
  j["drift"] = json::array();
  for (const auto& d : s.drift) j["drift"].push_back({{"estimated_at", d.estimated_at}, {"offset_s", d.offset_s}});
  return j;
}

inline json spectrum_entry_json(const attribution::SpectrumEntry& e) {
  return {{"function_id", e.function_id}, {"j_indiv", e.j_indiv},   {"phi_cp", e.phi_cp},
          {"phi_idle", e.phi_idle},       {"j_total", e.j_total},   {"activations", e.activations}};
}

}  // namespace detail

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.workload.seed = *a.seed;
  auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
  detail::Outputs o(a.out, "simulate");
  o.trace("invocations.csv", run.invocations);
  o.trace("power.csv", detail::merge_power(run.system_power, run.cpu_power));
  o.trace("utilization.csv", run.utilization);
  o.trace("counters.csv", run.counters ? *run.counters : CounterTrace{{}, run.system_power.meta});
  auto truth = truth_to_json(run.truth, sim::true_footprints(run, sim::FootprintPolicy::Individual));
  truth["scenario"] = sc.id;
  truth["seed"] = sc.workload.seed;
  truth["horizon_s"] = run.horizon_s;
  o.text("truth.json", truth.dump(2) + "\n");
  // idle-only measurement of the same machine, usable as the idle baseline
  const double idle = pipeline::calibrate_idle(sc.truth, sc.synthesis, sc.workload.seed);
  o.text("calibration.json", json{{"idle_watts", idle}}.dump(2) + "\n");
  o.finish();
  out << json{{"scenario", sc.id},
              {"seed", sc.workload.seed},
              {"invocations", run.invocations.size()},
              {"power_samples", run.system_power.size()},
              {"out", o.dir().string()}}
             .dump()
      << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct SyncArgs {
  std::string power;
  std::string reference;
  std::string power_source = "system";
  std::string reference_source = "cpu";
  double bound_s = 5.0;
};

inline PowerSource parse_source_flag(const std::string& s) {
  if (s == "system") return PowerSource::System;
  if (s == "cpu") return PowerSource::Cpu;
  if (s == "rest") return PowerSource::Rest;
  throw ConfigError("unknown power source '" + s + "' (expected system, cpu or rest)");
}

inline int cmd_sync(const SyncArgs& a, std::ostream& out) {
  if (!(a.bound_s > 0.0)) throw ConfigError("--bound must be > 0 seconds");
  auto power = only(read_power(a.power), parse_source_flag(a.power_source));
  auto ref = only(read_power(a.reference), parse_source_flag(a.reference_source));
  if (power.empty()) throw InvariantError(a.power + ": no samples of source " + a.power_source);
  if (ref.empty()) throw InvariantError(a.reference + ": no samples of source " + a.reference_source);
  const double p = signal::detail::grid_period(power);
  const double origin = power.samples.front().timestamp;
  const double end = end_time(power, p);
  auto est = signal::estimate_skew(resample(power, p, origin, end), resample(ref, p, origin, end), {a.bound_s, 0.01});
  out << json{{"offset_s", est.offset_s}, {"residual", est.residual}, {"estimated_at", est.estimated_at}}.dump() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct ProfileArgs {
  std::string traces;  // empty: same as out
  std::string out;
  std::string scenario;
  std::string mode = "combined";
  double delta = 1.0;
  std::vector<std::string> principals;
  bool online = false;
  double alpha = 0.8, beta = 0.2, gamma = 0.1, step = 60.0, init = 100.0;
  std::optional<double> idle_watts;
  double skew_bound = 5.0;
  bool no_skew = false;
  double window = 60.0;
};

inline ProfileConfig profile_config(const ProfileArgs& a, const std::optional<Scenario>& sc, const fs::path& traces) {
  ProfileConfig cfg = sc ? sc->profile : ProfileConfig{};
  cfg.mode = parse_mode(a.mode);
  cfg.delta_s = a.delta;
  if (!a.principals.empty()) cfg.principals = parse_principals(a.principals);
  cfg.online = a.online;
  cfg.kalman.alpha = a.alpha;
  cfg.kalman.beta = a.beta;
  cfg.kalman.gamma = a.gamma;
  cfg.kalman.step_s = a.step;
  cfg.kalman.init_s = a.init;
  cfg.kalman.delta = a.delta;
  cfg.kalman.validate();
  cfg.skew_bound_s = a.skew_bound;
  cfg.correct_skew = !a.no_skew;
  cfg.window_s = a.window;
  if (!(cfg.delta_s > 0.0)) throw ConfigError("--delta must be > 0 seconds");
  if (!(cfg.window_s >= cfg.delta_s)) throw ConfigError("--window must be >= --delta");
  if (!(cfg.skew_bound_s > 0.0 && cfg.skew_bound_s <= 10.0)) throw ConfigError("--skew-bound must be in (0, 10] seconds");
  if (a.idle_watts) {
    if (!(*a.idle_watts >= 0.0)) throw ConfigError("--idle-watts must be >= 0");
    cfg.idle_watts = a.idle_watts;
  } else if (!cfg.idle_watts && cfg.mode != kalman::SolveMode::Full) {
    if (fs::exists(traces / "calibration.json")) {
      cfg.idle_watts = json::parse(manifest::read_file(traces / "calibration.json")).at("idle_watts").get<double>();
    } else if (sc) {
      cfg.idle_watts = pipeline::calibrate_idle(sc->truth, sc->synthesis, sc->workload.seed);
    } else {
      throw ConfigError(std::string("mode ") + a.mode +
                        " needs idle power: pass --idle-watts or provide calibration.json next to the traces");
    }
  }
  return cfg;
}

inline json footprints_json(const pipeline::ProfileResult& r) {
  json j;
  j["mode"] = std::string(kalman::to_string(r.mode));
  j["online"] = r.online.has_value();
  j["baseline_watts"] = r.baseline_watts;
  j["span"] = {r.span.t0, r.span.t1};
  j["skew"] = detail::skew_json(r.skew);
  j["control_plane_watts"] = r.control_plane_watts ? json(*r.control_plane_watts) : json(nullptr);
  j["degenerate"] = r.solution.degenerate;
  j["functions"] = json::object();
  for (const auto& [id, jpi] : r.footprints) {
    auto w = r.watts.find(id);
    auto a = r.activations.find(id);
    j["functions"][id] = {{"watts", w == r.watts.end() ? 0.0 : w->second},
                          {"mean_latency_s", r.mean_latency.at(id)},
                          {"activations", a == r.activations.end() ? 0.0 : a->second},
                          {"joules_per_invocation", jpi}};
  }
  if (r.cpu_model) {
    const auto& m = *r.cpu_model;
    j["cpu_model"] = {{"weights", {m.weights(0), m.weights(1), m.weights(2), m.weights(3)}},
                      {"intercept", m.intercept},
                      {"training_error", m.training_error}};
  }
  return j;
}

inline int cmd_profile(const ProfileArgs& a, std::ostream& out) {
  const fs::path traces = a.traces.empty() ? fs::path(a.out) : fs::path(a.traces);
  std::optional<Scenario> sc;
  if (!a.scenario.empty()) sc = load_scenario(a.scenario);
  const auto cfg = profile_config(a, sc, traces);
  const auto ts = detail::load_traces(traces);
  const auto res = pipeline::profile(ts, cfg);

  // p variance per (window end, function) when online
  std::map<std::pair<double, std::string>, double> pvar;
  if (res.online)
    for (const auto& pt : res.online->series) pvar[{pt.t, pt.function_id}] = pt.p_variance;

  std::vector<json> lines, windows;
  for (const auto& w : res.windows) {
    for (const auto& [id, x] : w.watts) {
      json l;
      l["t0"] = w.window.t0;
      l["t1"] = w.window.t1;
      l["function_id"] = id;
      l["watts"] = x;
      const auto* e = w.spectrum.find(id);
      l["joules_per_invocation"] = e ? json(e->j_indiv) : json(nullptr);
      l["activations"] = e ? e->activations : 0.0;
      auto pv = pvar.find({w.window.t1, id});
      l["p_variance"] = pv == pvar.end() ? json(nullptr) : json(pv->second);
      lines.push_back(l);
    }
    json wj;
    wj["t0"] = w.window.t0;
    wj["t1"] = w.window.t1;
    wj["baseline_watts"] = w.baseline_watts;
    const double delta = cfg.delta_s;
    wj["measured_joules"] = w.measured.sum() * delta;
    wj["predicted_joules"] = w.predicted.sum() * delta;
    wj["idle_joules"] = w.baseline_watts * static_cast<double>(w.predicted.size()) * delta;
    wj["column_joules"] = w.column_joules;
    wj["total_error"] = w.measured.size() > 0 && (w.measured.array() > 0.0).all()
                            ? json(validation::total_error(w.measured, w.predicted))
                            : json(nullptr);
    wj["residual_joules"] = w.spectrum.residual;
    wj["unattributed_cp_joules"] = w.spectrum.unattributed_cp;
    wj["unattributed_idle_joules"] = w.spectrum.unattributed_idle;
    wj["spectrum"] = json::array();
    for (const auto& e : w.spectrum.entries) wj["spectrum"].push_back(detail::spectrum_entry_json(e));
    windows.push_back(wj);
  }

  detail::Outputs o(a.out, "profile");
  o.text("profile.jsonl", detail::jsonl(lines));
  o.text("windows.jsonl", detail::jsonl(windows));
  o.text("footprints.json", footprints_json(res).dump(2) + "\n");
  o.finish();
  out << detail::jsonl(lines);
  return kOk;
}

// ---------------------------------------------------------------------------

struct ValidateArgs {
  std::string scenario;
  std::vector<std::string> modes{"full", "no-idle", "combined"};
  std::optional<std::uint64_t> seed;
  bool online = false;
  std::string out;
};

inline int cmd_validate(const ValidateArgs& a, std::ostream& out) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.workload.seed = *a.seed;
  if (a.online) sc.profile.online = true;
  std::vector<kalman::SolveMode> modes;
  for (const auto& m : a.modes) modes.push_back(parse_mode(m));
  if (modes.empty()) throw ConfigError("--modes needs at least one mode");
  const auto reports = validation::run_validation(sc, modes);

  json all = json::array();
  std::ostringstream csv;
  csv << "scenario,mode,function_id,watts,estimated_joules,true_joules,marginal_joules,marginal_negative,"
         "individual_difference,latency_normalized_variance,footprint_cov\n";
  auto cell = [](double v) { return std::isfinite(v) ? detail::format_number(v) : std::string(std::isnan(v) ? "" : "inf"); };
  for (const auto& r : reports) {
    all.push_back(validation::to_json(r));
    for (const auto& f : r.functions) {
      csv << r.scenario_id << ',' << r.mode << ',' << f.function_id << ',' << cell(f.watts) << ','
          << cell(f.estimated_joules) << ',' << cell(f.true_joules) << ',' << cell(f.marginal_joules) << ','
          << (f.marginal_negative ? "true" : "false") << ',' << cell(f.individual_difference) << ','
          << cell(f.latency_normalized_variance) << ',' << cell(f.footprint_cov) << '\n';
    }
    out << json{{"scenario", r.scenario_id},
                {"mode", r.mode},
                {"cosine_vs_truth", r.cosine_vs_truth},
                {"cosine_vs_marginal", r.cosine_vs_marginal},
                {"total_error_mean", r.total_error_mean}}
               .dump()
        << "\n";
  }
  detail::Outputs o(a.out, "validate");
  o.text("validation.json", all.dump(2) + "\n");
  o.text("validation.csv", csv.str());
  o.finish();
  return kOk;
}

// ---------------------------------------------------------------------------

struct CapArgs {
  std::string scenario;
  std::optional<double> cap_watts;
  std::optional<std::string> mode;
  std::optional<double> buffer;
  std::optional<double> horizon;
  std::string footprints = "profiled";
  std::optional<std::uint64_t> seed;
  std::string out;
};

// Horizon footprints learned by profiling an uncapped run of the scenario.
inline std::map<std::string, double> profiled_footprints(const Scenario& sc, double horizon, double idle) {
  auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
  auto cfg = sc.profile;
  cfg.mode = kalman::SolveMode::NoIdle;
  cfg.online = false;
  cfg.idle_watts = idle;
  const auto res = pipeline::profile(pipeline::from_run(run), cfg);
  double cp = 0.0;
  for (const auto& [id, j] : res.footprints) {
    auto w = res.watts.find(id);
    cp = std::max(cp, j - (w == res.watts.end() ? 0.0 : w->second) * res.mean_latency.at(id));
  }
  return capping::horizon_footprints(res.watts, res.mean_latency, cp, horizon);
}

inline json cap_summary(const capping::CappedRun& r, const capping::CapPolicy& p) {
  json j;
  j["cap_watts"] = p.cap_watts;
  j["horizon_s"] = p.horizon_s;
  j["mode"] = p.mode == CapMode::FootprintAware ? "footprint" : "buffer";
  j["buffer_watts"] = p.buffer_watts;
  j["overshoot_fraction"] = r.overshoot_fraction;
  j["samples"] = r.power.size();
  j["invocations"] = r.invocations.size();
  j["deferrals"] = r.deferrals;
  j["fallbacks"] = r.fallbacks;
  j["mean_latency_s"] = r.mean_latency;
  j["latency_variance_s2"] = r.latency_variance;
  j["mean_wait_s"] = r.mean_wait;
  j["starved"] = r.starved;
  j["diagnostic"] = r.diagnostic;
  j["functions"] = json::object();
  for (auto [id, v] : r.latencies) {
    std::sort(v.begin(), v.end());
    auto q = [&](double f) { return v[std::min(v.size() - 1, static_cast<std::size_t>(f * static_cast<double>(v.size())))]; };
    j["functions"][id] = {{"count", v.size()},
                          {"mean_latency_s", validation::mean(v)},
                          {"p50_latency_s", q(0.5)},
                          {"p95_latency_s", q(0.95)}};
  }
  return j;
}

inline int cmd_cap(const CapArgs& a, std::ostream& out) {
  auto sc = load_scenario(a.scenario);
  if (a.seed) sc.workload.seed = *a.seed;
  capping::CapPolicy policy{sc.cap.cap_watts, sc.cap.horizon_s, sc.cap.mode, sc.cap.buffer_watts};
  if (a.cap_watts) policy.cap_watts = *a.cap_watts;
  if (a.mode) policy.mode = parse_cap_mode(*a.mode);
  if (a.buffer) policy.buffer_watts = *a.buffer;
  if (a.horizon) policy.horizon_s = *a.horizon;
  if (!(policy.cap_watts > 0.0)) throw ConfigError("cap needs --cap-watts or scenario.cap.cap_watts");
  policy.validate();

  const double idle = sc.profile.idle_watts ? *sc.profile.idle_watts
                                            : pipeline::calibrate_idle(sc.truth, sc.synthesis, sc.workload.seed);
  capping::FootprintFn fp;
  if (a.footprints == "oracle") fp = capping::exact_footprints(sc.truth, policy.horizon_s);
  else if (a.footprints == "profiled") fp = capping::by_function(profiled_footprints(sc, policy.horizon_s, idle));
  else throw ConfigError("--footprints must be 'profiled' or 'oracle'");

  capping::CapRunOptions opt;
  opt.period_s = sc.synthesis.period_s;
  opt.cp_window_s = std::min(sc.synthesis.cp_window_s, opt.period_s);
  opt.initial_watts = idle;
  opt.seed = sc.workload.seed;
  const auto run = capping::run_capped(sim::generate_workload(sc.workload), sc.truth, policy, fp, opt);

  std::vector<json> lines;
  for (const auto& d : run.decisions) lines.push_back(capping::to_json(d));
  const auto summary = cap_summary(run, policy);
  detail::Outputs o(a.out, "cap");
  o.text("decisions.jsonl", detail::jsonl(lines));
  o.text("cap_summary.json", summary.dump(2) + "\n");
  o.trace("capped_power.csv", run.power);
  o.finish();
  out << summary.dump() << "\n";
  if (run.starved) throw InvariantError(run.diagnostic);
  return kOk;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string in;  // empty: same as out
  std::string out;
  bool spectrum = false;
};

inline std::vector<json> read_jsonl(const fs::path& p) {
  std::istringstream in(manifest::read_file(p));
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(p.string(), n, e.what());
    }
  }
  return out;
}

inline int cmd_report(const ReportArgs& a, std::ostream& out) {
  const fs::path in = a.in.empty() ? fs::path(a.out) : fs::path(a.in);
  const bool has_profile = fs::exists(in / "windows.jsonl") && fs::exists(in / "footprints.json");
  const bool has_validation = fs::exists(in / "validation.json");
  if (!has_profile && !has_validation)
    throw IoError("missing input: " + in.string() + " has neither profile outputs (windows.jsonl, footprints.json) "
                  "nor validation.json");

  detail::Outputs o(a.out, "report");
  std::ostringstream summary;
  if (has_profile) {
    const auto windows = read_jsonl(in / "windows.jsonl");
    const auto fp = json::parse(manifest::read_file(in / "footprints.json"));
    std::set<std::string> cols;
    for (const auto& w : windows)
      for (auto it = w.at("column_joules").begin(); it != w.at("column_joules").end(); ++it) cols.insert(it.key());

    std::ostringstream stacked;
    stacked << "t0,t1,idle";
    for (const auto& c : cols) stacked << ',' << c;
    stacked << ",predicted_total,measured_total\n";
    for (const auto& w : windows) {
      stacked << detail::format_number(w.at("t0").get<double>()) << ',' << detail::format_number(w.at("t1").get<double>())
              << ',' << detail::format_number(w.at("idle_joules").get<double>());
      for (const auto& c : cols) {
        const auto& cj = w.at("column_joules");
        stacked << ',' << detail::format_number(cj.contains(c) ? cj.at(c).get<double>() : 0.0);
      }
      stacked << ',' << detail::format_number(w.at("predicted_joules").get<double>()) << ','
              << detail::format_number(w.at("measured_joules").get<double>()) << '\n';
    }
    o.text("stacked.csv", stacked.str());

    if (a.spectrum) {
      std::ostringstream sp;
      sp << "t0,t1,function_id,J_indiv,phi_cp,phi_idle,J_total,activations\n";
      for (const auto& w : windows)
        for (const auto& e : w.at("spectrum"))
          sp << detail::format_number(w.at("t0").get<double>()) << ',' << detail::format_number(w.at("t1").get<double>())
             << ',' << e.at("function_id").get<std::string>() << ',' << detail::format_number(e.at("j_indiv").get<double>())
             << ',' << detail::format_number(e.at("phi_cp").get<double>()) << ','
             << detail::format_number(e.at("phi_idle").get<double>()) << ','
             << detail::format_number(e.at("j_total").get<double>()) << ','
             << detail::format_number(e.at("activations").get<double>()) << '\n';
      o.text("spectrum.csv", sp.str());
    }

    std::size_t below = 0, counted = 0;
    for (const auto& w : windows)
      if (!w.at("total_error").is_null()) {
        ++counted;
        if (w.at("total_error").get<double>() < 0.10) ++below;
      }
    summary << "profile  mode=" << fp.at("mode").get<std::string>() << " online=" << (fp.at("online").get<bool>() ? "yes" : "no")
            << " baseline_watts=" << fp.at("baseline_watts").dump() << " skew_offset_s=" << fp.at("skew").at("offset_s").dump()
            << "\n";
    summary << "windows  " << windows.size() << " (total error < 10%: " << below << " of " << counted << ")\n";
    summary << "function                     watts      latency_s  joules/inv\n";
    for (auto it = fp.at("functions").begin(); it != fp.at("functions").end(); ++it) {
      char row[160];
      std::snprintf(row, sizeof row, "%-24s %10.4f %12.4f %12.4f\n", it.key().c_str(), it.value().at("watts").get<double>(),
                    it.value().at("mean_latency_s").get<double>(), it.value().at("joules_per_invocation").get<double>());
      summary << row;
    }
  }
  if (has_validation) {
    const auto v = json::parse(manifest::read_file(in / "validation.json"));
    summary << "validation\n";
    summary << "scenario             mode        cosine_vs_truth        cosine_vs_marginal     total_error_mean\n";
    for (const auto& r : v) {
      // numbers copied as serialized, not reformatted
      char row[256];
      std::snprintf(row, sizeof row, "%-20s %-11s %-22s %-22s %s\n", r.at("scenario").get<std::string>().c_str(),
                    r.at("mode").get<std::string>().c_str(), r.at("cosine_vs_truth").dump().c_str(),
                    r.at("cosine_vs_marginal").dump().c_str(), r.at("total_error_mean").dump().c_str());
      summary << row;
    }
  }
  o.text("summary.txt", summary.str());
  o.finish();
  out << summary.str();
  return kOk;
}

// ---------------------------------------------------------------------------

// args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"faasmeter: per-function energy footprints from coarse power traces"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "faasmeter 1.0.0");

  SimulateArgs sim_a;
  sim_a.out = default_out();
  auto* sim = app.add_subcommand("simulate", "Synthesize invocation, power, utilization and counter traces");
  sim->add_option("--scenario", sim_a.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", sim_a.seed, "Override the scenario seed (integer)");
  sim->add_option("--out", sim_a.out, "Output directory (default $FAASMETER_OUT or ./faasmeter-out)");

  SyncArgs sync_a;
  auto* sig = app.add_subcommand("signal", "Signal conditioning");
  sig->require_subcommand(1);
  auto* sync = sig->add_subcommand("sync", "Estimate the clock offset of a power trace against a reference (JSON on stdout)");
  sync->add_option("--power", sync_a.power, "Power CSV to align")->required()->check(CLI::ExistingFile);
  sync->add_option("--reference", sync_a.reference, "Reference power CSV")->required()->check(CLI::ExistingFile);
  sync->add_option("--power-source", sync_a.power_source, "Source rows used from --power: system|cpu|rest")
      ->capture_default_str();
  sync->add_option("--reference-source", sync_a.reference_source, "Source rows used from --reference: system|cpu|rest")
      ->capture_default_str();
  sync->add_option("--bound", sync_a.bound_s, "Search bound on |offset|, seconds")->capture_default_str();

  ProfileArgs prof_a;
  prof_a.out = default_out();
  auto* prof = app.add_subcommand("profile", "Estimate per-function power and footprints (JSON-lines on stdout)");
  prof->add_option("--traces", prof_a.traces, "Directory with invocations.csv and power.csv (default: --out)");
  prof->add_option("--out", prof_a.out, "Output directory (default $FAASMETER_OUT or ./faasmeter-out)");
  prof->add_option("--scenario", prof_a.scenario, "Scenario JSON supplying profile defaults")->check(CLI::ExistingFile);
  prof->add_option("--mode", prof_a.mode, "Solver: full|no-idle|combined")
      ->check(CLI::IsMember({"full", "no-idle", "combined"}))
      ->capture_default_str();
  prof->add_option("--delta", prof_a.delta, "Disaggregation interval, seconds")->capture_default_str();
  prof->add_option("--principals", prof_a.principals, "Shared principals as columns: cp,os or none")->delimiter(',');
  prof->add_flag("--online", prof_a.online, "Online Kalman profiling");
  prof->add_option("--alpha", prof_a.alpha, "Kalman weight on the previous estimate (dimensionless)")->capture_default_str();
  prof->add_option("--beta", prof_a.beta, "Kalman weight on the new window solution (dimensionless)")->capture_default_str();
  prof->add_option("--gamma", prof_a.gamma, "Kalman process-variance scale (dimensionless)")->capture_default_str();
  prof->add_option("--step", prof_a.step, "Online step length, seconds")->capture_default_str();
  prof->add_option("--init", prof_a.init, "Online initial window, seconds")->capture_default_str();
  prof->add_option("--idle-watts", prof_a.idle_watts, "Idle power, watts (default: calibration.json)");
  prof->add_option("--skew-bound", prof_a.skew_bound, "Clock-offset search bound, seconds")->capture_default_str();
  prof->add_flag("--no-skew", prof_a.no_skew, "Skip clock-offset correction");
  prof->add_option("--window", prof_a.window, "Reporting window for batch mode, seconds")->capture_default_str();

  ValidateArgs val_a;
  val_a.out = default_out();
  auto* val = app.add_subcommand("validate", "Simulate, profile and compare against truth and marginal energy");
  val->add_option("--scenario", val_a.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  val->add_option("--modes", val_a.modes, "Comma list of full,no-idle,combined")->delimiter(',')->capture_default_str();
  val->add_option("--seed", val_a.seed, "Override the scenario seed (integer)");
  val->add_flag("--online", val_a.online, "Online Kalman profiling");
  val->add_option("--out", val_a.out, "Output directory (default $FAASMETER_OUT or ./faasmeter-out)");

  CapArgs cap_a;
  cap_a.out = default_out();
  auto* cap = app.add_subcommand("cap", "Closed-loop software power capping (decisions as JSON-lines)");
  cap->add_option("--scenario", cap_a.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  cap->add_option("--cap-watts", cap_a.cap_watts, "Power cap, watts");
  cap->add_option("--mode", cap_a.mode, "Admission rule: footprint|buffer")->check(CLI::IsMember({"footprint", "buffer"}));
  cap->add_option("--buffer", cap_a.buffer, "Per-admission buffer, watts");
  cap->add_option("--horizon", cap_a.horizon, "Admission horizon, seconds");
  cap->add_option("--footprints", cap_a.footprints, "Footprint source: profiled|oracle")->capture_default_str();
  cap->add_option("--seed", cap_a.seed, "Override the scenario seed (integer)");
  cap->add_option("--out", cap_a.out, "Output directory (default $FAASMETER_OUT or ./faasmeter-out)");

  ReportArgs rep_a;
  rep_a.out = default_out();
  auto* rep = app.add_subcommand("report", "Stacked energy CSV, spectrum CSV and a summary table");
  rep->add_option("--in", rep_a.in, "Directory with profile or validate outputs (default: --out)");
  rep->add_option("--out", rep_a.out, "Output directory (default $FAASMETER_OUT or ./faasmeter-out)");
  rep->add_flag("--spectrum", rep_a.spectrum, "Also write spectrum.csv (joules per invocation)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_a, out);
    if (sync->parsed()) return cmd_sync(sync_a, out);
    if (prof->parsed()) return cmd_profile(prof_a, out);
    if (val->parsed()) return cmd_validate(val_a, out);
    if (cap->parsed()) return cmd_cap(cap_a, out);
    if (rep->parsed()) return cmd_report(rep_a, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
  err << app.help();
  return kUsage;
}

}  // namespace faasmeter::cli
