#pragma once

// Validation metrics and the paired-run marginal-energy harness.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "faasmeter/error.hpp"
#include "faasmeter/kalman.hpp"
#include "faasmeter/pipeline.hpp"
#include "faasmeter/scenario.hpp"
#include "faasmeter/simulator.hpp"
#include "faasmeter/trace.hpp"

namespace faasmeter::validation {

using Footprints = std::map<std::string, double>;

inline std::map<std::string, double> individual_difference(const Footprints& j, const Footprints& j_star) {
  std::map<std::string, double> out;
  for (const auto& [id, truth] : j_star) {
    if (!(truth > 0.0)) throw InvariantError("zero ground truth for '" + id + "'");
    auto it = j.find(id);
    const double est = it == j.end() ? 0.0 : it->second;
    out[id] = std::abs(est - truth) / truth;
  }
  return out;
}

inline double individual_difference(double j, double j_star) {
  if (!(j_star > 0.0)) throw InvariantError("zero ground truth");
  return std::abs(j - j_star) / j_star;
}

// Vectors are laid out over the sorted union of ids; missing entries are 0.
inline double cosine_similarity(const Footprints& j, const Footprints& j_star) {
  std::map<std::string, std::pair<double, double>> both;
  for (const auto& [id, v] : j) both[id].first = v;
  for (const auto& [id, v] : j_star) both[id].second = v;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [id, ab] : both) {
    dot += ab.first * ab.second;
    na += ab.first * ab.first;
    nb += ab.second * ab.second;
  }
  if (na == 0.0 || nb == 0.0) throw InvariantError("cosine similarity of a zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double total_error(const Eigen::VectorXd& measured, const Eigen::VectorXd& predicted) {
  if (measured.size() != predicted.size()) throw InvariantError("total error needs aligned series");
  if (measured.size() == 0) throw InvariantError("total error of an empty series");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < measured.size(); ++i) {
    if (!(measured(i) > 0.0)) throw InvariantError("zero measured power sample in total error");
    acc += std::abs(measured(i) - predicted(i)) / measured(i);
  }
  return acc / static_cast<double>(measured.size());
}

inline double total_error(const PowerTrace& measured, const PowerTrace& predicted) {
  if (measured.size() != predicted.size()) throw InvariantError("total error needs aligned grids");
  Eigen::VectorXd a(static_cast<Eigen::Index>(measured.size())), b(a.size());
  for (std::size_t i = 0; i < measured.size(); ++i) {
    if (std::abs(measured.samples[i].timestamp - predicted.samples[i].timestamp) > 1e-9)
      throw InvariantError("total error needs aligned grids");
    a(static_cast<Eigen::Index>(i)) = measured.samples[i].watts;
    b(static_cast<Eigen::Index>(i)) = predicted.samples[i].watts;
  }
  return total_error(a, b);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// sigma(J) / sigma(T) with standard deviations; +inf when latency never varies.
inline double latency_normalized_variance(const std::vector<double>& j, const std::vector<double>& t) {
  if (j.size() < 2 || t.size() < 2) throw InvariantError("latency-normalized variance needs >= 2 observations");
  const double st = stddev(t);
  if (st == 0.0) return std::numeric_limits<double>::infinity();
  return stddev(j) / st;
}

inline double coefficient_of_variation(const std::vector<double>& v) {
  const double m = mean(v);
  if (v.size() < 2 || m == 0.0) return 0.0;
  return stddev(v) / std::abs(m);
}

// ---------------------------------------------------------------------------

struct Marginal {
  double joules_per_invocation = 0.0;
  std::size_t invocations = 0;
  bool negative = false;  // reported raw, never clamped
};

inline Marginal marginal_energy(const PowerTrace& full, const PowerTrace& ablated, std::size_t invocations) {
  if (invocations == 0) throw InvariantError("marginal energy of a function with zero invocations");
  Marginal m;
  m.invocations = invocations;
  m.joules_per_invocation = (energy(full) - energy(ablated)) / static_cast<double>(invocations);
  m.negative = m.joules_per_invocation < 0.0;
  return m;
}

// Paired ablations: every surviving function keeps its schedule, the noise
// stream and the horizon are shared.
inline std::map<std::string, Marginal> marginal_footprints(const sim::WorkloadSpec& spec, const sim::GroundTruth& truth,
                                                           const sim::SynthesisOptions& opt,
                                                           const sim::SimulatedRun& full) {
  std::map<std::string, Marginal> out;
  auto o = opt;
  o.horizon_s = full.horizon_s;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : full.invocations.samples) ++counts[r.function_id];
  for (const auto& f : spec.functions) {
    auto ablated = sim::simulate(sim::without_function(spec, f.id), truth, o);
    if (ablated.horizon_s != full.horizon_s) throw InvariantError("paired runs disagree on the horizon");
    auto it = counts.find(f.id);
    if (it == counts.end()) continue;
    out[f.id] = marginal_energy(full.system_power, ablated.system_power, it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct FunctionMetrics {
  std::string function_id;
  double estimated_joules = 0.0;
  double true_joules = 0.0;  // individual + control plane
  double marginal_joules = 0.0;
  bool marginal_negative = false;
  double individual_difference = 0.0;  // against the marginal
  double latency_normalized_variance = std::numeric_limits<double>::quiet_NaN();
  double footprint_cov = std::numeric_limits<double>::quiet_NaN();
  double watts = 0.0;
};

struct ValidationReport {
  std::string scenario_id;
  std::string mode;
  bool online = false;
  std::vector<FunctionMetrics> functions;
  double cosine_vs_marginal = 0.0;
  double cosine_vs_truth = 0.0;
  std::vector<double> window_total_errors;
  double total_error_mean = 0.0;
  double fraction_windows_below_10pct = 0.0;
  double idle_watts = 0.0;
  std::optional<double> skew_offset_s;
};

// Per-window spread of the footprint and per-invocation J_k = X_w * tau_k.
struct StabilitySeries {
  std::map<std::string, std::vector<double>> window_footprints;
  std::map<std::string, std::vector<double>> invocation_joules;
  std::map<std::string, std::vector<double>> invocation_latency;
};

inline StabilitySeries stability_series(const pipeline::ProfileResult& res, const InvocationTrace& inv) {
  StabilitySeries s;
  for (const auto& w : res.windows) {
    for (const auto& e : w.spectrum.entries)
      if (e.activations > 0.0) s.window_footprints[e.function_id].push_back(e.j_indiv);
    for (const auto& r : inv.samples) {
      if (!(r.end >= w.window.t0 && r.end < w.window.t1)) continue;
      auto x = w.watts.find(r.function_id);
      if (x == w.watts.end()) continue;
      s.invocation_joules[r.function_id].push_back(x->second * r.latency());
      s.invocation_latency[r.function_id].push_back(r.latency());
    }
  }
  return s;
}

inline ValidationReport evaluate(const Scenario& sc, const sim::SimulatedRun& run, const pipeline::ProfileResult& res,
                                 const std::map<std::string, Marginal>& marginals) {
  ValidationReport rep;
  rep.scenario_id = sc.id;
  rep.mode = std::string(kalman::to_string(res.mode));
  rep.online = res.online.has_value();
  rep.idle_watts = res.baseline_watts;
  if (res.skew.estimate) rep.skew_offset_s = res.skew.estimate->offset_s;

  const auto truth = sim::true_footprints(run, sim::FootprintPolicy::IndividualPlusControlPlane);
  const auto stab = stability_series(res, run.invocations);
  Footprints marg;
  for (const auto& [id, t] : truth) {
    FunctionMetrics fm;
    fm.function_id = id;
    fm.true_joules = t;
    auto e = res.footprints.find(id);
    fm.estimated_joules = e == res.footprints.end() ? 0.0 : e->second;
    auto w = res.watts.find(id);
    fm.watts = w == res.watts.end() ? 0.0 : w->second;
    auto m = marginals.find(id);
    if (m != marginals.end()) {
      fm.marginal_joules = m->second.joules_per_invocation;
      fm.marginal_negative = m->second.negative;
      marg[id] = fm.marginal_joules;
      if (fm.marginal_joules > 0.0) fm.individual_difference = individual_difference(fm.estimated_joules, fm.marginal_joules);
    }
    auto j = stab.invocation_joules.find(id);
    if (j != stab.invocation_joules.end() && j->second.size() >= 2)
      fm.latency_normalized_variance = latency_normalized_variance(j->second, stab.invocation_latency.at(id));
    auto c = stab.window_footprints.find(id);
    if (c != stab.window_footprints.end() && c->second.size() >= 2) fm.footprint_cov = coefficient_of_variation(c->second);
    rep.functions.push_back(fm);
  }
  rep.cosine_vs_truth = cosine_similarity(res.footprints, truth);
  if (!marg.empty()) rep.cosine_vs_marginal = cosine_similarity(res.footprints, marg);

  std::size_t below = 0;
  for (const auto& w : res.windows) {
    if (w.measured.size() == 0) continue;
    const double te = total_error(w.measured, w.predicted);
    rep.window_total_errors.push_back(te);
    if (te < 0.10) ++below;
  }
  rep.total_error_mean = mean(rep.window_total_errors);
  if (!rep.window_total_errors.empty())
    rep.fraction_windows_below_10pct = static_cast<double>(below) / static_cast<double>(rep.window_total_errors.size());
  return rep;
}

inline ProfileConfig config_for(const Scenario& sc, kalman::SolveMode mode, double idle_watts) {
  auto cfg = sc.profile;
  cfg.mode = mode;
  if (!cfg.idle_watts) cfg.idle_watts = idle_watts;
  return cfg;
}

// Full run + ablations once, then one profile per mode.
inline std::vector<ValidationReport> run_validation(const Scenario& sc, const std::vector<kalman::SolveMode>& modes) {
  auto run = sim::simulate(sc.workload, sc.truth, sc.synthesis);
  const auto marginals = marginal_footprints(sc.workload, sc.truth, sc.synthesis, run);
  const double idle = sc.profile.idle_watts ? *sc.profile.idle_watts
                                            : pipeline::calibrate_idle(sc.truth, sc.synthesis, sc.workload.seed);
  std::vector<ValidationReport> out;
  const auto traces = pipeline::from_run(run);
  for (auto mode : modes) {
    auto res = pipeline::profile(traces, config_for(sc, mode, idle));
    out.push_back(evaluate(sc, run, res, marginals));
  }
  return out;
}

inline nlohmann::json to_json(const ValidationReport& r) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return "inf";
    return v;
  };
  nlohmann::json j;
  j["scenario"] = r.scenario_id;
  j["mode"] = r.mode;
  j["online"] = r.online;
  j["cosine_vs_marginal"] = r.cosine_vs_marginal;
  j["cosine_vs_truth"] = r.cosine_vs_truth;
  j["total_error_mean"] = r.total_error_mean;
  j["fraction_windows_total_error_below_0.10"] = r.fraction_windows_below_10pct;
  j["idle_watts"] = r.idle_watts;
  j["skew_offset_s"] = r.skew_offset_s ? nlohmann::json(*r.skew_offset_s) : nlohmann::json(nullptr);
  j["functions"] = nlohmann::json::array();
  for (const auto& f : r.functions) {
    j["functions"].push_back({{"function_id", f.function_id},
                              {"watts", f.watts},
                              {"estimated_joules", f.estimated_joules},
                              {"true_joules", f.true_joules},
                              {"marginal_joules", f.marginal_joules},
                              {"marginal_negative", f.marginal_negative},
                              {"individual_difference", f.individual_difference},
                              {"latency_normalized_variance", num(f.latency_normalized_variance)},
                              {"footprint_cov", num(f.footprint_cov)}});
  }
  return j;
}

}  // namespace faasmeter::validation
