#pragma once

// Full-spectrum footprints: J_total = J_indiv + phi_cp + phi_idle.
//
// Control-plane energy is split in proportion to invocation counts (uniform
// per invocation). Idle energy is split evenly among the functions active in
// the window, then divided by each function's own invocation count.

#include <map>
#include <string>
#include <vector>

#include "faasmeter/disagg.hpp"
#include "faasmeter/error.hpp"

namespace faasmeter::attribution {

using Activations = std::map<std::string, double>;

struct Split {
  std::map<std::string, double> per_invocation;  // joules per invocation
  std::map<std::string, double> total;           // joules over the window
  double unattributed = 0.0;                     // energy with nobody to carry it
};

inline void check_activations(const Activations& a) {
  for (const auto& [id, n] : a)
    if (!(n >= 0.0)) throw InvariantError("negative activation count for '" + id + "'");
}

inline Split split_control_plane(double j_cp, const Activations& a) {
  if (!(j_cp >= 0.0)) throw InvariantError("control-plane energy must be nonnegative");
  check_activations(a);
  double sum = 0.0;
  for (const auto& [id, n] : a) sum += n;
  Split s;
  for (const auto& [id, n] : a) {
    s.per_invocation[id] = (n > 0.0) ? j_cp / sum : 0.0;
    s.total[id] = (n > 0.0) ? j_cp * n / sum : 0.0;
  }
  if (sum <= 0.0) s.unattributed = j_cp;
  return s;
}

inline Split split_idle(double j_idle, const Activations& a) {
  if (!(j_idle >= 0.0)) throw InvariantError("idle energy must be nonnegative");
  check_activations(a);
  std::size_t m = 0;
  for (const auto& [id, n] : a)
    if (n > 0.0) ++m;
  Split s;
  for (const auto& [id, n] : a) {
    const double share = n > 0.0 ? j_idle / static_cast<double>(m) : 0.0;
    s.total[id] = share;
    s.per_invocation[id] = n > 0.0 ? share / n : 0.0;
  }
  if (m == 0) s.unattributed = j_idle;
  return s;
}

struct SpectrumEntry {
  std::string function_id;
  double j_indiv = 0.0;
  double phi_cp = 0.0;
  double phi_idle = 0.0;
  double j_total = 0.0;
  double activations = 0.0;
};

struct FootprintSpectrum {
  disagg::Window window;
  std::vector<SpectrumEntry> entries;  // sorted by function id
  double measured_energy = 0.0;
  double attributed_energy = 0.0;  // sum of J_total * activations
  double residual = 0.0;           // measured - attributed
  double unattributed_cp = 0.0;
  double unattributed_idle = 0.0;

  const SpectrumEntry* find(const std::string& id) const {
    for (const auto& e : entries)
      if (e.function_id == id) return &e;
    return nullptr;
  }
};

// x_no_idle: watts per function; mean_latency: seconds per invocation.
inline FootprintSpectrum build_spectrum(const std::map<std::string, double>& x_no_idle,
                                        const std::map<std::string, double>& mean_latency, double j_cp, double j_idle,
                                        const Activations& activations, const disagg::Window& window,
                                        double measured_energy) {
  // every function seen anywhere gets a row
  Activations a = activations;
  for (const auto& [id, x] : x_no_idle) a.emplace(id, 0.0);

  const auto cp = split_control_plane(j_cp, a);
  const auto idle = split_idle(j_idle, a);

  FootprintSpectrum s;
  s.window = window;
  s.measured_energy = measured_energy;
  s.unattributed_cp = cp.unattributed;
  s.unattributed_idle = idle.unattributed;
  for (const auto& [id, n] : a) {
    SpectrumEntry e;
    e.function_id = id;
    e.activations = n;
    if (n > 0.0) {
      auto x = x_no_idle.find(id);
      auto tau = mean_latency.find(id);
      if (x != x_no_idle.end() && tau != mean_latency.end()) e.j_indiv = x->second * tau->second;
      if (!(e.j_indiv >= 0.0)) throw InvariantError("negative individual footprint for '" + id + "'");
      e.phi_cp = cp.per_invocation.at(id);
      e.phi_idle = idle.per_invocation.at(id);
    }
    e.j_total = e.j_indiv + e.phi_cp + e.phi_idle;
    s.attributed_energy += e.j_total * e.activations;
    s.entries.push_back(std::move(e));
  }
  s.residual = s.measured_energy - s.attributed_energy;
  return s;
}

// Spectrum for one window of a disaggregation. `x_cp` is the control-plane
// column's watts; J_cp = x_cp * (cp running seconds in the window).
inline FootprintSpectrum spectrum_for_window(const disagg::ContributionMatrix& m,
                                             const std::map<std::string, double>& x_no_idle,
                                             const std::map<std::string, std::vector<double>>& latencies,
                                             double x_cp, double idle_watts, double measured_energy) {
  Activations a;
  for (std::size_t j = 0; j < m.columns.size(); ++j) {
    if (m.columns[j].kind != disagg::ColumnKind::Function) continue;
    a[m.columns[j].id] = m.A.col(static_cast<Eigen::Index>(j)).sum();
  }
  double j_cp = 0.0;
  if (auto idx = m.index_of(disagg::kControlPlaneColumn)) j_cp = x_cp * m.C.col(*idx).sum();
  std::map<std::string, double> x;
  for (const auto& [id, w] : x_no_idle)
    if (id != disagg::kControlPlaneColumn && id != disagg::kOsColumn) x[id] = w;
  return build_spectrum(x, disagg::mean_latency(latencies), j_cp, idle_watts * m.window.length(), a, m.window,
                        measured_energy);
}

}  // namespace faasmeter::attribution
