#include "ltrack/tune.hpp"

#include "ltrack/dag.hpp"
#include "ltrack/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ltrack {

GridSearchResult grid_search(const std::vector<GridAxis>& axes, const Objective& objective, int jobs) {
  if (axes.empty()) throw ConfigError("grid_search: no axes");
  std::size_t total = 1;
  for (const auto& a : axes) {
    if (a.values.empty()) throw ConfigError("grid_search: axis '" + a.name + "' has no values");
    total *= a.values.size();
  }
  GridSearchResult r;
  r.table.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    std::vector<double> point(axes.size());
    std::size_t rest = i;
    for (std::size_t k = axes.size(); k-- > 0;) {
      point[k] = axes[k].values[rest % axes[k].values.size()];
      rest /= axes[k].values.size();
    }
    r.table[i].first = std::move(point);
  }
  dag::parallel_for(total, jobs, [&](std::size_t i) { r.table[i].second = objective(r.table[i].first); });
  bool found = false;
  for (const auto& [p, v] : r.table) {
    if (!std::isfinite(v)) continue;
    if (!found || v > r.best_value) {
      r.best = p;
      r.best_value = v;
      found = true;
    }
  }
  if (!found) throw Error("grid_search: objective was non-finite at every point");
  return r;
}

double sweep_f(const std::vector<SweepTrack>& tracks, double threshold, double time_tol_s, double pitch_tol_cents) {
  Counts c;
  std::vector<PitchEvent> kept;
  for (const auto& t : tracks) {
    kept.clear();
    for (const auto& e : t.est)
      if (e.reliability > threshold) kept.push_back(e);
    c += eval_events(t.ref, kept, time_tol_s, pitch_tol_cents);
  }
  return c.f();
}

SweepResult reliability_sweep(const std::vector<SweepTrack>& tracks, double time_tol_s, double pitch_tol_cents) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> rel;
  for (const auto& t : tracks)
    for (const auto& e : t.est) rel.push_back(e.reliability);
  SweepResult r;
  r.threshold = -kInf;
  if (rel.empty()) {
    r.f = sweep_f(tracks, -kInf, time_tol_s, pitch_tol_cents);
    r.table.emplace_back(-kInf, r.f);
    return r;
  }
  std::sort(rel.begin(), rel.end());
  rel.erase(std::unique(rel.begin(), rel.end()), rel.end());
  std::vector<double> cands{-kInf};
  for (std::size_t i = 0; i + 1 < rel.size(); ++i) cands.push_back(0.5 * (rel[i] + rel[i + 1]));
  cands.push_back(kInf);
  bool first = true;
  for (double c : cands) {
    const double f = sweep_f(tracks, c, time_tol_s, pitch_tol_cents);
    r.table.emplace_back(c, f);
    if (first || f > r.f) {
      r.f = f;
      r.threshold = c;
      first = false;
    }
  }
  return r;
}

}  // namespace ltrack
