#include "ltrack/eval.hpp"

#include "ltrack/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace ltrack {

using nlohmann::json;

void EvalTolerances::validate() const {
  if (!(onset_tol_s > 0) || !(offset_tol_s > 0) || !(pitch_tol_cents > 0)) {
    throw ConfigError("evaluation tolerances must be positive");
  }
}

bool admissible(const PitchEvent& ref, const PitchEvent& est, double time_tol_s, double pitch_tol_cents) {
  return std::abs(ref.time_s - est.time_s) <= time_tol_s + kToleranceGuard &&
         std::abs(ref.pitch_midi - est.pitch_midi) * 100.0 <= pitch_tol_cents + kToleranceGuard;
}

namespace {

bool augment(int r, const std::vector<std::vector<int>>& adj, std::vector<int>& match_est, std::vector<char>& seen) {
  for (int e : adj[static_cast<std::size_t>(r)]) {
    if (seen[static_cast<std::size_t>(e)]) continue;
    seen[static_cast<std::size_t>(e)] = 1;
    if (match_est[static_cast<std::size_t>(e)] < 0 || augment(match_est[static_cast<std::size_t>(e)], adj, match_est, seen)) {
      match_est[static_cast<std::size_t>(e)] = r;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<std::pair<int, int>> match_events(std::span<const PitchEvent> ref, std::span<const PitchEvent> est,
                                              double time_tol_s, double pitch_tol_cents) {
  // Sort est by time so admissible neighbours form a contiguous window.
  std::vector<int> order(est.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return est[a].time_s < est[b].time_s; });
  std::vector<double> times(est.size());
  for (std::size_t i = 0; i < order.size(); ++i) times[i] = est[static_cast<std::size_t>(order[i])].time_s;

  std::vector<std::vector<int>> adj(ref.size());
  for (std::size_t r = 0; r < ref.size(); ++r) {
    const double lo = ref[r].time_s - time_tol_s - kToleranceGuard;
    auto it = std::lower_bound(times.begin(), times.end(), lo);
    for (auto k = static_cast<std::size_t>(it - times.begin()); k < times.size(); ++k) {
      if (times[k] > ref[r].time_s + time_tol_s + kToleranceGuard) break;
      const int e = order[k];
      if (admissible(ref[r], est[static_cast<std::size_t>(e)], time_tol_s, pitch_tol_cents)) adj[r].push_back(e);
    }
    std::sort(adj[r].begin(), adj[r].end());
  }
  std::vector<int> match_est(est.size(), -1);
  std::vector<char> seen(est.size());
  for (std::size_t r = 0; r < ref.size(); ++r) {
    std::fill(seen.begin(), seen.end(), 0);
    augment(static_cast<int>(r), adj, match_est, seen);
  }
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t e = 0; e < est.size(); ++e)
    if (match_est[e] >= 0) pairs.emplace_back(match_est[e], static_cast<int>(e));
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

double f_measure(long tp, long n_ref, long n_est) {
  if (tp < 0 || n_ref < 0 || n_est < 0 || tp > std::min(n_ref, n_est)) {
    throw Error("f_measure: true positives exceed reference or estimate count");
  }
  if (n_ref + n_est == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(n_ref + n_est);
}

double Counts::f() const { return f_measure(tp, n_ref, n_est); }
double Counts::precision() const { return n_est == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(n_est); }
double Counts::recall() const { return n_ref == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(n_ref); }
Counts& Counts::operator+=(const Counts& o) {
  tp += o.tp;
  n_ref += o.n_ref;
  n_est += o.n_est;
  return *this;
}

std::vector<PitchEvent> onset_events(std::span<const NoteEvent> notes) {
  std::vector<PitchEvent> out;
  for (const auto& n : notes) out.push_back({n.onset_s, n.pitch_midi, 0.0});
  return out;
}

std::vector<PitchEvent> offset_events(std::span<const NoteEvent> notes) {
  std::vector<PitchEvent> out;
  for (const auto& n : notes) out.push_back({n.offset_s, n.pitch_midi, 0.0});
  return out;
}

Counts eval_events(std::span<const PitchEvent> ref, std::span<const PitchEvent> est, double time_tol_s,
                   double pitch_tol_cents) {
  Counts c;
  c.n_ref = static_cast<long>(ref.size());
  c.n_est = static_cast<long>(est.size());
  c.tp = static_cast<long>(match_events(ref, est, time_tol_s, pitch_tol_cents).size());
  return c;
}

Counts eval_onsets(std::span<const NoteEvent> ref, std::span<const NoteEvent> est, const EvalTolerances& tol) {
  return eval_events(onset_events(ref), onset_events(est), tol.onset_tol_s, tol.pitch_tol_cents);
}

Counts eval_offsets(std::span<const NoteEvent> ref, std::span<const NoteEvent> est, const EvalTolerances& tol) {
  return eval_events(offset_events(ref), offset_events(est), tol.offset_tol_s, tol.pitch_tol_cents);
}

FramePitches notes_to_frames(std::span<const NoteEvent> notes, const GridSpec& grid, int n_frames) {
  FramePitches out(static_cast<std::size_t>(std::max(n_frames, 0)));
  for (const auto& n : notes) {
    const int a = std::max(nearest_frame(n.onset_s, grid), 0);
    const int b = std::min(nearest_frame(n.offset_s, grid), n_frames);
    for (int f = a; f < b; ++f) out[static_cast<std::size_t>(f)].push_back(n.pitch_midi);
  }
  return out;
}

Counts eval_framewise(const FramePitches& ref, const FramePitches& est, const EvalTolerances& tol) {
  if (ref.size() != est.size()) throw Error("eval_framewise: reference and estimate cover different frame counts");
  Counts c;
  std::vector<double> a, b;
  for (std::size_t f = 0; f < ref.size(); ++f) {
    a = ref[f];
    b = est[f];
    c.n_ref += static_cast<long>(a.size());
    c.n_est += static_cast<long>(b.size());
    if (a.empty() || b.empty()) continue;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    // Equal-width intervals on a line: the sorted greedy sweep is a maximum matching.
    std::size_t i = 0, j = 0;
    const double tol_midi = (tol.pitch_tol_cents + kToleranceGuard) / 100.0;
    while (i < a.size() && j < b.size()) {
      if (std::abs(a[i] - b[j]) <= tol_midi) {
        ++c.tp;
        ++i;
        ++j;
      } else if (a[i] < b[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }
  return c;
}

Counts eval_framewise(std::span<const NoteEvent> ref, const FramePitches& est, const GridSpec& grid,
                      const EvalTolerances& tol) {
  return eval_framewise(notes_to_frames(ref, grid, static_cast<int>(est.size())), est, tol);
}

double harmonic_mean(std::span<const double> values) {
  if (values.empty()) throw Error("harmonic_mean: empty list");
  double inv = 0.0;
  for (double v : values) {
    if (v < 0 || !std::isfinite(v)) throw Error("harmonic_mean: values must be finite and non-negative");
    if (v == 0) return 0.0;
    inv += 1.0 / v;
  }
  return static_cast<double>(values.size()) / inv;
}

double upper_limit_onsets(std::span<const TrackAnnotation> annotations,
                          std::span<const std::vector<PitchEvent>> ridge_points, const EvalTolerances& tol) {
  if (annotations.size() != ridge_points.size()) throw Error("upper_limit_onsets: one ridge set per track required");
  long total = 0, covered = 0;
  for (std::size_t t = 0; t < annotations.size(); ++t) {
    std::vector<PitchEvent> pts = ridge_points[t];
    std::sort(pts.begin(), pts.end(), [](const PitchEvent& a, const PitchEvent& b) { return a.time_s < b.time_s; });
    for (const auto& n : annotations[t].notes) {
      ++total;
      const PitchEvent ref{n.onset_s, n.pitch_midi, 0.0};
      auto it = std::lower_bound(pts.begin(), pts.end(), n.onset_s - tol.onset_tol_s - kToleranceGuard,
                                 [](const PitchEvent& p, double t0) { return p.time_s < t0; });
      for (; it != pts.end() && it->time_s <= n.onset_s + tol.onset_tol_s + kToleranceGuard; ++it) {
        if (admissible(ref, *it, tol.onset_tol_s, tol.pitch_tol_cents)) {
          ++covered;
          break;
        }
      }
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(covered) / static_cast<double>(total);
}

const StepScores& EvalReport::step(const std::string& name) const {
  for (const auto& [n, s] : steps)
    if (n == name) return s;
  throw Error("report has no step '" + name + "'");
}

bool EvalReport::has_step(const std::string& name) const {
  return std::any_of(steps.begin(), steps.end(), [&](const auto& p) { return p.first == name; });
}

double EvalReport::aggregate(const std::string& step_name, const std::string& column) const {
  const StepScores& s = step(step_name);
  const std::map<std::string, Counts>* m = nullptr;
  if (column == "F_fr") m = &s.framewise;
  else if (column == "F_on") m = &s.onset;
  else if (column == "F_off") m = &s.offset;
  else throw Error("unknown report column '" + column + "'");
  if (column == "F_fr" && !s.has_framewise) throw Error("step '" + step_name + "' has no framewise score");
  std::vector<double> f;
  for (const auto& subset : subsets) f.push_back(m->at(subset).f() * 100.0);
  return harmonic_mean(f);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

json counts_json(const Counts& c) {
  return {{"tp", c.tp}, {"n_ref", c.n_ref}, {"n_est", c.n_est}, {"precision", c.precision()},
          {"recall", c.recall()}, {"f", c.f()}};
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::string out = "step,F_fr,F_on,F_off\n";
  for (const auto& [name, s] : steps) {
    out += name + ",";
    out += s.has_framewise ? fmt(aggregate(name, "F_fr")) : std::string{};
    out += "," + fmt(aggregate(name, "F_on")) + "," + fmt(aggregate(name, "F_off")) + "\n";
  }
  return out;
}

std::string EvalReport::to_json() const {
  json j;
  j["subsets"] = subsets;
  json steps_j = json::array();
  for (const auto& [name, s] : steps) {
    json sj;
    sj["step"] = name;
    json agg;
    if (s.has_framewise) agg["F_fr"] = aggregate(name, "F_fr");
    agg["F_on"] = aggregate(name, "F_on");
    agg["F_off"] = aggregate(name, "F_off");
    sj["aggregate"] = agg;
    json per;
    for (const auto& subset : subsets) {
      json d;
      if (s.has_framewise) d["framewise"] = counts_json(s.framewise.at(subset));
      d["onset"] = counts_json(s.onset.at(subset));
      d["offset"] = counts_json(s.offset.at(subset));
      per[subset] = d;
    }
    sj["subsets"] = per;
    steps_j.push_back(sj);
  }
  j["steps"] = steps_j;
  return j.dump(1);
}

}  // namespace ltrack
