#pragma once

#include "ltrack/eval.hpp"

#include <functional>
#include <string>
#include <vector>

namespace ltrack {

struct GridAxis {
  std::string name;
  std::vector<double> values;
};

struct GridSearchResult {
  std::vector<double> best;
  double best_value = 0.0;
  /// Every point of the Cartesian product (first axis slowest) with its value;
  /// non-finite values are kept in the table but never selected.
  std::vector<std::pair<std::vector<double>, double>> table;
};

using Objective = std::function<double(const std::vector<double>&)>;

/// Exhaustive search for the maximum. Ties go to the point enumerated first,
/// i.e. to earlier-listed values. Throws if every value is non-finite.
GridSearchResult grid_search(const std::vector<GridAxis>& axes, const Objective& objective, int jobs = 1);

/// Reference and scored estimates of one track.
struct SweepTrack {
  std::vector<PitchEvent> ref;
  std::vector<PitchEvent> est;
};

struct SweepResult {
  double threshold = 0.0;  // keep events with reliability > threshold
  double f = 0.0;
  std::vector<std::pair<double, double>> table;  // candidate -> pooled F
};

/// Candidate thresholds: -inf, midpoints between consecutive distinct
/// reliabilities, +inf. Pooled F is recomputed with full matching at each;
/// ties go to the lowest threshold. No events: -inf.
SweepResult reliability_sweep(const std::vector<SweepTrack>& tracks, double time_tol_s, double pitch_tol_cents);

/// Pooled F over tracks after keeping events with reliability > threshold.
double sweep_f(const std::vector<SweepTrack>& tracks, double threshold, double time_tol_s, double pitch_tol_cents);

}  // namespace ltrack
