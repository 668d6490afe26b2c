#pragma once

#include "ltrack/datamodel.hpp"

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ltrack {

struct EvalTolerances {
  double onset_tol_s = 0.050;
  double offset_tol_s = 0.100;
  double pitch_tol_cents = 50.0;

  void validate() const;
  bool operator==(const EvalTolerances&) const = default;
};

/// A pitched point in time (an onset, an offset, or a blob peak).
struct PitchEvent {
  double time_s = 0.0;
  double pitch_midi = 0.0;
  double reliability = 0.0;
};

/// Slack added to both tolerances so that deviations equal to the tolerance
/// survive floating-point noise.
inline constexpr double kToleranceGuard = 1e-9;

bool admissible(const PitchEvent& ref, const PitchEvent& est, double time_tol_s, double pitch_tol_cents);

/// Maximum-cardinality matching as (ref index, est index) pairs, ordered by ref index.
std::vector<std::pair<int, int>> match_events(std::span<const PitchEvent> ref, std::span<const PitchEvent> est,
                                              double time_tol_s, double pitch_tol_cents);

struct Counts {
  long tp = 0;
  long n_ref = 0;
  long n_est = 0;

  double f() const;
  double precision() const;
  double recall() const;
  Counts& operator+=(const Counts& o);
  bool operator==(const Counts&) const = default;
};

/// 2 tp / (n_ref + n_est); 1 when both are empty.
double f_measure(long tp, long n_ref, long n_est);

std::vector<PitchEvent> onset_events(std::span<const NoteEvent> notes);
std::vector<PitchEvent> offset_events(std::span<const NoteEvent> notes);

Counts eval_events(std::span<const PitchEvent> ref, std::span<const PitchEvent> est, double time_tol_s,
                   double pitch_tol_cents);
Counts eval_onsets(std::span<const NoteEvent> ref, std::span<const NoteEvent> est, const EvalTolerances& tol);
/// Offsets scored as standalone (pitch, offset time) events.
Counts eval_offsets(std::span<const NoteEvent> ref, std::span<const NoteEvent> est, const EvalTolerances& tol);

/// Pitches (MIDI) sounding on each frame.
using FramePitches = std::vector<std::vector<double>>;
/// Notes rendered to frames with the [round(on/hop), round(off/hop)) convention.
FramePitches notes_to_frames(std::span<const NoteEvent> notes, const GridSpec& grid, int n_frames);

/// Per-frame one-to-one matching of pitches within the pitch tolerance.
Counts eval_framewise(const FramePitches& ref, const FramePitches& est, const EvalTolerances& tol);
Counts eval_framewise(std::span<const NoteEvent> ref, const FramePitches& est, const GridSpec& grid,
                      const EvalTolerances& tol);

/// n / sum(1/v); 0 if any value is 0.
double harmonic_mean(std::span<const double> values);

/// Fraction of annotated onsets with a ridge point within the onset and pitch tolerances.
/// ridge_points[t] lists (time_s, pitch_midi) of every ridge point of track t.
double upper_limit_onsets(std::span<const TrackAnnotation> annotations,
                          std::span<const std::vector<PitchEvent>> ridge_points, const EvalTolerances& tol);

/// Per-subset counts for one processing step.
struct StepScores {
  std::map<std::string, Counts> framewise, onset, offset;
  bool has_framewise = true;
};

/// Table-shaped report: rows are steps, columns F_fr / F_on / F_off as the
/// harmonic mean over subsets (x100).
struct EvalReport {
  std::vector<std::string> subsets;
  std::vector<std::pair<std::string, StepScores>> steps;

  const StepScores& step(const std::string& name) const;
  bool has_step(const std::string& name) const;
  /// Harmonic mean across subsets of the per-subset F, times 100.
  double aggregate(const std::string& step, const std::string& column) const;
  std::string to_csv() const;
  std::string to_json() const;
};

}  // namespace ltrack
