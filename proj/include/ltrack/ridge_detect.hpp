#pragma once

#include "ltrack/datamodel.hpp"

#include <span>
#include <vector>

namespace ltrack {

/// Activation-curve peak picking: smoothing half-width, absolute threshold,
/// prominence and minimum distance between peaks.
struct PeakParams {
  int smooth_halfwidth_frames = 1;
  double abs_threshold = 0.3;
  double min_prominence = 0.1;
  int min_distance_frames = 5;

  void validate() const;
  bool operator==(const PeakParams&) const = default;
};

/// Rows of a ridge-relative window: rel_min..rel_max rows, row_spacing_cents apart.
struct RelativeWindow {
  int rel_min = -93;
  int rel_max = 153;
  double row_spacing_cents = 40.0;
  std::vector<int> rel_frames{-8, -4, 0, 4};

  int n_rows() const { return rel_max - rel_min + 1; }
  int size() const { return n_rows() * static_cast<int>(rel_frames.size()); }
};

/// Source-grid bin under the ridge pitch bin `ridge_bin` of ridge_grid.
double source_bin(double ridge_bin, const GridSpec& ridge_grid, const GridSpec& source_grid);

/// Writes window.size() values (slice-major: slice s, row r at s*n_rows + r) for
/// one position centred on source bin `center` at `frame`, interpolating
/// linearly between bins. Out-of-range reads are 0.
void resample_point(const Pitchogram& source, double center, int frame, const RelativeWindow& window, float* out);

/// One [n_rows x ridge length] matrix per relative frame.
std::vector<FloatGrid> resample_along_ridge(const Pitchogram& source, const GridSpec& ridge_grid, const Ridge& ridge,
                                            const RelativeWindow& window);

/// Centred moving average over [i-h, i+h], clipped at the ends.
std::vector<double> moving_average(std::span<const double> x, int halfwidth);

/// Peak indices in ascending order.
std::vector<int> detect_onsets(std::span<const double> activation, const PeakParams& params);

/// Index of the first value above threshold, or the last index when there is none.
int detect_offset(std::span<const double> beyond_offset, double threshold = 0.5);

/// Every index where the curve rises above threshold (first values above it count).
std::vector<int> offset_crossings(std::span<const double> beyond_offset, double threshold = 0.5);

struct TentativeNote {
  int ridge = 0;
  int onset = 0;   // index within the ridge
  int offset = 0;  // exclusive index within the ridge
  double onset_activation = 0.0;
  double mean_framewise = 0.0;
  int gap_prev = 0;  // frames since the previous note's onset (or the ridge start)
  int gap_next = 0;  // frames to the next note's onset (or the ridge end)
  int ridge_length = 0;

  bool operator==(const TentativeNote&) const = default;
};

/// Curves sampled along one ridge.
struct RidgeCurves {
  std::vector<double> onset;     // onset network output
  std::vector<double> beyond;    // beyond-offset network output
  std::vector<double> framewise; // framewise pitch activation on the ridge
};

/// Each onset runs to its earliest offset at least min_length frames later, cut
/// at the next onset or the ridge end.
std::vector<TentativeNote> form_tentative_notes(std::span<const int> onsets, std::span<const int> offsets,
                                                int ridge_index, const RidgeCurves& curves, int min_length = 1);

inline constexpr int kNoteFeatureCount = 14;
/// Classifier inputs of notes[i], using its neighbours on the same ridge.
std::vector<double> note_features(const std::vector<TentativeNote>& notes, std::size_t i, const RidgeCurves& curves,
                                  const PeakParams& params);

/// Drops notes with probability < 0.5. A dropped note directly following a
/// kept one on the same ridge extends that note instead of leaving a hole.
std::vector<TentativeNote> classify_notes(const std::vector<TentativeNote>& notes, std::span<const double> probability);

/// Note event of a tentative note; pitch is the ridge pitch at its onset.
NoteEvent to_note_event(const TentativeNote& note, const Ridge& ridge, const GridSpec& grid);

/// Appends ridge pitches (MIDI) over [onset, offset) of each note to per-frame lists.
void add_note_frames(const TentativeNote& note, const Ridge& ridge, const GridSpec& grid,
                     std::vector<std::vector<double>>& frame_pitches);

}  // namespace ltrack
