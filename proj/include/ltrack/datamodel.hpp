#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace ltrack {

using FloatGrid = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ByteGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kMinPitchMidi = 26.0;
inline constexpr double kMaxPitchMidi = 104.0;

struct NoteEvent {
  double pitch_midi = 0.0;  // fractional, 100 cents per unit
  double onset_s = 0.0;
  double offset_s = 0.0;

  bool operator==(const NoteEvent&) const = default;
};

/// Throws ltrack::Error unless offset > onset and the pitch lies in [26, 104].
void validate(const NoteEvent& note);

struct TrackAnnotation {
  std::string track_id;
  std::vector<NoteEvent> notes;
  double duration_s = 0.0;

  bool operator==(const TrackAnnotation&) const = default;
};

/// Sorts notes by onset, ties by ascending pitch.
void sort_notes(std::vector<NoteEvent>& notes);

/// Checks note invariants, ordering and that every note ends before duration_s.
void validate(const TrackAnnotation& track);

/// Pitch-bin x time-frame lattice. Bins run from pitch_min_midi to
/// pitch_max_midi inclusive in steps of bin_cents.
struct GridSpec {
  double pitch_min_midi = kMinPitchMidi;
  double pitch_max_midi = kMaxPitchMidi;
  double bin_cents = 10.0;
  double hop_s = 0.0058;

  int n_bins() const;
  /// Frames needed to cover a track of the given duration, including the
  /// frame that holds an offset at duration_s.
  int n_frames(double duration_s) const;
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

double pitch_to_bin(double pitch_midi, const GridSpec& grid);
double bin_to_pitch(double bin, const GridSpec& grid);
double time_to_frame(double t_s, const GridSpec& grid);
double frame_to_time(double frame, const GridSpec& grid);
/// Nearest frame, round-half-away-from-zero.
int nearest_frame(double t_s, const GridSpec& grid);

/// Activation grid, values(bin, frame).
struct Pitchogram {
  GridSpec grid;
  FloatGrid values;

  int n_bins() const { return static_cast<int>(values.rows()); }
  int n_frames() const { return static_cast<int>(values.cols()); }
  void validate() const;
};

Pitchogram make_pitchogram(const GridSpec& grid, int n_frames);

/// A time-ordered pitch contour.
struct Ridge {
  std::vector<int> frames;          // strictly consecutive
  std::vector<double> pitch_bins;   // one per frame
  std::vector<double> activations;  // one per frame

  std::size_t size() const { return frames.size(); }
  int first_frame() const { return frames.front(); }
  int last_frame() const { return frames.back(); }
  double activation_sum() const;

  bool operator==(const Ridge&) const = default;
};

/// Throws unless the three sequences agree, frames step by one and no
/// consecutive pitch jump exceeds max_jump_bins.
void validate(const Ridge& ridge, double max_jump_bins);

struct TargetSet {
  ByteGrid framewise;
  ByteGrid onset_map;
  ByteGrid offset_map;
};

/// Builds framewise / onset / offset targets from one annotation.
/// A note is active on frames [round(onset/hop), round(offset/hop)) and on
/// bins within pitch_smear_bins of its nearest bin.
TargetSet derive_targets(const TrackAnnotation& annotation, const GridSpec& grid,
                         int onset_smear_frames, int pitch_smear_bins);

}  // namespace ltrack
