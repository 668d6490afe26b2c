#include "ltrack/datamodel.hpp"

#include "ltrack/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ltrack {

void validate(const NoteEvent& note) {
  if (!(note.offset_s > note.onset_s)) {
    std::ostringstream msg;
    msg << "note at " << note.onset_s << " s has offset " << note.offset_s << " s not after onset";
    throw Error(msg.str());
  }
  if (!(note.pitch_midi >= kMinPitchMidi && note.pitch_midi <= kMaxPitchMidi)) {
    std::ostringstream msg;
    msg << "note pitch " << note.pitch_midi << " outside [" << kMinPitchMidi << ", " << kMaxPitchMidi << "]";
    throw Error(msg.str());
  }
}

void sort_notes(std::vector<NoteEvent>& notes) {
  std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    if (a.onset_s != b.onset_s) return a.onset_s < b.onset_s;
    return a.pitch_midi < b.pitch_midi;
  });
}

void validate(const TrackAnnotation& track) {
  for (std::size_t i = 0; i < track.notes.size(); ++i) {
    const auto& n = track.notes[i];
    validate(n);
    if (n.offset_s > track.duration_s) {
      std::ostringstream msg;
      msg << "track " << track.track_id << ": note " << i << " ends at " << n.offset_s
          << " s, after track duration " << track.duration_s << " s";
      throw Error(msg.str());
    }
    if (i > 0) {
      const auto& p = track.notes[i - 1];
      if (n.onset_s < p.onset_s || (n.onset_s == p.onset_s && n.pitch_midi < p.pitch_midi)) {
        throw Error("track " + track.track_id + ": notes not sorted by onset then pitch");
      }
    }
  }
}

int GridSpec::n_bins() const {
  return static_cast<int>(std::llround((pitch_max_midi - pitch_min_midi) * 100.0 / bin_cents)) + 1;
}

int GridSpec::n_frames(double duration_s) const {
  return nearest_frame(duration_s, *this) + 1;
}

void GridSpec::validate() const {
  if (!(pitch_max_midi > pitch_min_midi)) throw ConfigError("grid: pitch_max_midi must exceed pitch_min_midi");
  if (!(bin_cents > 0.0)) throw ConfigError("grid: bin_cents must be positive");
  if (!(hop_s > 0.0)) throw ConfigError("grid: hop_s must be positive");
  const double steps = (pitch_max_midi - pitch_min_midi) * 100.0 / bin_cents;
  if (std::abs(steps - std::round(steps)) > 1e-9) {
    throw ConfigError("grid: pitch range is not a whole number of bins");
  }
}

double pitch_to_bin(double pitch_midi, const GridSpec& grid) {
  return (pitch_midi - grid.pitch_min_midi) * 100.0 / grid.bin_cents;
}

double bin_to_pitch(double bin, const GridSpec& grid) {
  return grid.pitch_min_midi + bin * grid.bin_cents / 100.0;
}

double time_to_frame(double t_s, const GridSpec& grid) { return t_s / grid.hop_s; }

double frame_to_time(double frame, const GridSpec& grid) { return frame * grid.hop_s; }

int nearest_frame(double t_s, const GridSpec& grid) {
  return static_cast<int>(std::lround(time_to_frame(t_s, grid)));
}

void Pitchogram::validate() const {
  grid.validate();
  if (values.rows() != grid.n_bins()) throw Error("pitchogram: row count does not match grid");
  if (!values.allFinite()) throw Error("pitchogram: non-finite activation");
}

Pitchogram make_pitchogram(const GridSpec& grid, int n_frames) {
  grid.validate();
  Pitchogram p;
  p.grid = grid;
  p.values = FloatGrid::Zero(grid.n_bins(), n_frames);
  return p;
}

double Ridge::activation_sum() const {
  double s = 0.0;
  for (double a : activations) s += a;
  return s;
}

void validate(const Ridge& ridge, double max_jump_bins) {
  if (ridge.frames.empty()) throw Error("ridge: empty");
  if (ridge.pitch_bins.size() != ridge.frames.size() || ridge.activations.size() != ridge.frames.size()) {
    throw Error("ridge: sequence lengths differ");
  }
  for (std::size_t i = 1; i < ridge.frames.size(); ++i) {
    if (ridge.frames[i] != ridge.frames[i - 1] + 1) throw Error("ridge: frames not consecutive");
    if (std::abs(ridge.pitch_bins[i] - ridge.pitch_bins[i - 1]) > max_jump_bins) {
      throw Error("ridge: pitch jump exceeds limit");
    }
  }
}

namespace {

void mark(ByteGrid& g, int bin_lo, int bin_hi, int f_lo, int f_hi) {
  bin_lo = std::max(bin_lo, 0);
  bin_hi = std::min(bin_hi, static_cast<int>(g.rows()) - 1);
  f_lo = std::max(f_lo, 0);
  f_hi = std::min(f_hi, static_cast<int>(g.cols()) - 1);
  for (int b = bin_lo; b <= bin_hi; ++b)
    for (int f = f_lo; f <= f_hi; ++f) g(b, f) = 1;
}

}  // namespace

TargetSet derive_targets(const TrackAnnotation& annotation, const GridSpec& grid,
                         int onset_smear_frames, int pitch_smear_bins) {
  grid.validate();
  if (onset_smear_frames < 0 || pitch_smear_bins < 0) throw ConfigError("derive_targets: negative smear");
  const int n_bins = grid.n_bins();
  const int n_frames = grid.n_frames(annotation.duration_s);
  TargetSet t;
  t.framewise = ByteGrid::Zero(n_bins, n_frames);
  t.onset_map = ByteGrid::Zero(n_bins, n_frames);
  t.offset_map = ByteGrid::Zero(n_bins, n_frames);

  for (std::size_t i = 0; i < annotation.notes.size(); ++i) {
    const auto& n = annotation.notes[i];
    if (n.pitch_midi < grid.pitch_min_midi || n.pitch_midi > grid.pitch_max_midi) {
      std::ostringstream msg;
      msg << "track " << annotation.track_id << ": note " << i << " pitch " << n.pitch_midi
          << " outside grid [" << grid.pitch_min_midi << ", " << grid.pitch_max_midi << "]";
      throw Error(msg.str());
    }
    const int bin = static_cast<int>(std::lround(pitch_to_bin(n.pitch_midi, grid)));
    const int on = nearest_frame(n.onset_s, grid);
    const int off = nearest_frame(n.offset_s, grid);
    if (off > on) mark(t.framewise, bin - pitch_smear_bins, bin + pitch_smear_bins, on, off - 1);
    mark(t.onset_map, bin - pitch_smear_bins, bin + pitch_smear_bins, on - onset_smear_frames,
         on + onset_smear_frames);
    mark(t.offset_map, bin - pitch_smear_bins, bin + pitch_smear_bins, off - onset_smear_frames,
         off + onset_smear_frames);
  }
  return t;
}

}  // namespace ltrack
