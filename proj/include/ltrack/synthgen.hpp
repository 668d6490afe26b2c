#pragma once

#include "ltrack/datamodel.hpp"

#include <cstdint>
#include <string>

namespace ltrack::synth {

/// Score and rendering parameters for one family of synthetic tracks.
struct SynthConfig {
  int n_notes_min = 6;
  int n_notes_max = 12;
  int polyphony_max = 3;
  double duration_min_s = 0.2;   // per note
  double duration_max_s = 1.2;
  double track_duration_s = 4.0;
  double vibrato_rate_hz = 5.5;
  double vibrato_depth_cents = 0.0;
  int n_partials = 5;
  double partial_rolloff = 0.7;
  double amplitude_decay_per_s = 0.0;
  double attack_s = 0.02;
  double noise_floor = 0.03;
  std::uint64_t seed = 1;

  // Rendering details beyond the basic envelope.
  double attack_floor = 0.3;        // envelope level on the first sounding frame
  double release_s = 0.0;           // exponential tail after the offset
  double ridge_width_cents = 30.0;  // Gaussian std dev across pitch
  // Score structure.
  double repeat_probability = 0.0;  // chance a note re-articulates an earlier pitch
  double repeat_gap_max_s = 0.03;
  double fractional_probability = 0.2;  // pitches off the semitone lattice
  double min_simultaneous_interval = 1.5;  // semitones between overlapping notes

  void validate() const;
};

struct DistortionParams {
  double gain = 1.0;
  double eq_tilt_db_per_octave = 0.0;
  double added_noise_sigma = 0.0;
  double compression_exponent = 1.0;

  void validate() const;
  bool is_identity() const;
};

/// Random score obeying the config; deterministic in rng_seed.
TrackAnnotation sample_score(const SynthConfig& config, std::uint64_t rng_seed,
                             const std::string& track_id = "track");

/// Additive ridge rendering of the fundamentals.
Pitchogram render_pitchogram(const TrackAnnotation& annotation, const SynthConfig& config,
                             const GridSpec& grid);

/// Same envelopes with n_partials harmonics over a log-frequency grid.
/// Partials falling outside the grid are dropped.
Pitchogram render_spectrogram(const TrackAnnotation& annotation, const SynthConfig& config,
                              const GridSpec& freq_grid);

/// Half-wave rectified difference between consecutive frames.
Pitchogram spectral_flux(const Pitchogram& spectrogram);

/// Sums flux over time bins of `width` frames covering [f - width/2, f + width/2).
Pitchogram bin_flux(const Pitchogram& flux, int width);

/// out = gain * in^exponent * tilt(pitch) + N(0, sigma), tilt in dB per octave
/// about the grid's centre pitch.
Pitchogram apply_distortion(const Pitchogram& in, const DistortionParams& params, std::uint64_t rng_seed);

/// Vibrato phase used for note `index` of a track rendered with `seed`.
double vibrato_phase(std::uint64_t seed, std::size_t index);

/// Envelope of a note on frame f (0 when silent), shared by both renderers.
double note_envelope(const NoteEvent& note, const SynthConfig& config, const GridSpec& grid, int frame);

/// Instantaneous pitch of a note (MIDI) at frame f.
double note_pitch_at(const NoteEvent& note, const SynthConfig& config, double phase, const GridSpec& grid,
                     int frame);

}  // namespace ltrack::synth
