#include "ltrack/synthgen.hpp"

#include "ltrack/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace ltrack::synth {

void SynthConfig::validate() const {
  if (n_notes_min < 0 || n_notes_max < n_notes_min) throw ConfigError("synth: empty n_notes range");
  if (polyphony_max < 1) throw ConfigError("synth: polyphony_max must be >= 1");
  if (!(duration_min_s > 0.0) || duration_max_s < duration_min_s) throw ConfigError("synth: empty duration range");
  if (!(track_duration_s > duration_min_s)) throw ConfigError("synth: track shorter than the shortest note");
  if (n_partials < 1) throw ConfigError("synth: n_partials must be >= 1");
  if (noise_floor < 0.0) throw ConfigError("synth: noise_floor must be >= 0");
  if (attack_s < 0.0 || release_s < 0.0) throw ConfigError("synth: negative attack or release");
  if (!(ridge_width_cents > 0.0)) throw ConfigError("synth: ridge_width_cents must be positive");
  if (attack_floor < 0.0 || attack_floor > 1.0) throw ConfigError("synth: attack_floor outside [0, 1]");
  if (repeat_probability < 0.0 || repeat_probability > 1.0) throw ConfigError("synth: repeat_probability outside [0, 1]");
  if (vibrato_depth_cents < 0.0 || vibrato_rate_hz < 0.0) throw ConfigError("synth: negative vibrato parameter");
}

void DistortionParams::validate() const {
  if (!(gain > 0.0)) throw ConfigError("distortion: gain must be positive");
  if (!(compression_exponent > 0.0 && compression_exponent <= 1.0)) {
    throw ConfigError("distortion: compression_exponent must lie in (0, 1]");
  }
  if (added_noise_sigma < 0.0) throw ConfigError("distortion: negative noise sigma");
}

bool DistortionParams::is_identity() const {
  return gain == 1.0 && eq_tilt_db_per_octave == 0.0 && added_noise_sigma == 0.0 && compression_exponent == 1.0;
}

namespace {

bool overlaps(double a_on, double a_off, double b_on, double b_off) { return a_on < b_off && b_on < a_off; }

bool fits(const std::vector<NoteEvent>& notes, const NoteEvent& cand, const SynthConfig& cfg) {
  std::vector<double> probes{cand.onset_s};
  for (const auto& n : notes) {
    if (!overlaps(n.onset_s, n.offset_s, cand.onset_s, cand.offset_s)) continue;
    if (std::abs(n.pitch_midi - cand.pitch_midi) < cfg.min_simultaneous_interval) return false;
    if (n.onset_s > cand.onset_s) probes.push_back(n.onset_s);
  }
  for (double x : probes) {
    int sounding = 1;
    for (const auto& n : notes)
      if (n.onset_s <= x && x < n.offset_s) ++sounding;
    if (sounding > cfg.polyphony_max) return false;
  }
  return true;
}

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

void check_in_grid(const TrackAnnotation& a, const SynthConfig& cfg, const GridSpec& grid) {
  const double excursion = cfg.vibrato_depth_cents / 100.0;
  for (std::size_t i = 0; i < a.notes.size(); ++i) {
    const auto& n = a.notes[i];
    if (n.pitch_midi - excursion < grid.pitch_min_midi || n.pitch_midi + excursion > grid.pitch_max_midi) {
      std::ostringstream msg;
      msg << "track " << a.track_id << ": note " << i << " (pitch " << n.pitch_midi << ", onset " << n.onset_s
          << " s) leaves the grid under vibrato of " << cfg.vibrato_depth_cents << " cents";
      throw Error(msg.str());
    }
  }
}

// Adds a Gaussian ridge of height `amp` centred at `pitch` to column f.
void splat(FloatGrid& values, const GridSpec& grid, int f, double pitch, double amp, double width_cents) {
  const double centre = pitch_to_bin(pitch, grid);
  const double width_bins = width_cents / grid.bin_cents;
  const int lo = std::max(0, static_cast<int>(std::floor(centre - 4.0 * width_bins)));
  const int hi = std::min(static_cast<int>(values.rows()) - 1, static_cast<int>(std::ceil(centre + 4.0 * width_bins)));
  for (int b = lo; b <= hi; ++b) {
    const double z = (b - centre) / width_bins;
    values(b, f) += static_cast<float>(amp * std::exp(-0.5 * z * z));
  }
}

constexpr double kTailCutoff = 1e-3;

int last_sounding_frame(const NoteEvent& n, const SynthConfig& cfg, const GridSpec& grid) {
  const int off = nearest_frame(n.offset_s, grid);
  if (cfg.release_s <= 0.0) return off - 1;
  const int tail = static_cast<int>(std::ceil(-std::log(kTailCutoff) * cfg.release_s / grid.hop_s));
  return off - 1 + tail;
}

Pitchogram render(const TrackAnnotation& a, const SynthConfig& cfg, const GridSpec& grid, int n_partials,
                  std::uint64_t noise_salt) {
  cfg.validate();
  check_in_grid(a, cfg, grid);
  const int n_frames = grid.n_frames(a.duration_s);
  Pitchogram p = make_pitchogram(grid, n_frames);
  for (std::size_t i = 0; i < a.notes.size(); ++i) {
    const auto& n = a.notes[i];
    const double phase = vibrato_phase(cfg.seed, i);
    const int first = nearest_frame(n.onset_s, grid);
    const int last = std::min(n_frames - 1, last_sounding_frame(n, cfg, grid));
    for (int f = std::max(first, 0); f <= last; ++f) {
      const double env = note_envelope(n, cfg, grid, f);
      if (env <= 0.0) continue;
      const double pitch = note_pitch_at(n, cfg, phase, grid, f);
      double amp = env;
      for (int k = 1; k <= n_partials; ++k) {
        const double pk = pitch + 12.0 * std::log2(static_cast<double>(k));
        if (pk > grid.pitch_max_midi + 1.0) break;
        splat(p.values, grid, f, pk, amp, cfg.ridge_width_cents);
        amp *= cfg.partial_rolloff;
      }
    }
  }
  if (cfg.noise_floor > 0.0) {
    std::mt19937_64 rng(mix(cfg.seed ^ noise_salt));
    std::uniform_real_distribution<double> u(0.0, cfg.noise_floor);
    for (Eigen::Index i = 0; i < p.values.size(); ++i) p.values.data()[i] += static_cast<float>(u(rng));
  }
  return p;
}

}  // namespace

double vibrato_phase(std::uint64_t seed, std::size_t index) {
  const std::uint64_t h = mix(mix(seed) ^ (0x5bd1e995ull * (index + 1)));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0) * 2.0 * std::numbers::pi;
}

double note_envelope(const NoteEvent& n, const SynthConfig& cfg, const GridSpec& grid, int frame) {
  const int first = nearest_frame(n.onset_s, grid);
  const int off = nearest_frame(n.offset_s, grid);
  if (frame < first) return 0.0;
  auto sustain = [&](int f) {
    const int k = f - first;
    double attack = 1.0;
    if (cfg.attack_s > 0.0) {
      const double ramp = std::min(1.0, (k + 1) * grid.hop_s / cfg.attack_s);
      attack = cfg.attack_floor + (1.0 - cfg.attack_floor) * ramp;
    }
    return attack * std::exp(-cfg.amplitude_decay_per_s * k * grid.hop_s);
  };
  if (frame < off) return sustain(frame);
  if (cfg.release_s <= 0.0 || off <= first) return 0.0;
  const double tail = sustain(off - 1) * std::exp(-(frame - off + 1) * grid.hop_s / cfg.release_s);
  return tail >= kTailCutoff ? tail : 0.0;
}

double note_pitch_at(const NoteEvent& n, const SynthConfig& cfg, double phase, const GridSpec& grid, int frame) {
  if (cfg.vibrato_depth_cents <= 0.0) return n.pitch_midi;
  const double t = frame * grid.hop_s - n.onset_s;
  return n.pitch_midi +
         cfg.vibrato_depth_cents / 100.0 * std::sin(2.0 * std::numbers::pi * cfg.vibrato_rate_hz * t + phase);
}

TrackAnnotation sample_score(const SynthConfig& cfg, std::uint64_t rng_seed, const std::string& track_id) {
  cfg.validate();
  std::mt19937_64 rng(mix(rng_seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(cfg.n_notes_min, cfg.n_notes_max);
  const int target = count(rng);

  TrackAnnotation a;
  a.track_id = track_id;
  a.duration_s = cfg.track_duration_s;
  // Notes (and their tails) finish strictly inside the track.
  const double latest_end = cfg.track_duration_s - std::max(cfg.release_s * 3.0, 0.05);

  const int max_attempts = 400 * std::max(target, 1);
  int attempts = 0;
  while (static_cast<int>(a.notes.size()) < target && attempts < max_attempts) {
    ++attempts;
    NoteEvent cand;
    const double dur = cfg.duration_min_s + unit(rng) * (cfg.duration_max_s - cfg.duration_min_s);
    if (!a.notes.empty() && unit(rng) < cfg.repeat_probability) {
      std::uniform_int_distribution<std::size_t> pick(0, a.notes.size() - 1);
      const auto& prev = a.notes[pick(rng)];
      cand.pitch_midi = prev.pitch_midi;
      cand.onset_s = prev.offset_s + unit(rng) * cfg.repeat_gap_max_s;
    } else {
      double pitch = 27.0 + unit(rng) * 76.0;
      if (unit(rng) >= cfg.fractional_probability) pitch = std::round(pitch);
      cand.pitch_midi = pitch;
      cand.onset_s = unit(rng) * (latest_end - dur);
    }
    cand.offset_s = cand.onset_s + dur;
    if (cand.onset_s < 0.0 || cand.offset_s > latest_end) continue;
    if (!fits(a.notes, cand, cfg)) continue;
    a.notes.push_back(cand);
  }
  if (static_cast<int>(a.notes.size()) < target) {
    std::ostringstream msg;
    msg << "synth: could only place " << a.notes.size() << " of " << target << " notes after " << max_attempts
        << " attempts (polyphony " << cfg.polyphony_max << ", track " << cfg.track_duration_s << " s)";
    throw Error(msg.str());
  }
  sort_notes(a.notes);
  validate(a);
  return a;
}

Pitchogram render_pitchogram(const TrackAnnotation& annotation, const SynthConfig& config, const GridSpec& grid) {
  return render(annotation, config, grid, 1, 0x70696368ull);
}

Pitchogram render_spectrogram(const TrackAnnotation& annotation, const SynthConfig& config,
                              const GridSpec& freq_grid) {
  return render(annotation, config, freq_grid, config.n_partials, 0x73706563ull);
}

Pitchogram spectral_flux(const Pitchogram& s) {
  Pitchogram out;
  out.grid = s.grid;
  out.values.resize(s.values.rows(), s.values.cols());
  if (s.values.cols() == 0) return out;
  out.values.col(0) = s.values.col(0).cwiseMax(0.0f);
  for (Eigen::Index f = 1; f < s.values.cols(); ++f) {
    out.values.col(f) = (s.values.col(f) - s.values.col(f - 1)).cwiseMax(0.0f);
  }
  return out;
}

Pitchogram bin_flux(const Pitchogram& flux, int width) {
  if (width < 1) throw ConfigError("bin_flux: width must be >= 1");
  Pitchogram out;
  out.grid = flux.grid;
  const Eigen::Index n = flux.values.cols();
  out.values = FloatGrid::Zero(flux.values.rows(), n);
  const int lo = -(width / 2);
  for (Eigen::Index f = 0; f < n; ++f) {
    for (int k = lo; k < lo + width; ++k) {
      const Eigen::Index g = f + k;
      if (g >= 0 && g < n) out.values.col(f) += flux.values.col(g);
    }
  }
  return out;
}

Pitchogram apply_distortion(const Pitchogram& in, const DistortionParams& params, std::uint64_t rng_seed) {
  params.validate();
  Pitchogram out = in;
  if (params.is_identity()) return out;
  const double centre = 0.5 * (in.grid.pitch_min_midi + in.grid.pitch_max_midi);
  std::mt19937_64 rng(mix(rng_seed));
  std::normal_distribution<double> noise(0.0, params.added_noise_sigma > 0.0 ? params.added_noise_sigma : 1.0);
  for (Eigen::Index b = 0; b < out.values.rows(); ++b) {
    const double octaves = (bin_to_pitch(static_cast<double>(b), in.grid) - centre) / 12.0;
    const double eq = std::pow(10.0, params.eq_tilt_db_per_octave * octaves / 20.0);
    for (Eigen::Index f = 0; f < out.values.cols(); ++f) {
      double x = in.values(b, f);
      if (params.compression_exponent != 1.0) x = std::copysign(std::pow(std::abs(x), params.compression_exponent), x);
      x *= params.gain * eq;
      if (params.added_noise_sigma > 0.0) x += noise(rng);
      out.values(b, f) = static_cast<float>(x);
    }
  }
  return out;
}

}  // namespace ltrack::synth
