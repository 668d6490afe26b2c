#include "ltrack/error.hpp"
#include "ltrack/synthgen.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace ltrack;
using namespace ltrack::synth;

namespace {

const GridSpec kPitch{26.0, 104.0, 10.0, 0.0058};

SynthConfig quiet() {
  SynthConfig c;
  c.noise_floor = 0.0;
  c.attack_s = 0.0;
  return c;
}

int argmax_bin(const Pitchogram& p, int frame) {
  Eigen::Index b = 0;
  p.values.col(frame).maxCoeff(&b);
  return static_cast<int>(b);
}

}  // namespace

TEST_CASE("sample_score is deterministic in its seed") {
  const SynthConfig c;
  CHECK(sample_score(c, 11) == sample_score(c, 11));
  CHECK_FALSE(sample_score(c, 11) == sample_score(c, 12));
}

TEST_CASE("sample_score respects polyphony and durations") {
  SynthConfig c;
  c.polyphony_max = 1;
  c.n_notes_min = 3;
  c.n_notes_max = 5;
  c.duration_min_s = 0.2;
  c.duration_max_s = 0.5;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = sample_score(c, s);
    CHECK(a.notes.size() >= 3);
    CHECK(a.notes.size() <= 5);
    for (std::size_t i = 0; i < a.notes.size(); ++i) {
      const double d = a.notes[i].offset_s - a.notes[i].onset_s;
      CHECK(d >= 0.2 - 1e-12);
      CHECK(d <= 0.5 + 1e-12);
      for (std::size_t j = i + 1; j < a.notes.size(); ++j) {
        const bool overlap = a.notes[i].onset_s < a.notes[j].offset_s && a.notes[j].onset_s < a.notes[i].offset_s;
        CHECK_FALSE(overlap);
      }
    }
  }
}

TEST_CASE("sample_score repeats follow the previous note closely") {
  SynthConfig c;
  c.repeat_probability = 1.0;
  c.repeat_gap_max_s = 0.01;
  c.polyphony_max = 1;
  c.n_notes_min = c.n_notes_max = 4;
  c.duration_min_s = 0.2;
  c.duration_max_s = 0.4;
  const auto a = sample_score(c, 5);
  for (std::size_t i = 1; i < a.notes.size(); ++i) {
    CHECK(a.notes[i].pitch_midi == a.notes[0].pitch_midi);
    const double gap = a.notes[i].onset_s - a.notes[i - 1].offset_s;
    CHECK(gap >= 0.0);
    CHECK(gap <= 0.01 + 1e-12);
  }
}

TEST_CASE("infeasible score config fails after bounded retries") {
  SynthConfig c;
  c.polyphony_max = 1;
  c.n_notes_min = c.n_notes_max = 40;
  c.duration_min_s = 0.5;
  c.duration_max_s = 0.6;
  c.track_duration_s = 2.0;
  CHECK_THROWS_AS(sample_score(c, 1), Error);
  c.n_notes_max = 10;
  c.n_notes_min = 20;
  CHECK_THROWS_AS(sample_score(c, 1), ConfigError);
}

TEST_CASE("zero notes render the noise floor only") {
  SynthConfig c;
  c.noise_floor = 0.03;
  const TrackAnnotation a{"t", {}, 1.0};
  const auto p = render_pitchogram(a, c, kPitch);
  CHECK(p.values.maxCoeff() <= 0.03f);
  CHECK(p.values.minCoeff() >= 0.0f);
}

TEST_CASE("steady tone peaks at its bin on every sounding frame") {
  const SynthConfig c = quiet();
  const TrackAnnotation a{"t", {{60.0, 0.2, 0.8}}, 1.0};
  const auto p = render_pitchogram(a, c, kPitch);
  const int first = nearest_frame(0.2, kPitch), end = nearest_frame(0.8, kPitch);
  for (int f = first; f < end; ++f) CHECK(argmax_bin(p, f) == 340);
  CHECK(p.values.col(first - 1).maxCoeff() == 0.0f);
  CHECK(p.values.col(end).maxCoeff() == 0.0f);
}

TEST_CASE("vibrato keeps the argmax within the depth and reaches both extremes") {
  SynthConfig c = quiet();
  c.vibrato_depth_cents = 50.0;
  c.vibrato_rate_hz = 5.0;
  const TrackAnnotation a{"t", {{60.0, 0.1, 1.1}}, 1.3};
  const auto p = render_pitchogram(a, c, kPitch);
  const int first = nearest_frame(0.1, kPitch);
  const int period = static_cast<int>(std::ceil(1.0 / 5.0 / kPitch.hop_s));
  int lo = 1000, hi = -1000;
  for (int f = first; f < first + period; ++f) {
    const int d = argmax_bin(p, f) - 340;
    CHECK(std::abs(d) <= 5);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  CHECK(lo == -5);
  CHECK(hi == 5);
}

TEST_CASE("vibrato that leaves the grid is rejected") {
  SynthConfig c = quiet();
  c.vibrato_depth_cents = 50.0;
  const TrackAnnotation a{"t", {{26.2, 0.1, 0.5}}, 1.0};
  CHECK_THROWS_AS(render_pitchogram(a, c, kPitch), Error);
}

TEST_CASE("spectrogram with one partial has the pitchogram's support") {
  SynthConfig c = quiet();
  c.n_partials = 1;
  const TrackAnnotation a{"t", {{60.0, 0.1, 0.5}, {67.3, 0.2, 0.7}}, 1.0};
  const auto p = render_pitchogram(a, c, kPitch);
  const auto s = render_spectrogram(a, c, kPitch);
  CHECK((p.values.array() > 0) .cast<int>().sum() == (s.values.array() > 0).cast<int>().sum());
  CHECK((p.values - s.values).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("second partial lies 1200 cents above the fundamental") {
  SynthConfig c = quiet();
  c.n_partials = 2;
  c.partial_rolloff = 0.5;
  const GridSpec g{20.0, 140.0, 20.0, 0.0058};
  const TrackAnnotation a{"t", {{60.0, 0.1, 0.5}}, 1.0};
  const auto s = render_spectrogram(a, c, g);
  const int f = nearest_frame(0.3, g);
  const int b0 = static_cast<int>(pitch_to_bin(60.0, g));
  const int b1 = static_cast<int>(pitch_to_bin(72.0, g));
  CHECK(b1 - b0 == 60);
  CHECK(s.values(b0, f) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(s.values(b1, f) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(s.values(b1, f) > s.values(b1 - 1, f));
  CHECK(s.values(b1, f) > s.values(b1 + 1, f));
}

TEST_CASE("spectral flux of a sustained region vanishes after the attack") {
  SynthConfig c = quiet();
  c.attack_s = 0.03;
  const TrackAnnotation a{"t", {{60.0, 0.1, 0.9}}, 1.0};
  const auto s = render_spectrogram(a, c, GridSpec{20.0, 140.0, 20.0, 0.0058});
  const auto flux = spectral_flux(s);
  CHECK(flux.values.minCoeff() >= 0.0f);
  const int first = nearest_frame(0.1, s.grid);
  const int settled = first + static_cast<int>(std::ceil(0.03 / s.grid.hop_s)) + 1;
  CHECK(flux.values.col(first).maxCoeff() > 0.0f);
  for (int f = settled; f < nearest_frame(0.9, s.grid); ++f) CHECK(flux.values.col(f).maxCoeff() == 0.0f);
}

TEST_CASE("bin_flux sums a centred window") {
  Pitchogram f = make_pitchogram(GridSpec{26.0, 27.0, 100.0, 0.01}, 8);
  for (int i = 0; i < 8; ++i) f.values(0, i) = static_cast<float>(i + 1);
  const auto b = bin_flux(f, 4);  // frames [i-2, i+2)
  CHECK(b.values(0, 0) == doctest::Approx(1 + 2));
  CHECK(b.values(0, 3) == doctest::Approx(2 + 3 + 4 + 5));
  CHECK(b.values(0, 7) == doctest::Approx(6 + 7 + 8));
  CHECK(bin_flux(f, 1).values == f.values);
  CHECK_THROWS_AS(bin_flux(f, 0), ConfigError);
}

TEST_CASE("distortion") {
  SynthConfig c;
  const TrackAnnotation a = sample_score(c, 3);
  const auto p = render_pitchogram(a, c, kPitch);

  SUBCASE("identity is bit exact") {
    const DistortionParams id;
    CHECK(id.is_identity());
    CHECK(apply_distortion(p, id, 9).values == p.values);
  }
  SUBCASE("gain scales values") {
    DistortionParams d;
    d.gain = 2.0;
    CHECK((apply_distortion(p, d, 9).values - 2.0f * p.values).cwiseAbs().maxCoeff() < 1e-6f);
  }
  SUBCASE("noise has the folded-normal mean") {
    DistortionParams d;
    d.added_noise_sigma = 0.1;
    Pitchogram z = make_pitchogram(kPitch, 200);  // 781 x 200 cells
    const auto out = apply_distortion(z, d, 21);
    const double mean_abs = out.values.cast<double>().cwiseAbs().mean();
    const double expected = 0.1 * std::sqrt(2.0 / std::numbers::pi);
    CHECK(std::abs(mean_abs - expected) < 0.05 * expected);
  }
  SUBCASE("invalid parameters") {
    DistortionParams d;
    d.gain = 0.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d = DistortionParams{};
    d.compression_exponent = 1.5;
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }
}

TEST_CASE("synth config validation") {
  SynthConfig c;
  c.n_partials = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.repeat_probability = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.attack_s = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
