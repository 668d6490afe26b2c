#include "ltrack/datamodel.hpp"
#include "ltrack/error.hpp"

#include <doctest.h>

#include <random>

using namespace ltrack;

namespace {
const GridSpec kDirect{26.0, 104.0, 20.0, 0.0058};
}

TEST_CASE("pitch_to_bin on the 20-cent grid") {
  CHECK(pitch_to_bin(26.0, kDirect) == doctest::Approx(0.0));
  CHECK(pitch_to_bin(104.0, kDirect) == doctest::Approx(390.0));
  CHECK(pitch_to_bin(60.1, kDirect) == doctest::Approx(170.5));
  CHECK(kDirect.n_bins() == 391);
  CHECK(GridSpec{}.n_bins() == 781);
}

TEST_CASE("bin and pitch conversions round-trip") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(26.0, 104.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    CHECK(std::abs(bin_to_pitch(pitch_to_bin(p, kDirect), kDirect) - p) < 1e-12);
  }
}

TEST_CASE("time and frame conversions") {
  CHECK(time_to_frame(0.0, kDirect) == 0.0);
  CHECK(time_to_frame(1.0, kDirect) == doctest::Approx(172.4137931));
  CHECK(time_to_frame(0.0058, kDirect) == doctest::Approx(1.0));
  CHECK(nearest_frame(1.0, kDirect) == 172);
  CHECK(frame_to_time(172, kDirect) == doctest::Approx(0.9976));
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS(GridSpec({26.0, 26.0, 10.0, 0.0058}).validate(), ConfigError);
  CHECK_THROWS_AS(GridSpec({26.0, 104.0, 0.0, 0.0058}).validate(), ConfigError);
  CHECK_THROWS_AS(GridSpec({26.0, 104.0, 10.0, 0.0}).validate(), ConfigError);
  CHECK_THROWS_AS(GridSpec({26.0, 104.0, 7.0, 0.0058}).validate(), ConfigError);
  CHECK_NOTHROW(GridSpec({26.0, 104.0, 20.0, 0.0058}).validate());
}

TEST_CASE("note and annotation validation") {
  CHECK_THROWS_AS(validate(NoteEvent{60.0, 1.0, 1.0}), Error);
  CHECK_THROWS_AS(validate(NoteEvent{20.0, 1.0, 2.0}), Error);
  CHECK_THROWS_AS(validate(NoteEvent{105.0, 1.0, 2.0}), Error);
  CHECK_NOTHROW(validate(NoteEvent{26.0, 1.0, 2.0}));

  TrackAnnotation a{"t", {{60, 1.0, 2.0}, {62, 0.5, 1.0}}, 3.0};
  CHECK_THROWS_AS(validate(a), Error);
  sort_notes(a.notes);
  CHECK(a.notes.front().pitch_midi == 62);
  CHECK_NOTHROW(validate(a));
  a.duration_s = 1.5;
  CHECK_THROWS_AS(validate(a), Error);
}

TEST_CASE("sort_notes orders ties by pitch") {
  std::vector<NoteEvent> n{{64, 1.0, 2.0}, {60, 1.0, 2.0}, {62, 0.5, 2.0}};
  sort_notes(n);
  CHECK(n[0].pitch_midi == 62);
  CHECK(n[1].pitch_midi == 60);
  CHECK(n[2].pitch_midi == 64);
}

TEST_CASE("derive_targets of an empty annotation is all zero") {
  const TrackAnnotation a{"t", {}, 2.0};
  const auto t = derive_targets(a, kDirect, 2, 2);
  CHECK(t.framewise.rows() == 391);
  CHECK(t.framewise.cols() == kDirect.n_frames(2.0));
  CHECK(t.framewise.cast<int>().sum() == 0);
  CHECK(t.onset_map.cast<int>().sum() == 0);
  CHECK(t.offset_map.cast<int>().sum() == 0);
}

TEST_CASE("derive_targets frame convention for one note") {
  const TrackAnnotation a{"t", {{60.0, 1.0, 2.0}}, 3.0};
  const auto t = derive_targets(a, kDirect, 0, 0);
  const int first = 172;  // round(1.0 / 0.0058)
  const int end = 345;    // round(2.0 / 0.0058), exclusive
  CHECK(t.framewise.row(170).cast<int>().sum() == end - first);
  CHECK(t.framewise(170, first) == 1);
  CHECK(t.framewise(170, first - 1) == 0);
  CHECK(t.framewise(170, end - 1) == 1);
  CHECK(t.framewise(170, end) == 0);
  CHECK(t.framewise.cast<int>().sum() == end - first);
  CHECK(t.onset_map(170, first) == 1);
  CHECK(t.offset_map(170, end) == 1);
}

TEST_CASE("derive_targets smears") {
  const TrackAnnotation a{"t", {{60.0, 1.0, 2.0}}, 3.0};
  const auto t = derive_targets(a, kDirect, 1, 0);
  CHECK(t.onset_map.row(170).cast<int>().sum() == 3);
  const auto s = derive_targets(a, kDirect, 0, 2);
  CHECK(s.onset_map.col(172).cast<int>().sum() == 5);
  CHECK_THROWS_AS(derive_targets(a, kDirect, -1, 0), ConfigError);
}

TEST_CASE("derive_targets rejects notes off the grid") {
  const GridSpec narrow{40.0, 80.0, 20.0, 0.0058};
  const TrackAnnotation a{"t", {{90.0, 1.0, 2.0}}, 3.0};
  CHECK_THROWS_AS(derive_targets(a, narrow, 0, 0), Error);
}

TEST_CASE("ridge validation") {
  Ridge r{{3, 4, 5}, {10, 11, 12}, {0.5, 0.6, 0.7}};
  CHECK_NOTHROW(validate(r, 1.0));
  CHECK(r.activation_sum() == doctest::Approx(1.8));
  CHECK_THROWS_AS(validate(r, 0.5), Error);
  Ridge gap{{3, 5}, {10, 10}, {0.5, 0.5}};
  CHECK_THROWS_AS(validate(gap, 1.0), Error);
  Ridge mismatch{{3, 4}, {10}, {0.5, 0.5}};
  CHECK_THROWS_AS(validate(mismatch, 1.0), Error);
  CHECK_THROWS_AS(validate(Ridge{}, 1.0), Error);
}

TEST_CASE("make_pitchogram shape") {
  const auto p = make_pitchogram(kDirect, 17);
  CHECK(p.n_bins() == 391);
  CHECK(p.n_frames() == 17);
  CHECK_NOTHROW(p.validate());
}
