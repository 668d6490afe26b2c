#include "ltrack/error.hpp"
#include "ltrack/eval.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace ltrack;

namespace {

const GridSpec kPitch{26.0, 104.0, 10.0, 0.0058};

std::vector<PitchEvent> random_events(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> t(0.0, 0.4), p(59.0, 61.0);
  std::vector<PitchEvent> e;
  for (int i = 0; i < n; ++i) e.push_back({t(rng), p(rng), 0.0});
  return e;
}

}  // namespace

TEST_CASE("matching agrees with exhaustive search") {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 200; ++k) {
    const auto ref = random_events(rng, static_cast<int>(rng() % 8));
    const auto est = random_events(rng, static_cast<int>(rng() % 8));
    const auto m = match_events(ref, est, 0.05, 50.0);
    CHECK(static_cast<int>(m.size()) == oracle::brute_force_matches(ref, est, 0.05, 50.0));
    std::vector<char> used_r(ref.size(), 0), used_e(est.size(), 0);
    for (const auto& [r, e] : m) {
      CHECK_FALSE(used_r[static_cast<std::size_t>(r)]);
      CHECK_FALSE(used_e[static_cast<std::size_t>(e)]);
      used_r[static_cast<std::size_t>(r)] = used_e[static_cast<std::size_t>(e)] = 1;
      CHECK(oracle::pair_ok(ref[static_cast<std::size_t>(r)], est[static_cast<std::size_t>(e)], 0.05, 50.0));
    }
  }
}

TEST_CASE("tolerance boundaries") {
  const EvalTolerances tol;
  const std::vector<NoteEvent> ref{{60.0, 1.0, 2.0}};
  auto on = [&](double onset, double pitch) {
    const std::vector<NoteEvent> est{{pitch, onset, 2.0}};
    return eval_onsets(ref, est, tol).tp;
  };
  CHECK(on(1.049, 60.0) == 1);
  CHECK(on(1.051, 60.0) == 0);
  CHECK(on(0.951, 60.0) == 1);
  CHECK(on(1.05, 60.0) == 1);
  CHECK(on(1.0, 60.49) == 1);
  CHECK(on(1.0, 60.51) == 0);
  CHECK(on(1.0, 60.5) == 1);
  auto off = [&](double offset) {
    const std::vector<NoteEvent> est{{60.0, 1.3, offset}};
    return eval_offsets(ref, est, tol).tp;
  };
  CHECK(off(2.099) == 1);
  CHECK(off(2.101) == 0);
  CHECK(off(1.9) == 1);
  // Offsets are scored independently of onsets.
  CHECK(eval_onsets(ref, std::vector<NoteEvent>{{60.0, 1.3, 2.0}}, tol).tp == 0);
}

TEST_CASE("f_measure") {
  CHECK(f_measure(0, 0, 0) == 1.0);
  CHECK(f_measure(0, 5, 0) == 0.0);
  CHECK(f_measure(2, 3, 3) == doctest::Approx(2.0 / 3.0));
  CHECK(Counts{3, 4, 6}.f() == doctest::Approx(0.6));
  CHECK_THROWS_AS(f_measure(4, 3, 5), Error);
}

TEST_CASE("framewise evaluation") {
  const EvalTolerances tol;
  const FramePitches ref{{60.0}, {60.0, 64.0}, {}, {}};
  FramePitches est{{60.49}, {60.51, 64.0}, {70.0}, {}};
  const Counts c = eval_framewise(ref, est, tol);
  CHECK(c.tp == 2);
  CHECK(c.n_ref == 3);
  CHECK(c.n_est == 4);
  est.pop_back();
  CHECK_THROWS_AS(eval_framewise(ref, est, tol), Error);

  const std::vector<NoteEvent> notes{{60.0, 1.0, 2.0}};
  const auto frames = notes_to_frames(notes, kPitch, 400);
  int active = 0;
  for (const auto& f : frames) active += static_cast<int>(f.size());
  CHECK(active == nearest_frame(2.0, kPitch) - nearest_frame(1.0, kPitch));
  CHECK(frames[static_cast<std::size_t>(nearest_frame(1.0, kPitch))].size() == 1);
  CHECK(frames[static_cast<std::size_t>(nearest_frame(2.0, kPitch))].empty());
}

TEST_CASE("harmonic_mean") {
  CHECK(harmonic_mean(std::vector<double>{80, 80, 80, 80}) == doctest::Approx(80.0));
  CHECK(harmonic_mean(std::vector<double>{50, 100}) == doctest::Approx(200.0 / 3.0));
  CHECK(harmonic_mean(std::vector<double>{0, 90}) == 0.0);
  CHECK_THROWS_AS(harmonic_mean(std::vector<double>{}), Error);
  // Never above the arithmetic mean.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(1.0, 100.0);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> v{u(rng), u(rng), u(rng), u(rng)};
    CHECK(harmonic_mean(v) <= (v[0] + v[1] + v[2] + v[3]) / 4 + 1e-9);
  }
}

TEST_CASE("upper_limit_onsets") {
  const EvalTolerances tol;
  const std::vector<TrackAnnotation> a{{"t", {{60.0, 1.0, 2.0}, {64.0, 1.5, 2.0}}, 3.0}};
  CHECK(upper_limit_onsets(a, std::vector<std::vector<PitchEvent>>{{{1.02, 60.1, 0}, {1.49, 64.0, 0}}}, tol) == 1.0);
  CHECK(upper_limit_onsets(a, std::vector<std::vector<PitchEvent>>{{}}, tol) == 0.0);
  CHECK(upper_limit_onsets(a, std::vector<std::vector<PitchEvent>>{{{1.02, 60.1, 0}, {1.6, 64.0, 0}}}, tol) == 0.5);
  CHECK_THROWS_AS(upper_limit_onsets(a, std::vector<std::vector<PitchEvent>>{}, tol), Error);
}

TEST_CASE("report aggregation and CSV") {
  EvalReport r;
  r.subsets = {"a", "b"};
  StepScores s;
  s.framewise = {{"a", Counts{5, 10, 10}}, {"b", Counts{10, 10, 10}}};
  s.onset = s.framewise;
  s.offset = s.framewise;
  StepScores d = s;
  d.has_framewise = false;
  r.steps = {{"step1", s}, {"direct", d}};
  CHECK(r.aggregate("step1", "F_on") == doctest::Approx(200.0 / 3.0));
  CHECK_THROWS_AS(r.aggregate("direct", "F_fr"), Error);
  CHECK_THROWS_AS(r.step("nope"), Error);
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("step,F_fr,F_on,F_off\n", 0) == 0);
  CHECK(csv.find("\ndirect,,") != std::string::npos);
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 3);
}
