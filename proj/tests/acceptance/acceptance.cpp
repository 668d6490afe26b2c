// Acceptance checks: one PASS/FAIL line per criterion. Criteria 1, 2, 7 and
// 10 run the reference benchmark (twice, for the determinism check); the
// others use the independent oracles shared with the unit suite.

#include "ltrack/blob_detect.hpp"
#include "ltrack/error.hpp"
#include "ltrack/eval.hpp"
#include "ltrack/io.hpp"
#include "ltrack/mlp.hpp"
#include "ltrack/pipeline.hpp"
#include "ltrack/ridge_detect.hpp"
#include "ltrack/ridge_extract.hpp"
#include "ltrack/synthgen.hpp"
#include "ltrack/tune.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using namespace ltrack;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string num(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- 1, 2, 7, 10: reference benchmark --------------------------------------

struct BenchmarkRun {
  EvalReport report;
  std::vector<pipeline::Experiment::TrackBound> bounds;
  double seconds = 0;
};

BenchmarkRun run_reference(const fs::path& dir) {
  fs::remove_all(dir);
  const auto start = std::chrono::steady_clock::now();
  pipeline::Experiment ex(pipeline::reference_config(), dir);
  BenchmarkRun r;
  r.report = ex.compare();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.bounds = ex.bounds();
  return r;
}

void criterion1(const BenchmarkRun& run) {
  const auto& r = run.report;
  const double on1 = r.aggregate("step1", "F_on"), on2 = r.aggregate("step2", "F_on"), on3 = r.aggregate("step3", "F_on");
  const double fr1 = r.aggregate("step1", "F_fr"), fr2 = r.aggregate("step2", "F_fr"), fr3 = r.aggregate("step3", "F_fr");
  const bool onset_gap = on1 + 10.0 <= on2;
  const bool onset_order = on2 <= on3;
  const bool frame_order = fr1 <= fr2 && fr2 <= fr3;
  const bool fast = run.seconds <= 600.0;
  std::string d = "F_on " + num(on1) + " -> " + num(on2) + " -> " + num(on3) + " (step1+10<=step2 " +
                  (onset_gap ? "ok" : "no") + ", step2<=step3 " + (onset_order ? "ok" : "no") + "); F_fr " + num(fr1) +
                  " -> " + num(fr2) + " -> " + num(fr3) + " (nondecreasing " + (frame_order ? "ok" : "no") +
                  "); runtime " + num(run.seconds, 0) + " s (<=600 " + (fast ? "ok" : "no") + ")";
  report(1, onset_gap && onset_order && frame_order && fast, d);
}

void criterion2(const BenchmarkRun& run) {
  const auto& r = run.report;
  const double off3 = r.aggregate("step3", "F_off"), offd = r.aggregate("direct", "F_off");
  const double on3 = r.aggregate("step3", "F_on"), ond = r.aggregate("direct", "F_on");
  report(2, off3 > offd && on3 - ond >= 0.0,
         "F_off step3 " + num(off3) + " vs direct " + num(offd) + "; F_on step3 " + num(on3) + " vs direct " + num(ond));
}

void criterion7(const BenchmarkRun& run) {
  int violations = 0;
  for (const auto& b : run.bounds)
    if (b.recall_step2 > b.upper_limit + 1e-12 || b.recall_step3 > b.upper_limit + 1e-12) ++violations;
  report(7, violations == 0 && !run.bounds.empty(),
         std::to_string(violations) + " violations over " + std::to_string(run.bounds.size()) + " tracks");
}

std::map<std::string, std::string> files_under(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return out;
}

void criterion10(const fs::path& a, const fs::path& b) {
  const bool report_same = io::read_file(a / "report.csv") == io::read_file(b / "report.csv");
  const auto ea = files_under(a / "estimates"), eb = files_under(b / "estimates");
  report(10, report_same && ea == eb && !ea.empty(),
         std::string("report.csv ") + (report_same ? "identical" : "differs") + "; " + std::to_string(ea.size()) +
             " estimate files " + (ea == eb ? "identical" : "differ"));
}

// ---- 3, 4: scoring ---------------------------------------------------------

void criterion3() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> t(0.0, 0.3), p(59.5, 60.5);
  int mismatches = 0;
  long matched_total = 0;
  for (int k = 0; k < 200; ++k) {
    std::vector<PitchEvent> ref(rng() % 7), est(rng() % 7);
    for (auto& e : ref) e = {t(rng), p(rng), 0};
    for (auto& e : est) e = {t(rng), p(rng), 0};
    const int fast = static_cast<int>(match_events(ref, est, 0.05, 50.0).size());
    const int brute = oracle::brute_force_matches(ref, est, 0.05, 50.0);
    matched_total += brute;
    mismatches += fast != brute;
  }
  report(3, mismatches == 0,
         std::to_string(mismatches) + " mismatches in 200 instances (" + std::to_string(matched_total) + " pairs)");
}

void criterion4() {
  const EvalTolerances tol;
  const double on = 1.0, off = 2.0, pitch = 60.0;
  const std::vector<NoteEvent> ref{{pitch, on, off}};
  auto onset_tp = [&](double dt, double dc) {
    return eval_onsets(ref, std::vector<NoteEvent>{{pitch + dc / 100.0, on + dt, off}}, tol).tp;
  };
  auto offset_tp = [&](double dt, double dc) {
    return eval_offsets(ref, std::vector<NoteEvent>{{pitch + dc / 100.0, on, off + dt}}, tol).tp;
  };
  int wrong = 0;
  for (double s : {1.0, -1.0}) {
    wrong += onset_tp(s * 0.049, 0) != 1;
    wrong += onset_tp(s * 0.051, 0) != 0;
    wrong += offset_tp(s * 0.099, 0) != 1;
    wrong += offset_tp(s * 0.101, 0) != 0;
    wrong += onset_tp(0, s * 49) != 1;
    wrong += onset_tp(0, s * 51) != 0;
    wrong += offset_tp(0, s * 49) != 1;
    wrong += offset_tp(0, s * 51) != 0;
  }
  std::vector<PitchEvent> r{{1.0, 60.0, 0}};
  wrong += eval_events(r, std::vector<PitchEvent>{{1.049, 60.49, 0}}, 0.05, 50.0).tp != 1;
  report(4, wrong == 0, std::to_string(wrong) + " of 17 boundary cases wrong (49/51 ms, 99/101 ms, 49/51 cents)");
}

// ---- 5, 6: numerics --------------------------------------------------------

void criterion5() {
  std::mt19937_64 rng(505);
  std::normal_distribution<double> n;
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    DoubleGrid x(64, 64);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    const double sf = 0.5 + 2.5 * std::uniform_real_distribution<double>()(rng);
    const double st = 0.5 + 2.5 * std::uniform_real_distribution<double>()(rng);
    worst = std::max(worst, (gaussian_filter_2d(x, sf, st) - oracle::dense_gaussian(x, sf, st)).cwiseAbs().maxCoeff());
  }
  const DoubleGrid c = DoubleGrid::Constant(64, 64, 2.718);
  const double drift = (gaussian_filter_2d(c, 1.8, 0.85) - c).cwiseAbs().maxCoeff();
  std::ostringstream d;
  d << "max |separable - dense| " << worst << " (<1e-9); constant drift " << drift << " (<1e-12)";
  report(5, worst < 1e-9 && drift < 1e-12, d.str());
}

void criterion6() {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> n;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> sizes{2 + static_cast<int>(rng() % 4), 2 + static_cast<int>(rng() % 5)};
    if (trial % 2) sizes.push_back(2 + static_cast<int>(rng() % 4));
    sizes.push_back(1 + static_cast<int>(rng() % 3));
    const auto act = trial % 3 == 0 ? learn::Activation::Sigmoid : learn::Activation::Tanh;
    const learn::MlpModel m = learn::init_mlp(sizes, 1000 + trial, act);
    const int rows = 3 + static_cast<int>(rng() % 6);
    Eigen::MatrixXd X(rows, sizes.front()), Y(rows, sizes.back());
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < Y.size(); ++i) Y.data()[i] = n(rng) > 0 ? 1.0 : 0.0;
    const double l2 = trial % 4 == 0 ? 0.0 : 1e-3, pw = trial % 5 == 0 ? 1.0 : 2.0;
    learn::Gradient g;
    learn::loss_and_gradient(m, X, Y, g, l2, pw);
    const double eps = 1e-5;
    auto check = [&](double& param, double analytic, learn::MlpModel& probe) {
      const double keep = param;
      learn::Gradient dummy;
      param = keep + eps;
      const double up = learn::loss_and_gradient(probe, X, Y, dummy, l2, pw);
      param = keep - eps;
      const double down = learn::loss_and_gradient(probe, X, Y, dummy, l2, pw);
      param = keep;
      const double fd = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(fd - analytic) / std::max(1e-8, std::abs(fd) + std::abs(analytic)));
    };
    learn::MlpModel probe = m;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) check(probe.weights[l].data()[i], g.weights[l].data()[i], probe);
      for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) check(probe.biases[l](i), g.biases[l](i), probe);
    }
  }
  std::ostringstream d;
  d << "max relative error " << worst << " over 20 networks (<1e-4)";
  report(6, worst < 1e-4, d.str());
}

// ---- 8: ridge-relative resampling ------------------------------------------

void criterion8() {
  const GridSpec pitch{26.0, 104.0, 10.0, 0.0058};
  const GridSpec spec{20.0, 140.0, 20.0, 0.0058};
  synth::SynthConfig c;
  c.noise_floor = 0.0;
  c.attack_s = 0.0;
  c.release_s = 0.0;
  c.amplitude_decay_per_s = 0.0;
  c.n_partials = 4;
  c.vibrato_depth_cents = 50.0;
  RelativeWindow w;
  w.rel_frames = {0};
  double worst = 0;
  int tones = 0;
  for (double midi : {45.0, 52.3, 57.0, 64.0, 69.5}) {
    for (double rate : {4.5, 6.0}) {
      c.vibrato_rate_hz = rate;
      const TrackAnnotation a{"v", {{midi, 0.1, 1.6}}, 1.8};
      const auto ridges = extract_ridges(synth::render_pitchogram(a, c, pitch), 0.25, default_max_jump_bins(10.0));
      if (ridges.empty()) continue;
      const Ridge& ridge = *std::max_element(ridges.begin(), ridges.end(),
                                             [](const Ridge& x, const Ridge& y) { return x.size() < y.size(); });
      Ridge fixed = ridge;
      std::fill(fixed.pitch_bins.begin(), fixed.pitch_bins.end(), pitch_to_bin(midi, pitch));
      const Pitchogram s = synth::render_spectrogram(a, c, spec);
      const auto rel = resample_along_ridge(s, pitch, ridge, w)[0];
      const auto fix = resample_along_ridge(s, pitch, fixed, w)[0];
      for (int k = 1; k <= c.n_partials; ++k) {
        const int row = -w.rel_min + static_cast<int>(std::lround(1200.0 * std::log2(k) / w.row_spacing_cents));
        auto var = [row](const FloatGrid& m) {
          const Eigen::ArrayXd v = m.row(row).cast<double>().transpose().array();
          return (v - v.mean()).square().mean();
        };
        const double vf = var(fix);
        if (vf > 0) worst = std::max(worst, var(rel) / vf);
      }
      ++tones;
    }
  }
  report(8, tones == 10 && worst < 0.05,
         "worst per-partial variance ratio ridge-relative / fixed " + num(worst, 4) + " over " + std::to_string(tones) +
             " vibrato tones x 4 partials (<0.05)");
}

// ---- 9: monotone thresholds ------------------------------------------------

void criterion9() {
  std::mt19937_64 rng(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int count_rises = 0, cell_rises = 0, unrefined = 0;
  for (int m = 0; m < 10; ++m) {
    // Activation-like maps: isolated blobs of varying size and height on a
    // low noise floor, as produced by the filter stage of the direct system.
    DoubleGrid x = DoubleGrid::Zero(80, 120);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 0.3 * u(rng);
    for (int b = 0; b < 8; ++b) {
      const double cb = 5 + u(rng) * 70, cf = 5 + u(rng) * 110, h = 1 + 4 * u(rng);
      const double sb = 1 + 2 * u(rng), sf = 1 + 3 * u(rng);
      for (int i = 0; i < 80; ++i)
        for (int j = 0; j < 120; ++j)
          x(i, j) += h * std::exp(-0.5 * ((i - cb) * (i - cb) / (sb * sb) + (j - cf) * (j - cf) / (sf * sf)));
    }
    x = gaussian_filter_2d(x, 1.8, 0.85);
    std::size_t prev_regions = SIZE_MAX, prev_cells = SIZE_MAX;
    std::vector<Region> prev;
    for (double t2 : {0.5, 1.0, 1.5, 2.5, 3.5}) {
      const auto regions = extract_regions(x, t2);
      std::size_t cells = 0;
      for (const auto& r : regions) cells += r.cells.size();
      count_rises += regions.size() > prev_regions;
      cell_rises += cells > prev_cells;
      // Every new region lies inside a single old region.
      for (const auto& r : regions) {
        bool inside = prev.empty();
        for (const auto& o : prev)
          if (std::binary_search(o.cells.begin(), o.cells.end(), r.cells.front())) {
            inside = std::includes(o.cells.begin(), o.cells.end(), r.cells.begin(), r.cells.end());
            break;
          }
        unrefined += !inside;
      }
      prev_regions = regions.size();
      prev_cells = cells;
      prev = regions;
    }
  }

  std::vector<Ridge> ridges;
  for (int i = 0; i < 60; ++i) {
    Ridge r;
    const int len = 1 + static_cast<int>(rng() % 40);
    for (int k = 0; k < len; ++k) {
      r.frames.push_back(i * 3 + k);
      r.pitch_bins.push_back(100.0 + i);
      r.activations.push_back(u(rng));
    }
    ridges.push_back(r);
  }
  int antitone = 0;
  for (int k = 0; k < 200; ++k) {
    double a = u(rng) * 25, b = u(rng) * 25;
    if (a > b) std::swap(a, b);
    const auto lo = prune_ridges(ridges, a), hi = prune_ridges(ridges, b);
    for (const auto& r : hi) antitone += std::find(lo.begin(), lo.end(), r) == lo.end();
  }
  report(9, count_rises == 0 && cell_rises == 0 && unrefined == 0 && antitone == 0,
         "region-count rises " + std::to_string(count_rises) + ", cell-count rises " + std::to_string(cell_rises) +
             ", unrefined regions " + std::to_string(unrefined) + " (10 maps x 5 t2); prune_ridges antitone violations " +
             std::to_string(antitone) + " (200 pairs)");
}

// ---- 11: search optimality -------------------------------------------------

void criterion11() {
  std::mt19937_64 rng(1111);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int grid_wrong = 0;
  for (int k = 0; k < 20; ++k) {
    std::vector<GridAxis> axes(1 + rng() % 4);
    for (auto& a : axes) {
      a.values.resize(1 + rng() % 6);
      for (double& v : a.values) v = std::round(u(rng) * 4) / 4;  // repeated values create ties
    }
    std::vector<double> coef(axes.size());
    for (double& v : coef) v = u(rng);
    const Objective f = [&](const std::vector<double>& p) {
      double s = 0;
      for (std::size_t i = 0; i < p.size(); ++i) s += std::cos(3 * p[i] + coef[i]) * (1 + i);
      return s;
    };
    // Independent enumeration, first axis slowest, first maximum wins.
    std::vector<double> best_point;
    double best = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> idx(axes.size(), 0);
    for (bool done = false; !done;) {
      std::vector<double> p;
      for (std::size_t i = 0; i < axes.size(); ++i) p.push_back(axes[i].values[idx[i]]);
      if (const double v = f(p); v > best) best = v, best_point = p;
      done = true;
      for (std::size_t i = axes.size(); i-- > 0;) {
        if (++idx[i] < axes[i].values.size()) {
          done = false;
          break;
        }
        idx[i] = 0;
      }
    }
    const auto r = grid_search(axes, f, 1 + k % 2);
    grid_wrong += r.best_value != best || r.best != best_point;
  }

  int dominated = 0;
  for (int c = 0; c < 20; ++c) {
    std::vector<SweepTrack> tracks(1 + rng() % 4);
    for (auto& t : tracks) {
      const int n_ref = static_cast<int>(rng() % 8);
      for (int i = 0; i < n_ref; ++i) t.ref.push_back({i * 0.4, 60.0 + (i % 2), 0});
      for (int i = 0; i < static_cast<int>(rng() % 12); ++i) {
        const bool near_ref = n_ref > 0 && u(rng) > -0.2;
        const double time = near_ref ? static_cast<int>(rng() % n_ref) * 0.4 + 0.02 * u(rng) : 2 + u(rng);
        t.est.push_back({time, 60.0 + static_cast<int>(rng() % 2), 0.5 + 0.5 * u(rng)});
      }
    }
    const auto best = reliability_sweep(tracks, 0.05, 50.0);
    for (int k = 0; k < 100; ++k) dominated += sweep_f(tracks, 0.5 + 0.6 * u(rng), 0.05, 50.0) > best.f + 1e-12;
  }
  report(11, grid_wrong == 0 && dominated == 0,
         std::to_string(grid_wrong) + " of 20 grid searches differ from enumeration; " + std::to_string(dominated) +
             " of 2000 probe thresholds beat the sweep");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string work = "acceptance_runs";
  bool skip_benchmark = false;
  app.add_option("--work", work, "Directory for the benchmark run directories");
  app.add_flag("--skip-benchmark", skip_benchmark, "Only run criteria 3-6, 8, 9 and 11");
  CLI11_PARSE(app, argc, argv);

  try {
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion8();
    criterion9();
    criterion11();
    if (!skip_benchmark) {
      const fs::path a = fs::path(work) / "reference_a", b = fs::path(work) / "reference_b";
      const BenchmarkRun first = run_reference(a);
      std::cout << "reference report (" << num(first.seconds, 0) << " s):\n" << first.report.to_csv() << std::flush;
      criterion1(first);
      criterion2(first);
      criterion7(first);
      run_reference(b);
      criterion10(a, b);
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
