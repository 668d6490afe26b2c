#include "ltrack/ridge_detect.hpp"

#include "ltrack/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ltrack {

void PeakParams::validate() const {
  if (smooth_halfwidth_frames < 0 || min_distance_frames < 0 || abs_threshold < 0 || min_prominence < 0) {
    throw ConfigError("peak parameters must be non-negative");
  }
}

double source_bin(double ridge_bin, const GridSpec& ridge_grid, const GridSpec& source_grid) {
  return pitch_to_bin(bin_to_pitch(ridge_bin, ridge_grid), source_grid);
}

void resample_point(const Pitchogram& source, double center, int frame, const RelativeWindow& window, float* out) {
  const int n_rows = window.n_rows();
  const int n_bins = source.n_bins();
  const int n_frames = source.n_frames();
  const double step = window.row_spacing_cents / source.grid.bin_cents;
  for (std::size_t s = 0; s < window.rel_frames.size(); ++s) {
    const int f = frame + window.rel_frames[s];
    float* dst = out + s * static_cast<std::size_t>(n_rows);
    if (f < 0 || f >= n_frames) {
      std::fill(dst, dst + n_rows, 0.0f);
      continue;
    }
    auto at = [&](long b) { return (b >= 0 && b < n_bins) ? static_cast<double>(source.values(b, f)) : 0.0; };
    for (int r = 0; r < n_rows; ++r) {
      // Linear interpolation between source bins: off-row partials would
      // otherwise flip between neighbouring bins as the ridge pitch moves.
      const double x = center + (window.rel_min + r) * step;
      const double lo = std::floor(x);
      const double w = x - lo;
      const long b = static_cast<long>(lo);
      dst[r] = static_cast<float>(w == 0.0 ? at(b) : (1.0 - w) * at(b) + w * at(b + 1));
    }
  }
}

std::vector<FloatGrid> resample_along_ridge(const Pitchogram& source, const GridSpec& ridge_grid, const Ridge& ridge,
                                            const RelativeWindow& window) {
  if (ridge.size() == 0) throw Error("resample_along_ridge: empty ridge");
  const int n_rows = window.n_rows();
  const auto n = static_cast<Eigen::Index>(ridge.size());
  std::vector<FloatGrid> out(window.rel_frames.size(), FloatGrid::Zero(n_rows, n));
  std::vector<float> buf(static_cast<std::size_t>(window.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    resample_point(source, source_bin(ridge.pitch_bins[k], ridge_grid, source.grid), ridge.frames[k], window,
                   buf.data());
    for (std::size_t s = 0; s < out.size(); ++s)
      for (int r = 0; r < n_rows; ++r) out[s](r, i) = buf[s * static_cast<std::size_t>(n_rows) + r];
  }
  return out;
}

std::vector<double> moving_average(std::span<const double> x, int halfwidth) {
  const int n = static_cast<int>(x.size());
  std::vector<double> out(x.size());
  if (halfwidth <= 0) {
    std::copy(x.begin(), x.end(), out.begin());
    return out;
  }
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (int i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - halfwidth);
    const int hi = std::min(n - 1, i + halfwidth);
    out[i] = (prefix[hi + 1] - prefix[lo]) / (hi - lo + 1);
  }
  return out;
}

std::vector<int> detect_onsets(std::span<const double> activation, const PeakParams& params) {
  params.validate();
  const auto s = moving_average(activation, params.smooth_halfwidth_frames);
  const int n = static_cast<int>(s.size());
  constexpr double kLow = -std::numeric_limits<double>::infinity();

  struct Cand {
    int index;
    double height;
  };
  std::vector<Cand> cands;
  for (int l = 0; l < n;) {
    int r = l;
    while (r + 1 < n && s[r + 1] == s[l]) ++r;
    const double left = l > 0 ? s[l - 1] : kLow;
    const double right = r + 1 < n ? s[r + 1] : kLow;
    const double h = s[l];
    if (h > left && h > right && h > params.abs_threshold) {
      // Prominence: height above the higher of the two flanking minima, where a
      // flank stops at the first strictly higher value; a missing flank is ignored.
      double base = kLow;
      if (l > 0) {
        double m = h;
        for (int i = l - 1; i >= 0 && s[i] <= h; --i) m = std::min(m, s[i]);
        base = std::max(base, m);
      }
      if (r + 1 < n) {
        double m = h;
        for (int i = r + 1; i < n && s[i] <= h; ++i) m = std::min(m, s[i]);
        base = std::max(base, m);
      }
      const double prominence = base == kLow ? h : h - base;
      if (prominence > params.min_prominence) cands.push_back({(l + r) / 2, h});
    }
    l = r + 1;
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.height != b.height) return a.height > b.height;
    return a.index < b.index;
  });
  std::vector<int> kept;
  for (const auto& c : cands) {
    const bool clash = std::any_of(kept.begin(), kept.end(),
                                   [&](int k) { return std::abs(k - c.index) < params.min_distance_frames; });
    if (!clash) kept.push_back(c.index);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

int detect_offset(std::span<const double> beyond_offset, double threshold) {
  if (beyond_offset.empty()) throw Error("detect_offset: empty sequence");
  for (std::size_t i = 0; i < beyond_offset.size(); ++i)
    if (beyond_offset[i] > threshold) return static_cast<int>(i);
  return static_cast<int>(beyond_offset.size()) - 1;
}

std::vector<int> offset_crossings(std::span<const double> beyond_offset, double threshold) {
  std::vector<int> out;
  for (std::size_t i = 0; i < beyond_offset.size(); ++i) {
    const bool above = beyond_offset[i] > threshold;
    const bool before = i > 0 && beyond_offset[i - 1] > threshold;
    if (above && !before) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<TentativeNote> form_tentative_notes(std::span<const int> onsets, std::span<const int> offsets,
                                                int ridge_index, const RidgeCurves& curves, int min_length) {
  const int len = static_cast<int>(curves.onset.size());
  std::vector<TentativeNote> notes;
  for (std::size_t k = 0; k < onsets.size(); ++k) {
    const int on = onsets[k];
    int end = k + 1 < onsets.size() ? onsets[k + 1] : len;
    auto it = std::lower_bound(offsets.begin(), offsets.end(), on + std::max(1, min_length));
    if (it != offsets.end()) end = std::min(end, *it);
    end = std::min(end, len);
    if (end <= on) continue;
    TentativeNote t;
    t.ridge = ridge_index;
    t.onset = on;
    t.offset = end;
    t.onset_activation = on < len ? curves.onset[static_cast<std::size_t>(on)] : 0.0;
    if (!curves.framewise.empty()) {
      double sum = 0.0;
      for (int i = on; i < end; ++i) sum += curves.framewise[static_cast<std::size_t>(i)];
      t.mean_framewise = sum / (end - on);
    }
    t.ridge_length = len;
    notes.push_back(t);
  }
  for (std::size_t k = 0; k < notes.size(); ++k) {
    notes[k].gap_prev = k > 0 ? notes[k].onset - notes[k - 1].onset : notes[k].onset;
    notes[k].gap_next = k + 1 < notes.size() ? notes[k + 1].onset - notes[k].onset : len - notes[k].onset;
  }
  return notes;
}

namespace {

double mean_over(const std::vector<double>& x, int lo, int hi) {
  lo = std::max(lo, 0);
  hi = std::min(hi, static_cast<int>(x.size()));
  if (hi <= lo) return 0.0;
  double s = 0.0;
  for (int i = lo; i < hi; ++i) s += x[static_cast<std::size_t>(i)];
  return s / (hi - lo);
}

double max_over(const std::vector<double>& x, int lo, int hi) {
  lo = std::max(lo, 0);
  hi = std::min(hi, static_cast<int>(x.size()));
  double m = 0.0;
  for (int i = lo; i < hi; ++i) m = std::max(m, x[static_cast<std::size_t>(i)]);
  return m;
}

}  // namespace

std::vector<double> note_features(const std::vector<TentativeNote>& notes, std::size_t i, const RidgeCurves& curves,
                                  const PeakParams& params) {
  const TentativeNote& n = notes.at(i);
  const bool has_prev = i > 0 && notes[i - 1].ridge == n.ridge;
  const auto smoothed = moving_average(curves.onset, params.smooth_halfwidth_frames);
  const double onset_here = smoothed.empty() ? 0.0 : smoothed[static_cast<std::size_t>(n.onset)];
  double prev_onset = 0.0;
  if (has_prev) prev_onset = smoothed[static_cast<std::size_t>(notes[i - 1].onset)];
  const int len = n.offset - n.onset;
  std::vector<double> f{
      onset_here,
      max_over(curves.onset, n.onset - 2, n.onset + 3),
      mean_over(curves.framewise, n.onset, n.offset),
      max_over(curves.framewise, n.onset, n.offset),
      curves.framewise.empty() ? 0.0 : curves.framewise[static_cast<std::size_t>(n.onset)],
      mean_over(curves.framewise, n.onset - 6, n.onset),
      mean_over(curves.framewise, n.onset, n.onset + 6),
      std::log1p(len) / 5.0,
      std::min(n.gap_prev, 60) / 60.0,
      std::min(n.gap_next, 60) / 60.0,
      has_prev ? 1.0 : 0.0,
      prev_onset,
      mean_over(curves.beyond, n.onset, n.offset),
      std::log1p(n.ridge_length) / 6.0,
  };
  return f;
}

std::vector<TentativeNote> classify_notes(const std::vector<TentativeNote>& notes, std::span<const double> probability) {
  if (probability.size() != notes.size()) throw Error("classify_notes: one probability per note required");
  std::vector<TentativeNote> kept;
  for (std::size_t i = 0; i < notes.size(); ++i) {
    if (probability[i] >= 0.5) {
      kept.push_back(notes[i]);
    } else if (!kept.empty() && kept.back().ridge == notes[i].ridge && kept.back().offset == notes[i].onset) {
      kept.back().offset = notes[i].offset;
    }
  }
  return kept;
}

NoteEvent to_note_event(const TentativeNote& note, const Ridge& ridge, const GridSpec& grid) {
  NoteEvent e;
  e.pitch_midi = bin_to_pitch(ridge.pitch_bins.at(static_cast<std::size_t>(note.onset)), grid);
  e.onset_s = frame_to_time(ridge.frames.front() + note.onset, grid);
  e.offset_s = frame_to_time(ridge.frames.front() + note.offset, grid);
  return e;
}

void add_note_frames(const TentativeNote& note, const Ridge& ridge, const GridSpec& grid,
                     std::vector<std::vector<double>>& frame_pitches) {
  for (int i = note.onset; i < note.offset; ++i) {
    const int f = ridge.frames.at(static_cast<std::size_t>(i));
    if (f >= 0 && f < static_cast<int>(frame_pitches.size()))
      frame_pitches[static_cast<std::size_t>(f)].push_back(bin_to_pitch(ridge.pitch_bins[static_cast<std::size_t>(i)], grid));
  }
}

}  // namespace ltrack
