#include "ltrack/ridge_extract.hpp"

#include "ltrack/error.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace ltrack {

int default_max_jump_bins(double bin_cents) {
  if (!(bin_cents > 0)) throw ConfigError("bin_cents must be positive");
  return static_cast<int>(std::ceil(60.0 / bin_cents - 1e-9));
}

namespace {

struct Peak {
  int bin;
  float value;
};

std::vector<Peak> frame_peaks(const FloatGrid& v, int frame, double t_ridge) {
  std::vector<Peak> out;
  const int n = static_cast<int>(v.rows());
  for (int b = 0; b < n; ++b) {
    const float x = v(b, frame);
    if (!(x > t_ridge)) continue;
    // Strict on the low side, non-strict on the high side: a plateau yields its lowest bin.
    if (b > 0 && !(x > v(b - 1, frame))) continue;
    if (b + 1 < n && !(x >= v(b + 1, frame))) continue;
    out.push_back({b, x});
  }
  return out;
}

}  // namespace

std::vector<Ridge> extract_ridges(const Pitchogram& pgram, double t_ridge, double max_jump_bins) {
  if (!std::isfinite(t_ridge)) throw ConfigError("t_ridge must be finite");
  if (!(max_jump_bins >= 0)) throw ConfigError("max_jump_bins must be non-negative");
  const int n_frames = pgram.n_frames();
  std::vector<Ridge> done;
  std::vector<Ridge> open;  // ridges ending at the previous frame

  for (int f = 0; f < n_frames; ++f) {
    const auto peaks = frame_peaks(pgram.values, f, t_ridge);
    std::vector<std::tuple<double, int, int, std::size_t, std::size_t>> pairs;
    for (std::size_t o = 0; o < open.size(); ++o) {
      const double last = open[o].pitch_bins.back();
      for (std::size_t p = 0; p < peaks.size(); ++p) {
        const double d = std::abs(peaks[p].bin - last);
        if (d <= max_jump_bins) pairs.emplace_back(d, peaks[p].bin, static_cast<int>(last), o, p);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<int> peak_owner(peaks.size(), -1);
    std::vector<bool> open_used(open.size(), false);
    for (const auto& [d, nb, ob, o, p] : pairs) {
      if (open_used[o] || peak_owner[p] >= 0) continue;
      open_used[o] = true;
      peak_owner[p] = static_cast<int>(o);
    }
    std::vector<Ridge> next;
    for (std::size_t p = 0; p < peaks.size(); ++p) {
      Ridge r;
      if (peak_owner[p] >= 0) r = std::move(open[static_cast<std::size_t>(peak_owner[p])]);
      r.frames.push_back(f);
      r.pitch_bins.push_back(peaks[p].bin);
      r.activations.push_back(peaks[p].value);
      next.push_back(std::move(r));
    }
    for (std::size_t o = 0; o < open.size(); ++o)
      if (!open_used[o]) done.push_back(std::move(open[o]));
    open = std::move(next);
  }
  for (auto& r : open) done.push_back(std::move(r));
  std::sort(done.begin(), done.end(), [](const Ridge& a, const Ridge& b) {
    return std::make_pair(a.first_frame(), a.pitch_bins.front()) < std::make_pair(b.first_frame(), b.pitch_bins.front());
  });
  return done;
}

std::vector<Ridge> prune_ridges(const std::vector<Ridge>& ridges, double t_sum) {
  std::vector<Ridge> out;
  for (const auto& r : ridges)
    if (r.activation_sum() > t_sum) out.push_back(r);
  return out;
}

std::optional<RidgeEndpoints> step1_endpoints(const Ridge& ridge, double t_on, double t_off, const GridSpec& grid) {
  if (t_off > t_on) throw ConfigError("step-1 offset threshold must not exceed the onset threshold");
  const int n = static_cast<int>(ridge.size());
  int on = -1;
  for (int i = 0; i < n && on < 0; ++i)
    if (ridge.activations[i] > t_on) on = i;
  if (on < 0) return std::nullopt;
  int off = -1;
  for (int i = n - 1; i >= 0 && off < 0; --i)
    if (ridge.activations[i] > t_off) off = i;
  if (off < on) return std::nullopt;
  double wsum = 0.0, psum = 0.0;
  for (int i = on; i <= off; ++i) {
    const double w = std::max(ridge.activations[i], 0.0);
    wsum += w;
    psum += w * ridge.pitch_bins[i];
  }
  const double bin = wsum > 0 ? psum / wsum : ridge.pitch_bins[on];
  RidgeEndpoints e;
  e.onset_index = on;
  e.offset_index = off;
  e.note.pitch_midi = bin_to_pitch(bin, grid);
  e.note.onset_s = frame_to_time(ridge.frames[on], grid);
  e.note.offset_s = frame_to_time(ridge.frames[off] + 1, grid);
  return e;
}

std::vector<std::vector<double>> ridge_frame_pitches(const std::vector<Ridge>& ridges, const GridSpec& grid,
                                                     int n_frames) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(std::max(n_frames, 0)));
  for (const auto& r : ridges)
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r.frames[i] >= 0 && r.frames[i] < n_frames)
        out[static_cast<std::size_t>(r.frames[i])].push_back(bin_to_pitch(r.pitch_bins[i], grid));
  return out;
}

}  // namespace ltrack
