#include "ltrack/blob_detect.hpp"

#include "ltrack/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace ltrack {

GridSpec direct_grid() { return GridSpec{26.0, 104.0, 20.0, 0.0058}; }

void BlobParams::validate() const {
  if (!(s > 0)) throw ConfigError("blob.s must be positive");
  if (!(sigma_freq > 0) || !(sigma_time > 0)) throw ConfigError("blob sigmas must be positive");
  if (!std::isfinite(t) || !std::isfinite(t2_onset) || !std::isfinite(t2_offset)) {
    throw ConfigError("blob thresholds must be finite");
  }
}

double smooth_threshold(double x, double t, double s) {
  const double z = x - t;
  return std::max(z, 0.0) + s * std::log1p(std::exp(-std::abs(z) / s));
}

DoubleGrid smooth_threshold(const DoubleGrid& x, double t, double s) {
  if (!(s > 0)) throw ConfigError("smooth_threshold: s must be positive");
  return x.unaryExpr([t, s](double v) { return smooth_threshold(v, t, s); });
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw ConfigError("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

DoubleGrid gaussian_filter_2d(const DoubleGrid& x, double sigma_freq, double sigma_time) {
  const auto kf = gaussian_kernel(sigma_freq);
  const auto kt = gaussian_kernel(sigma_time);
  const int rf = static_cast<int>(kf.size() / 2);
  const int rt = static_cast<int>(kt.size() / 2);
  const int nb = static_cast<int>(x.rows());
  const int nf = static_cast<int>(x.cols());
  DoubleGrid tmp(nb, nf);
  for (int b = 0; b < nb; ++b) {
    for (int f = 0; f < nf; ++f) {
      double acc = 0.0;
      for (int j = -rt; j <= rt; ++j) acc += kt[static_cast<std::size_t>(j + rt)] * x(b, std::clamp(f + j, 0, nf - 1));
      tmp(b, f) = acc;
    }
  }
  DoubleGrid out(nb, nf);
  for (int b = 0; b < nb; ++b) {
    for (int f = 0; f < nf; ++f) out(b, f) = 0.0;
    for (int j = -rf; j <= rf; ++j) {
      const double w = kf[static_cast<std::size_t>(j + rf)];
      const int src = std::clamp(b + j, 0, nb - 1);
      out.row(b) += w * tmp.row(src);
    }
  }
  return out;
}

std::vector<Region> extract_regions(const DoubleGrid& x, double t2) {
  const int nb = static_cast<int>(x.rows());
  const int nf = static_cast<int>(x.cols());
  std::vector<int> label(static_cast<std::size_t>(nb) * static_cast<std::size_t>(nf), -1);
  auto at = [nf](int b, int f) { return static_cast<std::size_t>(b) * static_cast<std::size_t>(nf) + f; };
  std::vector<Region> regions;
  std::deque<std::pair<int, int>> queue;
  for (int b = 0; b < nb; ++b) {
    for (int f = 0; f < nf; ++f) {
      if (!(x(b, f) > t2) || label[at(b, f)] >= 0) continue;
      const int id = static_cast<int>(regions.size());
      Region r;
      label[at(b, f)] = id;
      queue.emplace_back(b, f);
      while (!queue.empty()) {
        const auto [cb, cf] = queue.front();
        queue.pop_front();
        r.cells.emplace_back(cb, cf);
        for (int db = -1; db <= 1; ++db) {
          for (int df = -1; df <= 1; ++df) {
            const int nb2 = cb + db, nf2 = cf + df;
            if ((db == 0 && df == 0) || nb2 < 0 || nb2 >= nb || nf2 < 0 || nf2 >= nf) continue;
            if (label[at(nb2, nf2)] >= 0 || !(x(nb2, nf2) > t2)) continue;
            label[at(nb2, nf2)] = id;
            queue.emplace_back(nb2, nf2);
          }
        }
      }
      std::sort(r.cells.begin(), r.cells.end());
      r.peak_bin = r.cells.front().first;
      r.peak_frame = r.cells.front().second;
      double best = x(r.peak_bin, r.peak_frame);
      for (const auto& [cb, cf] : r.cells) {
        const double v = x(cb, cf);
        const bool better = v > best || (v == best && (cf < r.peak_frame || (cf == r.peak_frame && cb < r.peak_bin)));
        if (better) {
          best = v;
          r.peak_bin = cb;
          r.peak_frame = cf;
        }
      }
      r.reliability = best;
      regions.push_back(std::move(r));
    }
  }
  return regions;
}

std::vector<PitchEvent> regions_to_events(const std::vector<Region>& regions, const GridSpec& grid,
                                          double reliability_threshold) {
  if (std::isnan(reliability_threshold)) throw ConfigError("reliability threshold is NaN");
  std::vector<PitchEvent> out;
  for (const auto& r : regions) {
    if (!(r.reliability > reliability_threshold)) continue;
    out.push_back({frame_to_time(r.peak_frame, grid), bin_to_pitch(r.peak_bin, grid), r.reliability});
  }
  std::stable_sort(out.begin(), out.end(), [](const PitchEvent& a, const PitchEvent& b) {
    return a.time_s != b.time_s ? a.time_s < b.time_s : a.pitch_midi < b.pitch_midi;
  });
  return out;
}

std::vector<PitchEvent> blob_events(const Pitchogram& activation, double t, double s, double sigma_freq,
                                    double sigma_time, double t2) {
  const DoubleGrid x = activation.values.cast<double>();
  const DoubleGrid filtered = gaussian_filter_2d(smooth_threshold(x, t, s), sigma_freq, sigma_time);
  return regions_to_events(extract_regions(filtered, t2), activation.grid,
                           -std::numeric_limits<double>::infinity());
}

std::vector<PitchEvent> filter_reliability(const std::vector<PitchEvent>& events, double threshold) {
  std::vector<PitchEvent> out;
  for (const auto& e : events)
    if (e.reliability > threshold) out.push_back(e);
  return out;
}

std::vector<NoteEvent> pair_events(const std::vector<PitchEvent>& onsets, const std::vector<PitchEvent>& offsets,
                                   double pitch_tol_cents) {
  std::vector<char> used(offsets.size(), 0);
  std::vector<NoteEvent> notes;
  for (const auto& on : onsets) {
    int best = -1;
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (used[k] || !(offsets[k].time_s > on.time_s)) continue;
      if (std::abs(offsets[k].pitch_midi - on.pitch_midi) * 100.0 > pitch_tol_cents + kToleranceGuard) continue;
      if (best < 0 || offsets[k].time_s < offsets[static_cast<std::size_t>(best)].time_s) best = static_cast<int>(k);
    }
    if (best < 0) continue;
    used[static_cast<std::size_t>(best)] = 1;
    notes.push_back({on.pitch_midi, on.time_s, offsets[static_cast<std::size_t>(best)].time_s});
  }
  sort_notes(notes);
  return notes;
}

DirectResult direct_transcribe(const Pitchogram& onset_act, const Pitchogram& offset_act, const BlobParams& params,
                               double reliability_onset, double reliability_offset, bool pair) {
  params.validate();
  if (!(onset_act.grid == offset_act.grid) || onset_act.n_bins() != offset_act.n_bins() ||
      onset_act.n_frames() != offset_act.n_frames()) {
    throw Error("direct_transcribe: onset and offset matrices have different grids");
  }
  DirectResult r;
  r.onsets = filter_reliability(
      blob_events(onset_act, params.t, params.s, params.sigma_freq, params.sigma_time, params.t2_onset),
      reliability_onset);
  r.offsets = filter_reliability(
      blob_events(offset_act, params.t, params.s, params.sigma_freq, params.sigma_time, params.t2_offset),
      reliability_offset);
  if (pair) r.notes = pair_events(r.onsets, r.offsets);
  return r;
}

}  // namespace ltrack
