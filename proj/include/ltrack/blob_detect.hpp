#pragma once

#include "ltrack/datamodel.hpp"
#include "ltrack/eval.hpp"

#include <utility>
#include <vector>

namespace ltrack {

using DoubleGrid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grid of the direct system's activation matrices: MIDI 26-104, 20 cents, 5.8 ms.
GridSpec direct_grid();

struct BlobParams {
  double t = -8.0;         // smooth threshold on pre-sigmoid activations
  double s = 1.0;          // smoothness of the threshold
  double t2_onset = 1.5;   // region threshold after filtering
  double t2_offset = 3.0;
  double sigma_freq = 1.8;  // bins
  double sigma_time = 0.85; // frames

  void validate() const;
  bool operator==(const BlobParams&) const = default;
};

/// s * ln(1 + exp((x - t) / s)), evaluated without overflow.
double smooth_threshold(double x, double t, double s);
DoubleGrid smooth_threshold(const DoubleGrid& x, double t, double s);

/// Truncated at radius ceil(3 sigma) and normalised to sum 1.
std::vector<double> gaussian_kernel(double sigma);

/// Separable filter: sigma_freq along rows (bins), sigma_time along columns
/// (frames), replicating edge values.
DoubleGrid gaussian_filter_2d(const DoubleGrid& x, double sigma_freq, double sigma_time);

struct Region {
  std::vector<std::pair<int, int>> cells;  // (bin, frame), in scan order
  int peak_bin = 0;
  int peak_frame = 0;
  double reliability = 0.0;
};

/// 8-connected components of cells above t2. Each peak is the region maximum,
/// ties to the earliest frame and then the lowest bin.
std::vector<Region> extract_regions(const DoubleGrid& x, double t2);

/// One event per region with reliability above the threshold, at its peak cell.
std::vector<PitchEvent> regions_to_events(const std::vector<Region>& regions, const GridSpec& grid,
                                          double reliability_threshold);

/// Threshold, filter and region extraction for one activation matrix; no
/// reliability cut yet.
std::vector<PitchEvent> blob_events(const Pitchogram& activation, double t, double s, double sigma_freq,
                                    double sigma_time, double t2);

std::vector<PitchEvent> filter_reliability(const std::vector<PitchEvent>& events, double threshold);

struct DirectResult {
  std::vector<PitchEvent> onsets;
  std::vector<PitchEvent> offsets;
  std::vector<NoteEvent> notes;  // filled when pairing is requested
};

/// Each onset, in time order, takes the nearest unused later offset within
/// pitch_tol_cents.
std::vector<NoteEvent> pair_events(const std::vector<PitchEvent>& onsets, const std::vector<PitchEvent>& offsets,
                                   double pitch_tol_cents = 50.0);

DirectResult direct_transcribe(const Pitchogram& onset_act, const Pitchogram& offset_act, const BlobParams& params,
                               double reliability_onset, double reliability_offset, bool pair = false);

}  // namespace ltrack
