#pragma once

#include "ltrack/datamodel.hpp"

#include <optional>
#include <vector>

namespace ltrack {

/// Largest per-frame pitch step a ridge may take: 60 cents rounded up to whole bins.
int default_max_jump_bins(double bin_cents);

/// Per-frame pitch peaks above t_ridge, linked across consecutive frames.
/// Ridges come back sorted by first frame, then starting bin.
std::vector<Ridge> extract_ridges(const Pitchogram& pgram, double t_ridge, double max_jump_bins);

/// Keeps ridges whose summed activation exceeds t_sum, in their original order.
std::vector<Ridge> prune_ridges(const std::vector<Ridge>& ridges, double t_sum);

struct RidgeEndpoints {
  int onset_index = 0;   // position within the ridge
  int offset_index = 0;  // last position above t_off (inclusive)
  NoteEvent note;        // offset_s is the end of the last frame
};

/// Step-1 note from one ridge: first frame above t_on to last frame above t_off.
/// Throws ConfigError when t_off > t_on.
std::optional<RidgeEndpoints> step1_endpoints(const Ridge& ridge, double t_on, double t_off, const GridSpec& grid);

/// Framewise pitches (MIDI) of every ridge point, indexed by frame.
std::vector<std::vector<double>> ridge_frame_pitches(const std::vector<Ridge>& ridges, const GridSpec& grid,
                                                     int n_frames);

}  // namespace ltrack
