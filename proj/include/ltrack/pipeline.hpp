#pragma once

#include "ltrack/blob_detect.hpp"
#include "ltrack/dag.hpp"
#include "ltrack/eval.hpp"
#include "ltrack/ridge_detect.hpp"
#include "ltrack/synthgen.hpp"
#include "ltrack/tune.hpp"

#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ltrack::pipeline {

using dag::TrackContext;

/// One synthetic "dataset": a timbre/polyphony family and its split sizes.
struct SubsetSpec {
  std::string name;
  synth::SynthConfig synth;
  int n_train = 6;
  int n_validation = 2;
  int n_test = 15;
};

struct NetConfig {
  std::vector<int> hidden{16};
  learn::TrainParams train;
  // Row sampling for dense domains (cells); ignored where every row is used.
  int max_positives_per_track = 4000;
  double random_negative_ratio = 3.0;
  double hard_negative_ratio = 2.0;
};

struct PeakGrid {
  std::vector<double> smooth_halfwidth{0, 1, 2};
  std::vector<double> abs_threshold{0.2, 0.35, 0.5};
  std::vector<double> min_prominence{0.05, 0.15};
  std::vector<double> min_distance{4, 8};
};

struct BlobGrid {
  std::vector<double> t{-10.0, -8.0, -6.0};
  std::vector<double> t2_onset{1.0, 1.5, 2.5};
  std::vector<double> t2_offset{2.0, 3.0, 4.0};
  std::vector<double> sigma_freq{1.8};
  std::vector<double> sigma_time{0.85};
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  GridSpec pitch_grid{26.0, 104.0, 10.0, 0.0058};
  GridSpec spec_grid{20.0, 140.0, 20.0, 0.0058};
  int flux_bin_frames = 4;
  std::vector<SubsetSpec> subsets;

  NetConfig framewise, onset, offset, classifier, direct_onset, direct_offset;

  int framewise_pitch_smear = 2;  // bins of the pitchogram grid
  int onset_smear_frames = 2;
  int onset_pitch_smear = 5;
  int direct_pitch_smear = 2;  // bins of the direct grid

  double t_ridge = 0.25;      // recall setting fed downstream
  double max_jump_bins = 0;   // 0: ceil(60 cents / bin)
  double ridge_t_sum = 0.0;
  double ridge_smooth_bins = 2.0;  // Gaussian sigma across pitch before peak picking; 0 disables

  std::vector<double> step1_t_on{0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  std::vector<double> step1_t_sum{0.0, 2.0, 5.0, 10.0};
  std::vector<double> step1_t_fr{0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  double step1_offset_ratio = 0.8;  // t_off = ratio * t_on

  PeakGrid peaks;
  double offset_threshold = 0.5;
  int classifier_augment_min_frames = 3;
  int classifier_augment_max_frames = 9;

  BlobParams blob;
  BlobGrid blob_grid;
  bool tune_blob = true;

  EvalTolerances tolerances;
  std::set<std::string> steps{"1", "2", "3", "direct"};

  bool distortion = false;
  synth::DistortionParams distortion_params{1.0, 1.5, 0.01, 0.9};

  static ExperimentConfig from_json(const std::string& text);
  std::string to_json() const;
  void validate() const;
  double max_jump() const;
};

/// Reference benchmark: four subsets, 6 train / 2 validation / 15 test tracks each.
ExperimentConfig reference_config();
/// Five tracks of one subset with short training; for smoke runs.
ExperimentConfig micro_config();
/// Every config key with its default and a one-line description.
std::string config_help();

struct TrackSet {
  std::string subset;
  std::vector<TrackContext> tracks;
};

struct DataSet {
  std::vector<TrackContext> train;
  std::vector<TrackContext> validation;
  std::vector<TrackSet> test;
};

/// Renders raw representations for one annotation.
TrackContext render_track(const TrackAnnotation& annotation, const synth::SynthConfig& synth,
                          const ExperimentConfig& config);
/// Attaches raw representations derived from stored salience and spectrogram.
TrackContext make_track(TrackAnnotation annotation, Pitchogram salience, Pitchogram spectrogram,
                        const ExperimentConfig& config);
DataSet generate_dataset(const ExperimentConfig& config, int jobs = 1);
/// Layout: <dir>/manifest.json, <dir>/{train,validation,test-<subset>}/.
void save_dataset(const DataSet& data, const std::filesystem::path& dir, const ExperimentConfig& config);
DataSet load_dataset(const std::filesystem::path& dir, const ExperimentConfig& config);
/// One split directory ("train", "validation", "test-<subset>"); checks the
/// manifest against the config's generation settings.
std::vector<TrackContext> load_split(const std::filesystem::path& dir, const std::string& split,
                                     const ExperimentConfig& config);
/// Hash of the settings that determine generated data.
std::string data_fingerprint(const ExperimentConfig& config);

/// Distorted copy of a training context (salience, spectrogram and flux).
TrackContext distort_track(const TrackContext& ctx, const synth::DistortionParams& params, std::uint64_t seed,
                           int flux_bin_frames);

// Graph construction. Both systems share one graph (and one set of track
// contexts) in an experiment.
void add_dll_nodes(dag::Graph& graph, const ExperimentConfig& config);
void add_direct_nodes(dag::Graph& graph, const ExperimentConfig& config);
dag::Graph build_dll_graph(const ExperimentConfig& config);
dag::Graph build_direct_graph(const ExperimentConfig& config);
/// DLL nodes, plus the direct system when "direct" is among the steps.
dag::Graph build_graph(const ExperimentConfig& config);

// Views onto computed values.
Pitchogram framewise_map(const TrackContext& ctx, const dag::Graph& graph, const ExperimentConfig& config);
std::vector<Ridge> track_ridges(const TrackContext& ctx, const dag::Graph& graph);
std::vector<RidgeCurves> track_curves(const TrackContext& ctx, const dag::Graph& graph,
                                      const std::vector<Ridge>& ridges);
std::vector<TentativeNote> track_tentative(const std::vector<Ridge>& ridges, const std::vector<RidgeCurves>& curves,
                                           const PeakParams& params, double offset_threshold);
PeakParams peak_params_from(const std::vector<double>& point);

/// Peak-picking parameters fitted on the training set: one set scoring step 2
/// (max F_on), one feeding the classifier (max F_2, recall-weighted).
struct TentativeState {
  PeakParams score;
  PeakParams recall;
  GridSearchResult score_search;
  GridSearchResult recall_search;
};
const TentativeState& tentative_state(const dag::Graph& graph);

/// Labels: greedy nearest-onset assignment to reference notes.
std::vector<int> label_notes(const std::vector<NoteEvent>& est, const TrackAnnotation& ref,
                             const EvalTolerances& tol);

/// Step-1 parameters tuned on training data.
struct Step1Params {
  double t_on = 0.5;
  double t_off = 0.4;
  double t_sum = 0.0;
  double t_fr = 0.5;
};

/// Blob settings per event type; onsets read t2_onset, offsets t2_offset.
struct DirectParams {
  BlobParams onset;
  BlobParams offset;
  double reliability_onset = -std::numeric_limits<double>::infinity();
  double reliability_offset = -std::numeric_limits<double>::infinity();
};

/// Estimates for one track.
struct TrackEstimates {
  std::vector<NoteEvent> step1, step2, step3, direct_notes;
  FramePitches step1_frames, step2_frames, step3_frames;
  std::vector<PitchEvent> direct_onsets, direct_offsets;
  std::vector<Ridge> ridges;
};

std::vector<NoteEvent> step1_notes(const std::vector<Ridge>& ridges, const Step1Params& p, const GridSpec& grid);
FramePitches step1_frames(const Pitchogram& framewise, double t_fr);

/// Runs a full experiment inside a run directory.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::filesystem::path run_dir, int jobs = 1);

  const ExperimentConfig& config() const { return config_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }

  /// Writes the dataset under <run>/data (cmd gen).
  void generate();
  /// Trains every node with checkpoints under <run>/checkpoints.
  dag::Telemetry train(const std::set<std::string>& retrain = {});
  /// Tunes step-1 and direct-system thresholds; writes tuning.json.
  void tune();
  /// Scores the test subsets; writes report.csv, report.json and estimates/.
  EvalReport evaluate();
  /// All of the above plus figure.svg.
  EvalReport compare();

  dag::Graph& graph() { return graph_; }
  std::vector<TrackContext>& train_tracks();
  std::vector<TrackContext>& validation_tracks();
  const Step1Params& step1() const { return step1_; }
  const DirectParams& direct_params() const { return direct_params_; }
  /// Per-track estimates of the last evaluation, by subset.
  const std::map<std::string, std::vector<TrackEstimates>>& estimates() const { return estimates_; }
  /// Upper limit and step recalls per test track, for supervision checks.
  struct TrackBound {
    std::string subset, track_id;
    double upper_limit = 0, recall_step2 = 0, recall_step3 = 0;
  };
  const std::vector<TrackBound>& bounds() const { return bounds_; }
  /// Telemetry of the last train() call.
  const dag::Telemetry& telemetry() const { return telemetry_; }

  /// Restores trained states from checkpoints; throws naming the missing stage.
  void ensure_trained();
  /// Loads tuning.json; throws naming the missing stage.
  void ensure_tuned();

 private:
  void load_data();
  std::filesystem::path data_dir() const { return run_dir_ / "data"; }
  std::filesystem::path checkpoints() const { return run_dir_ / "checkpoints"; }
  dag::TrainOptions options() const;
  TrackEstimates estimate(const TrackContext& ctx) const;
  std::vector<std::string> eval_targets() const;

  ExperimentConfig config_;
  std::filesystem::path run_dir_;
  int jobs_;
  dag::Graph graph_;
  std::optional<dag::TrainingSet> train_;
  std::optional<std::vector<TrackContext>> validation_;
  bool trained_ = false;
  bool tuned_ = false;
  Step1Params step1_;
  DirectParams direct_params_;
  std::map<std::string, std::vector<TrackEstimates>> estimates_;
  std::vector<TrackBound> bounds_;
  dag::Telemetry telemetry_;
};

/// Static SVG of one pitchogram with ridges, detected onsets/offsets and ground truth.
std::string render_figure_svg(const TrackContext& ctx, const Pitchogram& framewise, const TrackEstimates& est);

}  // namespace ltrack::pipeline
