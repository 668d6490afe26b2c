#include "ltrack/error.hpp"
#include "ltrack/pipeline.hpp"
#include "ltrack/ridge_extract.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace ltrack::pipeline {

using nlohmann::json;

namespace {

json grid_json(const GridSpec& g) {
  return {{"pitch_min_midi", g.pitch_min_midi}, {"pitch_max_midi", g.pitch_max_midi}, {"bin_cents", g.bin_cents},
          {"hop_s", g.hop_s}};
}

GridSpec grid_from(const json& j) {
  return {j.at("pitch_min_midi").get<double>(), j.at("pitch_max_midi").get<double>(), j.at("bin_cents").get<double>(),
          j.at("hop_s").get<double>()};
}

json synth_json(const synth::SynthConfig& c) {
  return {{"n_notes_min", c.n_notes_min},
          {"n_notes_max", c.n_notes_max},
          {"polyphony_max", c.polyphony_max},
          {"duration_min_s", c.duration_min_s},
          {"duration_max_s", c.duration_max_s},
          {"track_duration_s", c.track_duration_s},
          {"vibrato_rate_hz", c.vibrato_rate_hz},
          {"vibrato_depth_cents", c.vibrato_depth_cents},
          {"n_partials", c.n_partials},
          {"partial_rolloff", c.partial_rolloff},
          {"amplitude_decay_per_s", c.amplitude_decay_per_s},
          {"attack_s", c.attack_s},
          {"noise_floor", c.noise_floor},
          {"seed", c.seed},
          {"attack_floor", c.attack_floor},
          {"release_s", c.release_s},
          {"ridge_width_cents", c.ridge_width_cents},
          {"repeat_probability", c.repeat_probability},
          {"repeat_gap_max_s", c.repeat_gap_max_s},
          {"fractional_probability", c.fractional_probability},
          {"min_simultaneous_interval", c.min_simultaneous_interval}};
}

synth::SynthConfig synth_from(const json& j) {
  synth::SynthConfig c;
  c.n_notes_min = j.at("n_notes_min");
  c.n_notes_max = j.at("n_notes_max");
  c.polyphony_max = j.at("polyphony_max");
  c.duration_min_s = j.at("duration_min_s");
  c.duration_max_s = j.at("duration_max_s");
  c.track_duration_s = j.at("track_duration_s");
  c.vibrato_rate_hz = j.at("vibrato_rate_hz");
  c.vibrato_depth_cents = j.at("vibrato_depth_cents");
  c.n_partials = j.at("n_partials");
  c.partial_rolloff = j.at("partial_rolloff");
  c.amplitude_decay_per_s = j.at("amplitude_decay_per_s");
  c.attack_s = j.at("attack_s");
  c.noise_floor = j.at("noise_floor");
  c.seed = j.at("seed");
  c.attack_floor = j.at("attack_floor");
  c.release_s = j.at("release_s");
  c.ridge_width_cents = j.at("ridge_width_cents");
  c.repeat_probability = j.at("repeat_probability");
  c.repeat_gap_max_s = j.at("repeat_gap_max_s");
  c.fractional_probability = j.at("fractional_probability");
  c.min_simultaneous_interval = j.at("min_simultaneous_interval");
  return c;
}

json subset_json(const SubsetSpec& s) {
  return {{"name", s.name},
          {"n_train", s.n_train},
          {"n_validation", s.n_validation},
          {"n_test", s.n_test},
          {"synth", synth_json(s.synth)}};
}

SubsetSpec subset_from(const json& j) {
  SubsetSpec s;
  s.name = j.at("name");
  s.n_train = j.at("n_train");
  s.n_validation = j.at("n_validation");
  s.n_test = j.at("n_test");
  s.synth = synth_from(j.at("synth"));
  return s;
}

json net_json(const NetConfig& n) {
  return {{"hidden", n.hidden},
          {"learning_rate", n.train.learning_rate},
          {"epochs", n.train.epochs},
          {"batch_size", n.train.batch_size},
          {"l2", n.train.l2},
          {"standardize", n.train.standardize},
          {"positive_weight", n.train.positive_weight},
          {"max_positives_per_track", n.max_positives_per_track},
          {"random_negative_ratio", n.random_negative_ratio},
          {"hard_negative_ratio", n.hard_negative_ratio}};
}

NetConfig net_from(const json& j) {
  NetConfig n;
  n.hidden = j.at("hidden").get<std::vector<int>>();
  n.train.learning_rate = j.at("learning_rate");
  n.train.epochs = j.at("epochs");
  n.train.batch_size = j.at("batch_size");
  n.train.l2 = j.at("l2");
  n.train.standardize = j.at("standardize");
  n.train.positive_weight = j.at("positive_weight");
  n.max_positives_per_track = j.at("max_positives_per_track");
  n.random_negative_ratio = j.at("random_negative_ratio");
  n.hard_negative_ratio = j.at("hard_negative_ratio");
  return n;
}

// Overlays `patch` onto `base`, rejecting keys the base does not have.
void merge_into(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (key == "subsets") {
      if (!it.value().is_array()) throw ConfigError("config: 'subsets' must be an array");
      json out = json::array();
      for (const auto& elem : it.value()) {
        json d = subset_json(SubsetSpec{});
        merge_into(d, elem, "subsets[]");
        out.push_back(d);
      }
      slot = out;
    } else if (slot.is_object()) {
      merge_into(slot, it.value(), key);
    } else {
      const bool both_numbers = slot.is_number() && it.value().is_number();
      if (slot.type() != it.value().type() && !both_numbers && !slot.is_null()) {
        throw ConfigError("config: '" + key + "' has the wrong type");
      }
      slot = it.value();
    }
  }
}

json peak_grid_json(const PeakGrid& g) {
  return {{"smooth_halfwidth", g.smooth_halfwidth},
          {"abs_threshold", g.abs_threshold},
          {"min_prominence", g.min_prominence},
          {"min_distance", g.min_distance}};
}

json blob_grid_json(const BlobGrid& g) {
  return {{"t", g.t}, {"t2_onset", g.t2_onset}, {"t2_offset", g.t2_offset}, {"sigma_freq", g.sigma_freq},
          {"sigma_time", g.sigma_time}};
}

json config_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["grids"] = {{"pitchogram", grid_json(c.pitch_grid)}, {"spectrogram", grid_json(c.spec_grid)}};
  j["flux_bin_frames"] = c.flux_bin_frames;
  json subsets = json::array();
  for (const auto& s : c.subsets) subsets.push_back(subset_json(s));
  j["subsets"] = subsets;
  j["nets"] = {{"framewise", net_json(c.framewise)},       {"onset", net_json(c.onset)},
               {"offset", net_json(c.offset)},             {"classifier", net_json(c.classifier)},
               {"direct_onset", net_json(c.direct_onset)}, {"direct_offset", net_json(c.direct_offset)}};
  j["targets"] = {{"framewise_pitch_smear", c.framewise_pitch_smear},
                  {"onset_smear_frames", c.onset_smear_frames},
                  {"onset_pitch_smear", c.onset_pitch_smear},
                  {"direct_pitch_smear", c.direct_pitch_smear}};
  j["ridge"] = {{"t_ridge", c.t_ridge},
                {"max_jump_bins", c.max_jump_bins},
                {"t_sum", c.ridge_t_sum},
                {"smooth_bins", c.ridge_smooth_bins}};
  j["step1"] = {{"t_on", c.step1_t_on},
                {"t_sum", c.step1_t_sum},
                {"t_fr", c.step1_t_fr},
                {"offset_ratio", c.step1_offset_ratio}};
  j["peaks"] = peak_grid_json(c.peaks);
  j["offset_threshold"] = c.offset_threshold;
  j["classifier"] = {{"augment_min_frames", c.classifier_augment_min_frames},
                     {"augment_max_frames", c.classifier_augment_max_frames}};
  j["blob"] = {{"t", c.blob.t},
               {"s", c.blob.s},
               {"t2_onset", c.blob.t2_onset},
               {"t2_offset", c.blob.t2_offset},
               {"sigma_freq", c.blob.sigma_freq},
               {"sigma_time", c.blob.sigma_time},
               {"tune", c.tune_blob},
               {"grid", blob_grid_json(c.blob_grid)}};
  j["tolerances"] = {{"onset_ms", c.tolerances.onset_tol_s * 1000.0},
                     {"offset_ms", c.tolerances.offset_tol_s * 1000.0},
                     {"cents", c.tolerances.pitch_tol_cents}};
  j["steps"] = std::vector<std::string>(c.steps.begin(), c.steps.end());
  j["distortion"] = {{"enabled", c.distortion},
                     {"gain", c.distortion_params.gain},
                     {"eq_tilt_db_per_octave", c.distortion_params.eq_tilt_db_per_octave},
                     {"added_noise_sigma", c.distortion_params.added_noise_sigma},
                     {"compression_exponent", c.distortion_params.compression_exponent}};
  return j;
}

ExperimentConfig config_from(const json& j) {
  ExperimentConfig c;
  c.seed = j.at("seed");
  c.pitch_grid = grid_from(j.at("grids").at("pitchogram"));
  c.spec_grid = grid_from(j.at("grids").at("spectrogram"));
  c.flux_bin_frames = j.at("flux_bin_frames");
  for (const auto& s : j.at("subsets")) c.subsets.push_back(subset_from(s));
  const auto& n = j.at("nets");
  c.framewise = net_from(n.at("framewise"));
  c.onset = net_from(n.at("onset"));
  c.offset = net_from(n.at("offset"));
  c.classifier = net_from(n.at("classifier"));
  c.direct_onset = net_from(n.at("direct_onset"));
  c.direct_offset = net_from(n.at("direct_offset"));
  const auto& t = j.at("targets");
  c.framewise_pitch_smear = t.at("framewise_pitch_smear");
  c.onset_smear_frames = t.at("onset_smear_frames");
  c.onset_pitch_smear = t.at("onset_pitch_smear");
  c.direct_pitch_smear = t.at("direct_pitch_smear");
  c.t_ridge = j.at("ridge").at("t_ridge");
  c.max_jump_bins = j.at("ridge").at("max_jump_bins");
  c.ridge_t_sum = j.at("ridge").at("t_sum");
  c.ridge_smooth_bins = j.at("ridge").at("smooth_bins");
  c.step1_t_on = j.at("step1").at("t_on").get<std::vector<double>>();
  c.step1_t_sum = j.at("step1").at("t_sum").get<std::vector<double>>();
  c.step1_t_fr = j.at("step1").at("t_fr").get<std::vector<double>>();
  c.step1_offset_ratio = j.at("step1").at("offset_ratio");
  const auto& p = j.at("peaks");
  c.peaks.smooth_halfwidth = p.at("smooth_halfwidth").get<std::vector<double>>();
  c.peaks.abs_threshold = p.at("abs_threshold").get<std::vector<double>>();
  c.peaks.min_prominence = p.at("min_prominence").get<std::vector<double>>();
  c.peaks.min_distance = p.at("min_distance").get<std::vector<double>>();
  c.offset_threshold = j.at("offset_threshold");
  c.classifier_augment_min_frames = j.at("classifier").at("augment_min_frames");
  c.classifier_augment_max_frames = j.at("classifier").at("augment_max_frames");
  const auto& b = j.at("blob");
  c.blob.t = b.at("t");
  c.blob.s = b.at("s");
  c.blob.t2_onset = b.at("t2_onset");
  c.blob.t2_offset = b.at("t2_offset");
  c.blob.sigma_freq = b.at("sigma_freq");
  c.blob.sigma_time = b.at("sigma_time");
  c.tune_blob = b.at("tune");
  const auto& g = b.at("grid");
  c.blob_grid.t = g.at("t").get<std::vector<double>>();
  c.blob_grid.t2_onset = g.at("t2_onset").get<std::vector<double>>();
  c.blob_grid.t2_offset = g.at("t2_offset").get<std::vector<double>>();
  c.blob_grid.sigma_freq = g.at("sigma_freq").get<std::vector<double>>();
  c.blob_grid.sigma_time = g.at("sigma_time").get<std::vector<double>>();
  c.tolerances.onset_tol_s = j.at("tolerances").at("onset_ms").get<double>() / 1000.0;
  c.tolerances.offset_tol_s = j.at("tolerances").at("offset_ms").get<double>() / 1000.0;
  c.tolerances.pitch_tol_cents = j.at("tolerances").at("cents");
  c.steps.clear();
  for (const auto& s : j.at("steps")) c.steps.insert(s.get<std::string>());
  const auto& d = j.at("distortion");
  c.distortion = d.at("enabled");
  c.distortion_params.gain = d.at("gain");
  c.distortion_params.eq_tilt_db_per_octave = d.at("eq_tilt_db_per_octave");
  c.distortion_params.added_noise_sigma = d.at("added_noise_sigma");
  c.distortion_params.compression_exponent = d.at("compression_exponent");
  return c;
}

NetConfig net(std::vector<int> hidden, double lr, int epochs, int batch, double l2, double pos_weight) {
  NetConfig n;
  n.hidden = std::move(hidden);
  n.train.learning_rate = lr;
  n.train.epochs = epochs;
  n.train.batch_size = batch;
  n.train.l2 = l2;
  n.train.standardize = true;
  n.train.positive_weight = pos_weight;
  return n;
}

}  // namespace

double ExperimentConfig::max_jump() const {
  return max_jump_bins > 0 ? max_jump_bins : default_max_jump_bins(pitch_grid.bin_cents);
}

void ExperimentConfig::validate() const {
  pitch_grid.validate();
  spec_grid.validate();
  if (pitch_grid.hop_s != spec_grid.hop_s) throw ConfigError("config: pitchogram and spectrogram hops differ");
  if (flux_bin_frames < 1) throw ConfigError("config: flux_bin_frames must be >= 1");
  if (subsets.empty()) throw ConfigError("config: no subsets");
  std::set<std::string> names;
  for (const auto& s : subsets) {
    if (s.name.empty() || !names.insert(s.name).second) throw ConfigError("config: subset names must be unique");
    if (s.n_train < 0 || s.n_validation < 0 || s.n_test < 1) throw ConfigError("config: bad split sizes in " + s.name);
    s.synth.validate();
  }
  int n_train = 0, n_val = 0;
  for (const auto& s : subsets) {
    n_train += s.n_train;
    n_val += s.n_validation;
  }
  if (n_train < 1) throw ConfigError("config: no training tracks");
  if (n_val < 1 && steps.contains("direct")) throw ConfigError("config: the direct system needs validation tracks");
  for (const auto& st : steps)
    if (st != "1" && st != "2" && st != "3" && st != "direct") throw ConfigError("config: unknown step '" + st + "'");
  if (!(t_ridge > 0 && t_ridge < 1)) throw ConfigError("config: ridge.t_ridge must lie in (0, 1)");
  if (!(ridge_smooth_bins >= 0)) throw ConfigError("config: ridge.smooth_bins must be >= 0");
  if (step1_t_on.empty() || step1_t_sum.empty() || step1_t_fr.empty())
    throw ConfigError("config: step1 grids must be non-empty");
  if (!(step1_offset_ratio > 0 && step1_offset_ratio <= 1)) throw ConfigError("config: step1.offset_ratio outside (0, 1]");
  if (classifier_augment_min_frames < 1 || classifier_augment_max_frames < classifier_augment_min_frames)
    throw ConfigError("config: bad classifier augmentation range");
  blob.validate();
  tolerances.validate();
  distortion_params.validate();
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json patch;
  try {
    patch = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  json base = config_json(reference_config());
  merge_into(base, patch, "");
  try {
    ExperimentConfig c = config_from(base);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string ExperimentConfig::to_json() const { return config_json(*this).dump(2); }

ExperimentConfig reference_config() {
  ExperimentConfig c;
  c.framewise = net({10}, 0.01, 30, 256, 0.0, 1.0);
  c.framewise.max_positives_per_track = 5000;
  c.onset = net({16}, 0.005, 60, 128, 1e-4, 2.0);
  c.offset = net({16}, 0.005, 60, 128, 1e-4, 1.0);
  c.classifier = net({8}, 0.01, 200, 64, 1e-4, 1.0);
  c.direct_onset = net({16}, 0.005, 40, 128, 1e-4, 2.0);
  c.direct_offset = net({16}, 0.005, 40, 128, 1e-4, 2.0);
  // Ridge nets see every ridge point: the domain is already sparse.
  for (NetConfig* n : {&c.onset, &c.offset}) n->max_positives_per_track = 0;
  for (NetConfig* n : {&c.direct_onset, &c.direct_offset}) {
    n->max_positives_per_track = 400;
    n->random_negative_ratio = 3.0;
    n->hard_negative_ratio = 2.0;
  }

  synth::SynthConfig base;
  base.track_duration_s = 3.0;
  base.n_notes_min = 6;
  base.n_notes_max = 10;
  base.polyphony_max = 4;
  base.duration_min_s = 0.15;
  base.duration_max_s = 1.0;

  SubsetSpec piano{"piano", base};
  piano.synth.attack_s = 0.005;
  piano.synth.amplitude_decay_per_s = 1.5;
  piano.synth.n_partials = 6;
  piano.synth.partial_rolloff = 0.6;
  piano.synth.release_s = 0.06;
  piano.synth.repeat_probability = 0.5;
  piano.synth.repeat_gap_max_s = 0.01;

  SubsetSpec strings{"strings", base};
  strings.synth.attack_s = 0.08;
  strings.synth.vibrato_depth_cents = 30.0;
  strings.synth.n_partials = 5;
  strings.synth.partial_rolloff = 0.75;
  strings.synth.release_s = 0.04;
  strings.synth.repeat_probability = 0.4;
  strings.synth.repeat_gap_max_s = 0.01;

  SubsetSpec mixed{"mixed", base};
  mixed.synth.attack_s = 0.03;
  mixed.synth.amplitude_decay_per_s = 0.6;
  mixed.synth.vibrato_depth_cents = 15.0;
  mixed.synth.release_s = 0.05;
  mixed.synth.repeat_probability = 0.4;
  mixed.synth.repeat_gap_max_s = 0.01;

  SubsetSpec dense{"dense", base};
  dense.synth.n_notes_min = 10;
  dense.synth.n_notes_max = 14;
  dense.synth.noise_floor = 0.08;
  dense.synth.attack_s = 0.02;
  dense.synth.amplitude_decay_per_s = 0.8;
  dense.synth.release_s = 0.06;
  dense.synth.repeat_probability = 0.35;
  dense.synth.repeat_gap_max_s = 0.01;

  c.subsets = {piano, strings, mixed, dense};
  return c;
}

ExperimentConfig micro_config() {
  ExperimentConfig c = reference_config();
  SubsetSpec s = c.subsets[2];
  s.n_train = 3;
  s.n_validation = 1;
  s.n_test = 1;
  s.synth.track_duration_s = 2.5;
  c.subsets = {s};
  for (NetConfig* n : {&c.framewise, &c.onset, &c.offset, &c.direct_onset, &c.direct_offset}) n->train.epochs = 10;
  c.classifier.train.epochs = 60;
  c.blob_grid = BlobGrid{{-8.0}, {1.5}, {3.0}, {1.8}, {0.85}};
  c.peaks = PeakGrid{{1}, {0.2, 0.35}, {0.05}, {4, 8}};
  return c;
}

std::string config_help() {
  const ExperimentConfig d = reference_config();
  std::ostringstream o;
  o << "Config keys (JSON; every key optional, shown with its default):\n"
    << "  seed                          " << d.seed << "  base seed for track generation and training\n"
    << "  grids.pitchogram              26-104 MIDI, 10 cents, hop 5.8 ms  framewise pitch grid\n"
    << "  grids.spectrogram             20-140 MIDI, 20 cents, hop 5.8 ms  spectrogram/flux grid\n"
    << "  flux_bin_frames               4  flux summed over 23.2 ms time bins\n"
    << "  subsets[]                     piano, strings, mixed, dense: {name, n_train, n_validation, n_test, synth{...}}\n"
    << "  subsets[].synth.*             n_notes_min/max, polyphony_max, duration_min/max_s, track_duration_s,\n"
    << "                                vibrato_rate_hz, vibrato_depth_cents, n_partials, partial_rolloff,\n"
    << "                                amplitude_decay_per_s, attack_s, noise_floor, seed, attack_floor,\n"
    << "                                release_s, ridge_width_cents, repeat_probability, repeat_gap_max_s,\n"
    << "                                fractional_probability, min_simultaneous_interval\n"
    << "  nets.<name>.*                 hidden, learning_rate, epochs, batch_size, l2, standardize, positive_weight,\n"
    << "                                max_positives_per_track, random_negative_ratio, hard_negative_ratio\n"
    << "                                names: framewise, onset, offset, classifier, direct_onset, direct_offset\n"
    << "  targets.framewise_pitch_smear 2 bins;  targets.onset_smear_frames 2;  targets.onset_pitch_smear 5 bins\n"
    << "  targets.direct_pitch_smear    2 bins of the direct grid\n"
    << "  ridge.t_ridge                 0.25  ridge threshold (recall setting fed downstream)\n"
    << "  ridge.max_jump_bins           0     0 means ceil(60 cents / bin)\n"
    << "  ridge.t_sum                   0     summed-activation pruning of downstream ridges\n"
    << "  ridge.smooth_bins             2     Gaussian sigma across pitch (bins) before peak picking; 0 = off\n"
    << "  step1.t_on / t_sum / t_fr     grids searched on training data; step1.offset_ratio 0.8 (t_off = ratio * t_on)\n"
    << "  peaks.*                       grids for smooth_halfwidth, abs_threshold, min_prominence, min_distance\n"
    << "  offset_threshold              0.5   beyond-offset activation threshold\n"
    << "  classifier.augment_min/max_frames  3 / 9  spurious second onsets added for training\n"
    << "  blob.t                        -8    smooth threshold on pre-sigmoid activations\n"
    << "  blob.s                        1     smoothness of the threshold\n"
    << "  blob.t2_onset                 1.5   region threshold for onsets\n"
    << "  blob.t2_offset                3     region threshold for offsets\n"
    << "  blob.sigma_freq               1.8   Gaussian sigma across frequency (bins)\n"
    << "  blob.sigma_time               0.85  Gaussian sigma across time (frames)\n"
    << "  blob.tune                     true  grid-search blob.grid.* on validation (defaults included)\n"
    << "  tolerances.onset_ms           50\n"
    << "  tolerances.offset_ms          100\n"
    << "  tolerances.cents              50\n"
    << "  steps                         [\"1\",\"2\",\"3\",\"direct\"]\n"
    << "  distortion.enabled            false; gain 1, eq_tilt_db_per_octave 1.5, added_noise_sigma 0.01,\n"
    << "                                compression_exponent 0.9 (applied per module when enabled)\n";
  return o.str();
}

}  // namespace ltrack::pipeline
