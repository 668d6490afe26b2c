#include "ltrack/error.hpp"
#include "ltrack/io.hpp"
#include "ltrack/pipeline.hpp"
#include "ltrack/ridge_extract.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace ltrack::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tuning, like training, is done at the standard tolerances.
const EvalTolerances kTuneTolerances{};

json search_json(const GridSearchResult& r) {
  json t = json::array();
  for (const auto& [p, v] : r.table) t.push_back({{"point", p}, {"value", v}});
  return {{"best", r.best}, {"best_value", r.best_value}, {"table", t}};
}

json blob_json(const BlobParams& b, bool onset) {
  return {{"t", b.t},
          {"s", b.s},
          {"t2", onset ? b.t2_onset : b.t2_offset},
          {"sigma_freq", b.sigma_freq},
          {"sigma_time", b.sigma_time}};
}

BlobParams blob_from(const json& j, bool onset) {
  BlobParams b;
  b.t = j.at("t");
  b.s = j.at("s");
  (onset ? b.t2_onset : b.t2_offset) = j.at("t2");
  b.sigma_freq = j.at("sigma_freq");
  b.sigma_time = j.at("sigma_time");
  return b;
}

// Infinite thresholds do not survive JSON numbers.
json threshold_json(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  return v;
}

double threshold_from(const json& j) {
  if (j.is_string()) return j.get<std::string>() == "-inf" ? -INFINITY : INFINITY;
  return j.get<double>();
}

Pitchogram direct_map(const TrackContext& ctx, const dag::Graph& graph, const std::string& key) {
  const GridSpec g = direct_grid();
  const auto& rep = graph.read(ctx, key);
  const int nb = g.n_bins();
  if (rep.rows % nb != 0) throw Error("direct activations do not tile the direct grid");
  Pitchogram p;
  p.grid = g;
  p.values = Eigen::Map<const FloatGrid>(rep.data->data(), nb, rep.rows / nb);
  return p;
}

std::vector<PitchEvent> direct_events(const Pitchogram& logits, const BlobParams& b, bool onset) {
  return blob_events(logits, b.t, b.s, b.sigma_freq, b.sigma_time, onset ? b.t2_onset : b.t2_offset);
}

FramePitches frames_of_notes(const std::vector<TentativeNote>& notes, const std::vector<Ridge>& ridges,
                             const GridSpec& grid, int n_frames) {
  FramePitches fp(static_cast<std::size_t>(n_frames));
  for (const auto& n : notes) add_note_frames(n, ridges[static_cast<std::size_t>(n.ridge)], grid, fp);
  return fp;
}

std::vector<NoteEvent> events_of_notes(const std::vector<TentativeNote>& notes, const std::vector<Ridge>& ridges,
                                       const GridSpec& grid) {
  std::vector<NoteEvent> out;
  for (const auto& n : notes) out.push_back(to_note_event(n, ridges[static_cast<std::size_t>(n.ridge)], grid));
  sort_notes(out);
  return out;
}

std::string states_fingerprint(const dag::Graph& g) {
  io::Hasher h;
  for (const auto& name : g.node_names()) h.str(name).str(g.state_hash(name));
  return h.hex();
}

}  // namespace

std::vector<NoteEvent> step1_notes(const std::vector<Ridge>& ridges, const Step1Params& p, const GridSpec& grid) {
  std::vector<NoteEvent> out;
  for (const auto& r : prune_ridges(ridges, p.t_sum)) {
    if (auto e = step1_endpoints(r, p.t_on, p.t_off, grid)) out.push_back(e->note);
  }
  sort_notes(out);
  return out;
}

FramePitches step1_frames(const Pitchogram& framewise, double t_fr) {
  const int nb = framewise.n_bins();
  FramePitches out(static_cast<std::size_t>(framewise.n_frames()));
  for (int f = 0; f < framewise.n_frames(); ++f) {
    for (int b = 0; b < nb; ++b) {
      const float v = framewise.values(b, f);
      if (v <= t_fr) continue;
      if (b > 0 && !(v > framewise.values(b - 1, f))) continue;
      if (b + 1 < nb && !(v >= framewise.values(b + 1, f))) continue;
      out[static_cast<std::size_t>(f)].push_back(bin_to_pitch(b, framewise.grid));
    }
  }
  return out;
}

Experiment::Experiment(ExperimentConfig config, fs::path run_dir, int jobs)
    : config_(std::move(config)), run_dir_(std::move(run_dir)), jobs_(std::max(1, jobs)) {
  config_.validate();
  graph_ = build_graph(config_);
}

void Experiment::load_data() {
  if (!train_) {
    train_ = dag::make_training_set(load_split(data_dir(), "train", config_));
    if (config_.distortion) {
      const auto& d = config_.distortion_params;
      train_->hash = io::Hasher()
                         .str(train_->hash)
                         .str("distorted")
                         .f64(d.gain)
                         .f64(d.eq_tilt_db_per_octave)
                         .f64(d.added_noise_sigma)
                         .f64(d.compression_exponent)
                         .hex();
    }
  }
  if (!validation_) validation_ = load_split(data_dir(), "validation", config_);
}

std::vector<TrackContext>& Experiment::train_tracks() {
  load_data();
  return train_->tracks;
}

std::vector<TrackContext>& Experiment::validation_tracks() {
  load_data();
  return *validation_;
}

dag::TrainOptions Experiment::options() const {
  dag::TrainOptions o;
  o.checkpoint_dir = checkpoints();
  o.distortion = config_.distortion;
  const auto params = config_.distortion_params;
  const int width = config_.flux_bin_frames;
  o.distort = [params, width](const TrackContext& ctx, std::uint64_t seed) {
    return distort_track(ctx, params, seed, width);
  };
  o.seed = config_.seed;
  o.jobs = jobs_;
  return o;
}

void Experiment::generate() {
  const DataSet d = generate_dataset(config_, jobs_);
  save_dataset(d, data_dir(), config_);
  train_.reset();
  validation_.reset();
}

dag::Telemetry Experiment::train(const std::set<std::string>& retrain) {
  for (const auto& r : retrain) {
    if (!graph_.contains(r)) throw ConfigError("--retrain: no node named '" + r + "'");
    if (!graph_.node(r).trainable()) throw ConfigError("--retrain: node '" + r + "' has nothing to train");
  }
  load_data();
  auto o = options();
  o.retrain = retrain;
  telemetry_ = graph_.train_pipeline(*train_, o);
  trained_ = true;
  tuned_ = false;
  return telemetry_;
}

void Experiment::ensure_trained() {
  if (trained_) return;
  load_data();
  const auto missing = graph_.restore_states(train_->hash, options());
  if (!missing.empty()) {
    std::string names;
    for (const auto& m : missing) names += (names.empty() ? "" : ", ") + m;
    throw Error("missing prerequisite: stage 'train' (untrained nodes: " + names + "); run train first");
  }
  trained_ = true;
}

void Experiment::tune() {
  ensure_trained();
  load_data();
  const GridSpec& grid = config_.pitch_grid;
  json out;

  // Step 1 on the training tracks.
  auto& tracks = train_->tracks;
  graph_.process_all(tracks, {"ridges"}, jobs_);
  std::vector<std::vector<Ridge>> ridges;
  std::vector<Pitchogram> maps;
  for (const auto& t : tracks) {
    ridges.push_back(track_ridges(t, graph_));
    maps.push_back(framewise_map(t, graph_, config_));
  }
  const double ratio = config_.step1_offset_ratio;
  const auto onset_search = grid_search(
      {{"t_on", config_.step1_t_on}, {"t_sum", config_.step1_t_sum}},
      [&](const std::vector<double>& p) {
        Counts c;
        const Step1Params sp{p[0], ratio * p[0], p[1], 0.0};
        for (std::size_t i = 0; i < tracks.size(); ++i)
          c += eval_onsets(tracks[i].annotation.notes, step1_notes(ridges[i], sp, grid), kTuneTolerances);
        return c.f();
      },
      jobs_);
  const auto frame_search = grid_search(
      {{"t_fr", config_.step1_t_fr}},
      [&](const std::vector<double>& p) {
        Counts c;
        for (std::size_t i = 0; i < tracks.size(); ++i)
          c += eval_framewise(tracks[i].annotation.notes, step1_frames(maps[i], p[0]), grid, kTuneTolerances);
        return c.f();
      },
      jobs_);
  step1_ = {onset_search.best[0], ratio * onset_search.best[0], onset_search.best[1], frame_search.best[0]};
  out["step1"] = {{"t_on", step1_.t_on},
                  {"t_off", step1_.t_off},
                  {"t_sum", step1_.t_sum},
                  {"t_fr", step1_.t_fr},
                  {"onset_search", search_json(onset_search)},
                  {"framewise_search", search_json(frame_search)}};
  out["peaks"] = json::parse(graph_.node("tentative").save_state());

  // Direct system on the validation tracks.
  if (config_.steps.contains("direct")) {
    auto& val = *validation_;
    graph_.process_all(val, {"direct_onset", "direct_offset"}, jobs_);
    std::vector<Pitchogram> on_maps, off_maps;
    for (const auto& t : val) {
      on_maps.push_back(direct_map(t, graph_, "direct_onset/logits"));
      off_maps.push_back(direct_map(t, graph_, "direct_offset/logits"));
    }
    const auto& bg = config_.blob_grid;
    const auto& b0 = config_.blob;
    for (const bool onset : {true, false}) {
      const auto& maps_ = onset ? on_maps : off_maps;
      const double tol_s = onset ? kTuneTolerances.onset_tol_s : kTuneTolerances.offset_tol_s;
      std::vector<GridAxis> axes;
      if (config_.tune_blob) {
        axes = {{"t", bg.t}, {"t2", onset ? bg.t2_onset : bg.t2_offset}, {"sigma_freq", bg.sigma_freq},
                {"sigma_time", bg.sigma_time}};
      } else {
        axes = {{"t", {b0.t}}, {"t2", {onset ? b0.t2_onset : b0.t2_offset}}, {"sigma_freq", {b0.sigma_freq}},
                {"sigma_time", {b0.sigma_time}}};
      }
      auto params_at = [&](const std::vector<double>& p) {
        BlobParams b = b0;
        b.t = p[0];
        (onset ? b.t2_onset : b.t2_offset) = p[1];
        b.sigma_freq = p[2];
        b.sigma_time = p[3];
        return b;
      };
      auto sweep_at = [&](const BlobParams& b) {
        std::vector<SweepTrack> st;
        for (std::size_t i = 0; i < val.size(); ++i) {
          const auto& notes = val[i].annotation.notes;
          st.push_back({onset ? onset_events(notes) : offset_events(notes), direct_events(maps_[i], b, onset)});
        }
        return reliability_sweep(st, tol_s, kTuneTolerances.pitch_tol_cents);
      };
      const auto search =
          grid_search(axes, [&](const std::vector<double>& p) { return sweep_at(params_at(p)).f; }, jobs_);
      const BlobParams best = params_at(search.best);
      const auto sweep = sweep_at(best);
      (onset ? direct_params_.onset : direct_params_.offset) = best;
      (onset ? direct_params_.reliability_onset : direct_params_.reliability_offset) = sweep.threshold;
      json sj = blob_json(best, onset);
      sj["reliability"] = threshold_json(sweep.threshold);
      sj["f"] = sweep.f;
      sj["search"] = search_json(search);
      out["direct"][onset ? "onset" : "offset"] = sj;
    }
    for (auto& t : val) t.values.clear();
  }
  out["models"] = states_fingerprint(graph_);
  fs::create_directories(run_dir_);
  io::write_file(run_dir_ / "tuning.json", out.dump(1) + "\n");
  tuned_ = true;
}

void Experiment::ensure_tuned() {
  if (tuned_) return;
  ensure_trained();
  const fs::path path = run_dir_ / "tuning.json";
  if (!fs::exists(path)) throw Error("missing prerequisite: stage 'tune' (" + path.string() + "); run tune first");
  const json j = json::parse(io::read_file(path));
  if (j.at("models").get<std::string>() != states_fingerprint(graph_)) {
    throw Error("missing prerequisite: stage 'tune' is stale for the current models; run tune again");
  }
  const auto& s = j.at("step1");
  step1_ = {s.at("t_on"), s.at("t_off"), s.at("t_sum"), s.at("t_fr")};
  if (config_.steps.contains("direct")) {
    const auto& d = j.at("direct");
    direct_params_.onset = blob_from(d.at("onset"), true);
    direct_params_.offset = blob_from(d.at("offset"), false);
    direct_params_.reliability_onset = threshold_from(d.at("onset").at("reliability"));
    direct_params_.reliability_offset = threshold_from(d.at("offset").at("reliability"));
  }
  tuned_ = true;
}

std::vector<std::string> Experiment::eval_targets() const {
  std::vector<std::string> t{"ridges", "onset_net", "offset_net", "tentative"};
  if (config_.steps.contains("3")) t.push_back("note_classifier");
  if (config_.steps.contains("direct")) {
    t.push_back("direct_onset");
    t.push_back("direct_offset");
  }
  return t;
}

TrackEstimates Experiment::estimate(const TrackContext& ctx) const {
  const GridSpec& grid = config_.pitch_grid;
  TrackEstimates e;
  e.ridges = track_ridges(ctx, graph_);
  const Pitchogram P = framewise_map(ctx, graph_, config_);
  const int nf = P.n_frames();
  e.step1 = step1_notes(e.ridges, step1_, grid);
  e.step1_frames = step1_frames(P, step1_.t_fr);

  const auto curves = track_curves(ctx, graph_, e.ridges);
  const auto& ts = tentative_state(graph_);
  const auto scored = track_tentative(e.ridges, curves, ts.score, config_.offset_threshold);
  e.step2 = events_of_notes(scored, e.ridges, grid);
  e.step2_frames = frames_of_notes(scored, e.ridges, grid, nf);

  if (config_.steps.contains("3")) {
    const auto& tm = *graph_.read(ctx, "tentative").data;
    const auto& probs = *graph_.read(ctx, "note_classifier").data;
    const auto tentative = track_tentative(e.ridges, curves, ts.recall, config_.offset_threshold);
    if (static_cast<Eigen::Index>(tentative.size()) != tm.rows() || probs.rows() != tm.rows()) {
      throw Error("track " + ctx.track_id + ": classifier outputs disagree with tentative notes");
    }
    std::vector<double> p(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) p[static_cast<std::size_t>(i)] = probs(i, 0);
    const auto kept = classify_notes(tentative, p);
    e.step3 = events_of_notes(kept, e.ridges, grid);
    e.step3_frames = frames_of_notes(kept, e.ridges, grid, nf);
  }

  if (config_.steps.contains("direct")) {
    const auto& dp = direct_params_;
    e.direct_onsets = filter_reliability(
        direct_events(direct_map(ctx, graph_, "direct_onset/logits"), dp.onset, true), dp.reliability_onset);
    e.direct_offsets = filter_reliability(
        direct_events(direct_map(ctx, graph_, "direct_offset/logits"), dp.offset, false), dp.reliability_offset);
    e.direct_notes = pair_events(e.direct_onsets, e.direct_offsets, config_.tolerances.pitch_tol_cents);
  }
  return e;
}

EvalReport Experiment::evaluate() {
  ensure_trained();
  ensure_tuned();
  const auto& tol = config_.tolerances;
  const GridSpec& grid = config_.pitch_grid;
  EvalReport report;
  std::vector<std::string> steps;
  for (const char* s : {"1", "2", "3"})
    if (config_.steps.contains(s)) steps.push_back(std::string("step") + s);
  if (config_.steps.contains("direct")) steps.push_back("direct");
  for (const auto& s : steps) {
    report.steps.push_back({s, StepScores{}});
    if (s == "direct") report.steps.back().second.has_framewise = false;
  }
  auto scores = [&](const std::string& s) -> StepScores& {
    for (auto& [name, sc] : report.steps)
      if (name == s) return sc;
    throw Error("no step " + s);
  };
  estimates_.clear();
  bounds_.clear();
  const fs::path est_dir = run_dir_ / "estimates";
  std::string figure;

  for (const auto& subset : config_.subsets) {
    report.subsets.push_back(subset.name);
    auto tracks = load_split(data_dir(), "test-" + subset.name, config_);
    graph_.process_all(tracks, eval_targets(), jobs_);
    auto& ests = estimates_[subset.name];
    std::map<std::string, std::vector<TrackAnnotation>> notes_out;
    json direct_out = json::array();
    for (auto& t : tracks) {
      const auto& ref = t.annotation.notes;
      TrackEstimates e = estimate(t);
      const int nf = grid.n_frames(t.annotation.duration_s);
      const FramePitches ref_frames = notes_to_frames(ref, grid, nf);
      auto add = [&](const std::string& step, const std::vector<NoteEvent>& notes, const FramePitches* frames) {
        auto& sc = scores(step);
        if (frames) sc.framewise[subset.name] += eval_framewise(ref_frames, *frames, tol);
        sc.onset[subset.name] += eval_onsets(ref, notes, tol);
        sc.offset[subset.name] += eval_offsets(ref, notes, tol);
        notes_out[step].push_back({t.track_id, notes, t.annotation.duration_s});
      };
      if (config_.steps.contains("1")) add("step1", e.step1, &e.step1_frames);
      if (config_.steps.contains("2")) add("step2", e.step2, &e.step2_frames);
      if (config_.steps.contains("3")) add("step3", e.step3, &e.step3_frames);
      if (config_.steps.contains("direct")) {
        auto& sc = scores("direct");
        sc.onset[subset.name] += eval_events(onset_events(ref), e.direct_onsets, tol.onset_tol_s, tol.pitch_tol_cents);
        sc.offset[subset.name] +=
            eval_events(offset_events(ref), e.direct_offsets, tol.offset_tol_s, tol.pitch_tol_cents);
        notes_out["direct"].push_back({t.track_id, e.direct_notes, t.annotation.duration_s});
        auto ev = [](const std::vector<PitchEvent>& v) {
          json a = json::array();
          for (const auto& p : v) a.push_back({p.time_s, p.pitch_midi, p.reliability});
          return a;
        };
        direct_out.push_back({{"id", t.track_id}, {"onsets", ev(e.direct_onsets)}, {"offsets", ev(e.direct_offsets)}});
      }

      std::vector<PitchEvent> points;
      for (const auto& r : e.ridges)
        for (std::size_t i = 0; i < r.size(); ++i)
          points.push_back({frame_to_time(r.frames[i], grid), bin_to_pitch(r.pitch_bins[i], grid), 0.0});
      TrackBound b;
      b.subset = subset.name;
      b.track_id = t.track_id;
      b.upper_limit = upper_limit_onsets(std::span(&t.annotation, 1), std::span(&points, 1), tol);
      b.recall_step2 = ref.empty() ? 1.0 : eval_onsets(ref, e.step2, tol).recall();
      b.recall_step3 = ref.empty() || !config_.steps.contains("3") ? b.recall_step2 : eval_onsets(ref, e.step3, tol).recall();
      bounds_.push_back(b);

      if (figure.empty()) figure = render_figure_svg(t, framewise_map(t, graph_, config_), e);
      ests.push_back(std::move(e));
      t.values.clear();
    }
    for (const auto& [step, notes] : notes_out) {
      fs::create_directories(est_dir / step);
      io::save_annotations(est_dir / step / (subset.name + ".json"), notes);
    }
    if (config_.steps.contains("direct")) {
      io::write_file(est_dir / "direct" / (subset.name + ".events.json"), direct_out.dump() + "\n");
    }
  }
  io::write_file(run_dir_ / "report.csv", report.to_csv());
  io::write_file(run_dir_ / "report.json", report.to_json());
  if (!figure.empty()) io::write_file(run_dir_ / "figure.svg", figure);
  return report;
}

EvalReport Experiment::compare() {
  const fs::path manifest = data_dir() / "manifest.json";
  if (!fs::exists(manifest) ||
      json::parse(io::read_file(manifest)).value("fingerprint", std::string{}) != data_fingerprint(config_)) {
    generate();
  }
  train();
  tune();
  return evaluate();
}

}  // namespace ltrack::pipeline
