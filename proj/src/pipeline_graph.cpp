#include "ltrack/error.hpp"
#include "ltrack/io.hpp"
#include "ltrack/pipeline.hpp"
#include "ltrack/ridge_extract.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

namespace ltrack::pipeline {

using dag::Index;
using dag::Representation;
using dag::RowMatrixF;
using nlohmann::json;

namespace {

constexpr int kFramewiseDim = 14;
constexpr int kContextHalf = 8;
constexpr int kContextDim = 2 * kContextHalf + 1 + 4;
constexpr int kTentativeCols = 8;
// Labels and peak fitting use the standard tolerances whatever the
// evaluation tolerances are, so re-scoring never invalidates training.
const EvalTolerances kTrainTolerances{};

// Config sections a stateless node reads; anything else (tuning grids,
// tolerances, steps) must not invalidate its checkpoints.
std::string hash_config(const std::string& tag, const ExperimentConfig& c, std::initializer_list<const char*> keys) {
  const json j = json::parse(c.to_json());
  json k;
  for (const char* key : keys) k[key] = j.at(key);
  return io::Hasher().str(tag).str(k.dump()).hex();
}

const Pitchogram& raw(const TrackContext& ctx, const char* name) {
  auto it = ctx.raw.find(name);
  if (it == ctx.raw.end()) throw Error("track " + ctx.track_id + ": missing raw representation '" + name + "'");
  return it->second;
}

Representation grid_rows(const ByteGrid& g) {
  RowMatrixF m(g.size(), 1);
  for (Index i = 0; i < g.size(); ++i) m(i, 0) = g.data()[i];
  return Representation::from_matrix(std::move(m));
}

int frames_of(const TrackContext& ctx) { return raw(ctx, "salience").n_frames(); }

// Row sampler for dense cell domains: positives, random negatives and
// "hard" negatives picked by a predicate. max_positives_per_track <= 0
// takes every row.
dag::RowSampler cell_sampler(const NetConfig& nc, std::function<bool(const TrackContext&, Index)> hard) {
  return [nc, hard](const TrackContext& ctx, const RowMatrixF& targets, std::mt19937_64& rng) {
    std::vector<Index> pos, hard_rows;
    const Index n = targets.rows();
    if (nc.max_positives_per_track <= 0) {
      std::vector<Index> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), Index{0});
      return all;
    }
    for (Index r = 0; r < n; ++r) {
      if (targets(r, 0) > 0.5f) {
        pos.push_back(r);
      } else if (hard && nc.hard_negative_ratio > 0 && hard(ctx, r)) {
        hard_rows.push_back(r);
      }
    }
    if (static_cast<int>(pos.size()) > nc.max_positives_per_track) {
      std::shuffle(pos.begin(), pos.end(), rng);
      pos.resize(static_cast<std::size_t>(nc.max_positives_per_track));
    }
    const auto base = std::max<std::size_t>(pos.size(), 20);
    std::vector<Index> rows = pos;
    const auto n_hard = std::min(hard_rows.size(), static_cast<std::size_t>(nc.hard_negative_ratio * base));
    std::shuffle(hard_rows.begin(), hard_rows.end(), rng);
    rows.insert(rows.end(), hard_rows.begin(), hard_rows.begin() + static_cast<std::ptrdiff_t>(n_hard));
    const auto n_rand = static_cast<std::size_t>(nc.random_negative_ratio * base);
    if (n > 0) {
      std::uniform_int_distribution<Index> pick(0, n - 1);
      std::size_t added = 0;
      for (std::size_t tries = 0; added < n_rand && tries < 20 * n_rand; ++tries) {
        const Index r = pick(rng);
        if (targets(r, 0) > 0.5f) continue;
        rows.push_back(r);
        ++added;
      }
    }
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    return rows;
  };
}

dag::ModuleSpec module(std::string name, std::vector<dag::InputSource> sources, std::string target,
                       const NetConfig& nc) {
  dag::ModuleSpec s;
  s.name = std::move(name);
  s.sources = std::move(sources);
  s.target_key = std::move(target);
  s.hidden_layers = nc.hidden;
  s.train = nc.train;
  s.sampler_config = json{nc.max_positives_per_track, nc.random_negative_ratio, nc.hard_negative_ratio}.dump();
  return s;
}

dag::ModuleSpec classifier_module(const ExperimentConfig& cfg) {
  auto s = module("note_classifier", {dag::output_source("tentative/features")}, "note_targets", cfg.classifier);
  s.sampler_config = json{cfg.classifier_augment_min_frames, cfg.classifier_augment_max_frames}.dump();
  return s;
}

// ---- framewise stage -------------------------------------------------------

void framewise_features(TrackContext& ctx, const dag::Graph&, const std::string&) {
  const Pitchogram* R = &raw(ctx, "salience");
  const Pitchogram* S = &raw(ctx, "spec");
  const Pitchogram* SF = &raw(ctx, "flux_binned");
  const int nb = R->n_bins();
  const int nf = R->n_frames();
  auto idx = std::make_shared<std::vector<std::array<int, 6>>>(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b) {
    const double p = bin_to_pitch(b, R->grid);
    auto& a = (*idx)[static_cast<std::size_t>(b)];
    for (int k = 1; k <= 4; ++k)
      a[static_cast<std::size_t>(k - 1)] = static_cast<int>(std::lround(pitch_to_bin(p + 12.0 * std::log2(k), S->grid)));
    a[4] = static_cast<int>(std::lround(pitch_to_bin(p - 12.0, S->grid)));
    a[5] = static_cast<int>(std::lround(pitch_to_bin(p, SF->grid)));
  }
  auto gen = [R, S, SF, idx, nb, nf](std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) {
    const int sb = S->n_bins();
    auto r = [&](int b, int f) { return (b >= 0 && b < nb && f >= 0 && f < nf) ? R->values(b, f) : 0.0f; };
    auto s = [&](const Pitchogram* m, int b, int f) { return (b >= 0 && b < sb) ? m->values(b, f) : 0.0f; };
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int b = static_cast<int>(rows[i] / nf);
      const int f = static_cast<int>(rows[i] % nf);
      const auto& a = (*idx)[static_cast<std::size_t>(b)];
      auto o = out.row(static_cast<Index>(i));
      o(0) = r(b - 6, f);
      o(1) = r(b - 3, f);
      o(2) = r(b, f);
      o(3) = r(b + 3, f);
      o(4) = r(b + 6, f);
      for (int k = 0; k < 4; ++k) o(5 + k) = s(S, a[static_cast<std::size_t>(k)], f);
      o(9) = s(S, a[4], f);
      o(10) = s(SF, a[5], f);
      o(11) = r(b - 1, f);
      o(12) = r(b + 1, f);
      o(13) = nb > 1 ? static_cast<float>(b) / static_cast<float>(nb - 1) : 0.0f;
    }
  };
  ctx.values["fw_features"] = Representation::lazy(static_cast<Index>(nb) * nf, kFramewiseDim, gen);
}

// ---- ridges ----------------------------------------------------------------

void ridge_points_node(const ExperimentConfig& cfg, TrackContext& ctx, const dag::Graph& graph) {
  // Peaks are picked on pitch-smoothed logits. The framewise target is a flat
  // plateau a few bins wide, so the raw output has several near-equal bumps
  // per frame that would each start a duplicate contour.
  const auto& logit_rep = graph.read(ctx, "framewise/logits");
  const int nb = cfg.pitch_grid.n_bins();
  const int n_frames = static_cast<int>(logit_rep.rows / nb);
  const Eigen::Map<const FloatGrid> raw_logits(logit_rep.data->data(), nb, n_frames);
  Pitchogram L;
  L.grid = cfg.pitch_grid;
  L.values = raw_logits;
  if (cfg.ridge_smooth_bins > 0) {
    const auto k = gaussian_kernel(cfg.ridge_smooth_bins);
    const int rad = static_cast<int>(k.size() / 2);
    for (int b = 0; b < nb; ++b) {
      for (int f = 0; f < n_frames; ++f) {
        double acc = 0.0;
        for (int j = -rad; j <= rad; ++j) acc += k[static_cast<std::size_t>(j + rad)] * raw_logits(std::clamp(b + j, 0, nb - 1), f);
        L.values(b, f) = static_cast<float>(acc);
      }
    }
  }
  const double t_logit = std::log(cfg.t_ridge / (1.0 - cfg.t_ridge));
  auto ridges = extract_ridges(L, t_logit, cfg.max_jump());
  for (auto& r : ridges) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      const int b = static_cast<int>(r.pitch_bins[i]);
      r.activations[i] = learn::sigmoid(raw_logits(b, r.frames[i]));
    }
  }
  ridges = prune_ridges(ridges, cfg.ridge_t_sum);
  Index total = 0;
  for (const auto& r : ridges) total += static_cast<Index>(r.size());
  RowMatrixF pts(total, 4), cell(total, 1);
  Index k = 0;
  for (std::size_t ri = 0; ri < ridges.size(); ++ri) {
    const auto& r = ridges[ri];
    for (std::size_t i = 0; i < r.size(); ++i, ++k) {
      pts(k, 0) = static_cast<float>(r.frames[i]);
      pts(k, 1) = static_cast<float>(r.pitch_bins[i]);
      pts(k, 2) = static_cast<float>(r.activations[i]);
      pts(k, 3) = static_cast<float>(ri);
      cell(k, 0) = static_cast<float>(static_cast<Index>(r.pitch_bins[i]) * n_frames + r.frames[i]);
    }
  }
  ctx.values["ridges"] = Representation::from_matrix(std::move(pts));
  ctx.values["ridges/cell"] = Representation::from_matrix(std::move(cell));
}

void ridge_skip_node(const ExperimentConfig& cfg, TrackContext& ctx, const dag::Graph& graph) {
  const auto& pts_rep = graph.read(ctx, "ridges");
  auto pts = pts_rep.data;
  const Pitchogram* SF = &raw(ctx, "flux_binned");
  const Pitchogram* S = &raw(ctx, "spec");
  RelativeWindow flux_window;
  flux_window.rel_frames.clear();
  for (int k = -2; k <= 1; ++k) flux_window.rel_frames.push_back(k * cfg.flux_bin_frames);
  RelativeWindow spec_window;
  spec_window.rel_frames = {0};
  const GridSpec grid = cfg.pitch_grid;
  const int dim = flux_window.size() + spec_window.size();
  auto gen = [=](std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int frame = static_cast<int>((*pts)(rows[i], 0));
      const double centre = source_bin((*pts)(rows[i], 1), grid, SF->grid);
      float* o = out.row(static_cast<Index>(i)).data();
      resample_point(*SF, centre, frame, flux_window, o);
      resample_point(*S, source_bin((*pts)(rows[i], 1), grid, S->grid), frame, spec_window, o + flux_window.size());
    }
  };
  ctx.values["ridge_skip"] = Representation::lazy(pts_rep.rows, dim, gen);
}

void ridge_context_node(const ExperimentConfig& cfg, TrackContext& ctx, const dag::Graph& graph) {
  const auto ridges = track_ridges(ctx, graph);
  const Pitchogram P = framewise_map(ctx, graph, cfg);
  const int nf = P.n_frames();
  const int nb = P.n_bins();
  Index total = 0;
  for (const auto& r : ridges) total += static_cast<Index>(r.size());
  RowMatrixF m(total, kContextDim);
  Index k = 0;
  for (const auto& r : ridges) {
    const int len = static_cast<int>(r.size());
    for (int j = 0; j < len; ++j, ++k) {
      const int bin = static_cast<int>(r.pitch_bins[static_cast<std::size_t>(j)]);
      for (int d = -kContextHalf; d <= kContextHalf; ++d) {
        float v = 0.0f;
        if (j + d >= 0 && j + d < len) {
          v = static_cast<float>(r.activations[static_cast<std::size_t>(j + d)]);
        } else {
          const int f = r.frames[static_cast<std::size_t>(j)] + d;
          if (f >= 0 && f < nf) v = P.values(bin, f);
        }
        m(k, d + kContextHalf) = v;
      }
      const int c = 2 * kContextHalf + 1;
      m(k, c) = std::min(j, 50) / 50.0f;
      m(k, c + 1) = std::min(len - 1 - j, 50) / 50.0f;
      m(k, c + 2) = static_cast<float>(std::log1p(len) / 6.0);
      m(k, c + 3) = nb > 1 ? static_cast<float>(bin) / static_cast<float>(nb - 1) : 0.0f;
    }
  }
  ctx.values["ridge_context"] = Representation::from_matrix(std::move(m));
}

void ridge_targets_node(const ExperimentConfig& cfg, TrackContext& ctx, const dag::Graph& graph) {
  const auto& pts = *graph.read(ctx, "ridges").data;
  const int nf = frames_of(ctx);
  TrackAnnotation a = ctx.annotation;
  const int n_frames_grid = cfg.pitch_grid.n_frames(a.duration_s);
  if (n_frames_grid != nf) throw Error("track " + ctx.track_id + ": frame count disagrees with its duration");
  const TargetSet on = derive_targets(a, cfg.pitch_grid, cfg.onset_smear_frames, cfg.onset_pitch_smear);
  const TargetSet fw = derive_targets(a, cfg.pitch_grid, 0, cfg.onset_pitch_smear);
  RowMatrixF onset(pts.rows(), 1), beyond(pts.rows(), 1);
  for (Index i = 0; i < pts.rows(); ++i) {
    const int f = static_cast<int>(pts(i, 0));
    const int b = static_cast<int>(pts(i, 1));
    onset(i, 0) = on.onset_map(b, f);
    beyond(i, 0) = 1.0f - fw.framewise(b, f);
  }
  ctx.values["ridge_targets/onset"] = Representation::from_matrix(std::move(onset));
  ctx.values["ridge_targets/beyond"] = Representation::from_matrix(std::move(beyond));
}

// ---- tentative notes (fitted peak picking) --------------------------------

std::vector<NoteEvent> tentative_events(const std::vector<TentativeNote>& notes, const std::vector<Ridge>& ridges,
                                        const GridSpec& grid) {
  std::vector<NoteEvent> out;
  for (const auto& n : notes) out.push_back(to_note_event(n, ridges[static_cast<std::size_t>(n.ridge)], grid));
  return out;
}

json peak_json(const PeakParams& p) {
  return {{"smooth_halfwidth_frames", p.smooth_halfwidth_frames},
          {"abs_threshold", p.abs_threshold},
          {"min_prominence", p.min_prominence},
          {"min_distance_frames", p.min_distance_frames}};
}

PeakParams peak_from(const json& j) {
  PeakParams p;
  p.smooth_halfwidth_frames = j.at("smooth_halfwidth_frames");
  p.abs_threshold = j.at("abs_threshold");
  p.min_prominence = j.at("min_prominence");
  p.min_distance_frames = j.at("min_distance_frames");
  return p;
}

json search_json(const GridSearchResult& r) {
  json t = json::array();
  for (const auto& [p, v] : r.table) t.push_back({{"point", p}, {"value", v}});
  return {{"best", r.best}, {"best_value", r.best_value}, {"table", t}};
}

GridSearchResult search_from(const json& j) {
  GridSearchResult r;
  r.best = j.at("best").get<std::vector<double>>();
  r.best_value = j.at("best_value");
  for (const auto& e : j.at("table")) r.table.emplace_back(e.at("point").get<std::vector<double>>(), e.at("value"));
  return r;
}

class TentativeNode : public dag::Node {
 public:
  explicit TentativeNode(const ExperimentConfig& cfg)
      : Node("tentative", {"ridges", "onset_net", "offset_net"}), cfg_(cfg) {}

  std::vector<std::string> output_keys() const override { return {"tentative", "tentative/features"}; }
  std::string config_hash() const override {
    json j = {{"peaks", {cfg_.peaks.smooth_halfwidth, cfg_.peaks.abs_threshold, cfg_.peaks.min_prominence,
                         cfg_.peaks.min_distance}},
              {"offset_threshold", cfg_.offset_threshold},
              {"grid", cfg_.pitch_grid.bin_cents}};
    return io::Hasher().str("tentative").str(j.dump()).hex();
  }

  bool trainable() const override { return true; }
  bool trained() const override { return state_.has_value(); }
  void reset() override { state_.reset(); }
  const TentativeState& state() const {
    if (!state_) throw Error("tentative node is untrained");
    return *state_;
  }

  void train(std::span<TrackContext> contexts, const dag::Graph& graph, std::uint64_t) override {
    struct Prepared {
      std::vector<Ridge> ridges;
      std::vector<RidgeCurves> curves;
      const TrackAnnotation* ann;
    };
    std::vector<Prepared> prep;
    for (auto& ctx : contexts) {
      Prepared p;
      p.ridges = track_ridges(ctx, graph);
      p.curves = track_curves(ctx, graph, p.ridges);
      p.ann = &ctx.annotation;
      prep.push_back(std::move(p));
    }
    const std::vector<GridAxis> axes{{"smooth_halfwidth", cfg_.peaks.smooth_halfwidth},
                                     {"abs_threshold", cfg_.peaks.abs_threshold},
                                     {"min_prominence", cfg_.peaks.min_prominence},
                                     {"min_distance", cfg_.peaks.min_distance}};
    std::map<std::vector<double>, Counts> cache;
    auto counts = [&](const std::vector<double>& point) {
      auto it = cache.find(point);
      if (it != cache.end()) return it->second;
      Counts c;
      const PeakParams pp = peak_params_from(point);
      for (const auto& p : prep) {
        const auto notes = track_tentative(p.ridges, p.curves, pp, cfg_.offset_threshold);
        c += eval_onsets(p.ann->notes, tentative_events(notes, p.ridges, cfg_.pitch_grid), kTrainTolerances);
      }
      cache.emplace(point, c);
      return c;
    };
    TentativeState s;
    s.score_search = grid_search(axes, [&](const std::vector<double>& p) { return counts(p).f(); });
    s.recall_search = grid_search(axes, [&](const std::vector<double>& p) {
      const Counts c = counts(p);
      const double pr = c.precision(), rc = c.recall();
      return pr + rc > 0 ? 5.0 * pr * rc / (4.0 * pr + rc) : 0.0;
    });
    s.score = peak_params_from(s.score_search.best);
    s.recall = peak_params_from(s.recall_search.best);
    state_ = std::move(s);
  }

  std::string state_fingerprint() const override {
    if (!state_) return {};
    return io::Hasher().str(json{{"score", peak_json(state_->score)}, {"recall", peak_json(state_->recall)}}.dump()).hex();
  }
  std::string save_state() const override {
    const auto& s = state();
    return json{{"score", peak_json(s.score)},
                {"recall", peak_json(s.recall)},
                {"score_search", search_json(s.score_search)},
                {"recall_search", search_json(s.recall_search)}}
        .dump(1);
  }
  void load_state(const std::string& text) override {
    const json j = json::parse(text);
    TentativeState s;
    s.score = peak_from(j.at("score"));
    s.recall = peak_from(j.at("recall"));
    s.score_search = search_from(j.at("score_search"));
    s.recall_search = search_from(j.at("recall_search"));
    state_ = std::move(s);
  }

  void process(TrackContext& ctx, const dag::Graph& graph, const std::string& version) const override {
    const auto ridges = track_ridges(ctx, graph);
    const auto curves = track_curves(ctx, graph, ridges);
    const auto notes = track_tentative(ridges, curves, state().recall, cfg_.offset_threshold);
    RowMatrixF rows(static_cast<Index>(notes.size()), kTentativeCols);
    RowMatrixF feats(static_cast<Index>(notes.size()), kNoteFeatureCount);
    for (std::size_t i = 0; i < notes.size(); ++i) {
      const auto& n = notes[i];
      const auto k = static_cast<Index>(i);
      rows.row(k) << static_cast<float>(n.ridge), static_cast<float>(n.onset), static_cast<float>(n.offset),
          static_cast<float>(n.onset_activation), static_cast<float>(n.mean_framewise), static_cast<float>(n.gap_prev),
          static_cast<float>(n.gap_next), static_cast<float>(n.ridge_length);
      const auto f = note_features(notes, i, curves[static_cast<std::size_t>(n.ridge)], state().recall);
      for (int c = 0; c < kNoteFeatureCount; ++c) feats(k, c) = static_cast<float>(f[static_cast<std::size_t>(c)]);
    }
    ctx.values["tentative"] = Representation::from_matrix(std::move(rows), version);
    ctx.values["tentative/features"] = Representation::from_matrix(std::move(feats), version);
  }

 private:
  const ExperimentConfig cfg_;
  std::optional<TentativeState> state_;
};

std::vector<TentativeNote> tentative_from_rep(const Representation& rep) {
  std::vector<TentativeNote> out;
  const auto& m = *rep.data;
  for (Index i = 0; i < m.rows(); ++i) {
    TentativeNote n;
    n.ridge = static_cast<int>(m(i, 0));
    n.onset = static_cast<int>(m(i, 1));
    n.offset = static_cast<int>(m(i, 2));
    n.onset_activation = m(i, 3);
    n.mean_framewise = m(i, 4);
    n.gap_prev = static_cast<int>(m(i, 5));
    n.gap_next = static_cast<int>(m(i, 6));
    n.ridge_length = static_cast<int>(m(i, 7));
    out.push_back(n);
  }
  return out;
}

void note_targets_node(const ExperimentConfig& cfg, TrackContext& ctx, const dag::Graph& graph) {
  const auto ridges = track_ridges(ctx, graph);
  const auto notes = tentative_from_rep(graph.read(ctx, "tentative"));
  const auto labels = label_notes(tentative_events(notes, ridges, cfg.pitch_grid), ctx.annotation, kTrainTolerances);
  RowMatrixF m(static_cast<Index>(labels.size()), 1);
  for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<Index>(i), 0) = static_cast<float>(labels[i]);
  ctx.values["note_targets"] = Representation::from_matrix(std::move(m));
}

// Spurious second onsets inside correctly detected notes, labelled 0; the
// shortened true note keeps label 1.
dag::Augmenter double_onset_augmenter(const ExperimentConfig& cfg) {
  return [cfg](const TrackContext& ctx, const dag::Graph& graph, std::mt19937_64& rng) {
    learn::Dataset d;
    const auto ridges = track_ridges(ctx, graph);
    const auto curves = track_curves(ctx, graph, ridges);
    const auto notes = tentative_from_rep(graph.read(ctx, "tentative"));
    const auto& labels = *graph.read(ctx, "note_targets").data;
    const PeakParams pp = tentative_state(graph).recall;
    std::uniform_int_distribution<int> gap(cfg.classifier_augment_min_frames, cfg.classifier_augment_max_frames);
    std::vector<std::vector<double>> xs;
    std::vector<float> ys;
    for (std::size_t i = 0; i < notes.size(); ++i) {
      if (labels(static_cast<Index>(i), 0) < 0.5f) continue;
      const int k = gap(rng);
      if (notes[i].offset - notes[i].onset <= k + 1) continue;
      std::vector<TentativeNote> mod = notes;
      TentativeNote extra = mod[i];
      mod[i].offset = mod[i].onset + k;
      extra.onset = mod[i].onset + k;
      mod.insert(mod.begin() + static_cast<std::ptrdiff_t>(i) + 1, extra);
      for (std::size_t q = 0; q < mod.size(); ++q) {
        if (mod[q].ridge != notes[i].ridge) continue;
        // Refresh neighbour gaps on this ridge.
        mod[q].gap_prev = (q > 0 && mod[q - 1].ridge == mod[q].ridge) ? mod[q].onset - mod[q - 1].onset : mod[q].onset;
        mod[q].gap_next = (q + 1 < mod.size() && mod[q + 1].ridge == mod[q].ridge) ? mod[q + 1].onset - mod[q].onset
                                                                                    : mod[q].ridge_length - mod[q].onset;
      }
      const auto& rc = curves[static_cast<std::size_t>(notes[i].ridge)];
      xs.push_back(note_features(mod, i, rc, pp));
      ys.push_back(1.0f);
      xs.push_back(note_features(mod, i + 1, rc, pp));
      ys.push_back(0.0f);
    }
    d.inputs.resize(static_cast<Index>(xs.size()), kNoteFeatureCount);
    d.targets.resize(static_cast<Index>(xs.size()), 1);
    for (std::size_t r = 0; r < xs.size(); ++r) {
      for (int c = 0; c < kNoteFeatureCount; ++c) d.inputs(static_cast<Index>(r), c) = static_cast<float>(xs[r][static_cast<std::size_t>(c)]);
      d.targets(static_cast<Index>(r), 0) = ys[r];
    }
    return d;
  };
}

// ---- direct system ---------------------------------------------------------

void direct_features(const ExperimentConfig& cfg, TrackContext& ctx) {
  const Pitchogram* SF = &raw(ctx, "flux_binned");
  const Pitchogram* S = &raw(ctx, "spec");
  const GridSpec dg = direct_grid();
  const int nb = dg.n_bins();
  const int nf = SF->n_frames();
  RelativeWindow w;
  const int n_rows = w.n_rows();
  std::vector<int> rel_frames;
  for (int k = -2; k <= 1; ++k) rel_frames.push_back(k * cfg.flux_bin_frames);
  // idx[b * n_rows + r]: source row of window row r around direct bin b, -1 outside.
  auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(nb) * n_rows);
  const double step = w.row_spacing_cents / SF->grid.bin_cents;
  for (int b = 0; b < nb; ++b) {
    const double centre = source_bin(b, dg, SF->grid);
    for (int r = 0; r < n_rows; ++r) {
      const long s = std::lround(centre + (w.rel_min + r) * step);
      (*idx)[static_cast<std::size_t>(b) * n_rows + r] = (s >= 0 && s < SF->n_bins()) ? static_cast<int>(s) : -1;
    }
  }
  const int dim = n_rows * static_cast<int>(rel_frames.size()) + n_rows + 1;
  auto gen = [SF, S, idx, nb, nf, n_rows, rel_frames](std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int b = static_cast<int>(rows[i] / nf);
      const int f = static_cast<int>(rows[i] % nf);
      const int* src = idx->data() + static_cast<std::size_t>(b) * n_rows;
      float* o = out.row(static_cast<Index>(i)).data();
      for (std::size_t s = 0; s < rel_frames.size(); ++s, o += n_rows) {
        const int g = f + rel_frames[s];
        if (g < 0 || g >= nf) {
          std::fill(o, o + n_rows, 0.0f);
          continue;
        }
        for (int r = 0; r < n_rows; ++r) o[r] = src[r] >= 0 ? SF->values(src[r], g) : 0.0f;
      }
      for (int r = 0; r < n_rows; ++r) o[r] = src[r] >= 0 ? S->values(src[r], f) : 0.0f;
      o[n_rows] = nb > 1 ? static_cast<float>(b) / static_cast<float>(nb - 1) : 0.0f;
    }
  };
  ctx.values["direct_features"] = Representation::lazy(static_cast<Index>(nb) * nf, dim, gen);
}

void direct_targets(const ExperimentConfig& cfg, TrackContext& ctx) {
  const GridSpec dg = direct_grid();
  const TargetSet t = derive_targets(ctx.annotation, dg, cfg.onset_smear_frames, cfg.direct_pitch_smear);
  if (t.onset_map.cols() != frames_of(ctx)) throw Error("track " + ctx.track_id + ": direct grid frame mismatch");
  ctx.values["direct_targets/onset"] = grid_rows(t.onset_map);
  ctx.values["direct_targets/offset"] = grid_rows(t.offset_map);
}

// Sounding cells of the spectrogram at the cell's own pitch.
std::function<bool(const TrackContext&, Index)> sounding_cell(const GridSpec& cell_grid, double level) {
  return [cell_grid, level](const TrackContext& ctx, Index row) {
    const Pitchogram& S = ctx.raw.at("spec");
    const int nf = S.n_frames();
    const int b = static_cast<int>(row / nf);
    const int f = static_cast<int>(row % nf);
    const long s = std::lround(source_bin(b, cell_grid, S.grid));
    return s >= 0 && s < S.n_bins() && S.values(s, f) > level;
  };
}

}  // namespace

PeakParams peak_params_from(const std::vector<double>& point) {
  if (point.size() != 4) throw Error("peak parameter point must have four values");
  PeakParams p;
  p.smooth_halfwidth_frames = static_cast<int>(point[0]);
  p.abs_threshold = point[1];
  p.min_prominence = point[2];
  p.min_distance_frames = static_cast<int>(point[3]);
  return p;
}

Pitchogram framewise_map(const TrackContext& ctx, const dag::Graph& graph, const ExperimentConfig& config) {
  const auto& rep = graph.read(ctx, "framewise");
  const int nb = config.pitch_grid.n_bins();
  if (rep.rows % nb != 0) throw Error("framewise output does not tile the pitch grid");
  Pitchogram p;
  p.grid = config.pitch_grid;
  p.values = Eigen::Map<const FloatGrid>(rep.data->data(), nb, rep.rows / nb);
  return p;
}

std::vector<Ridge> track_ridges(const TrackContext& ctx, const dag::Graph& graph) {
  const auto& m = *graph.read(ctx, "ridges").data;
  std::vector<Ridge> out;
  for (Index i = 0; i < m.rows(); ++i) {
    const auto ri = static_cast<std::size_t>(m(i, 3));
    if (ri >= out.size()) out.resize(ri + 1);
    out[ri].frames.push_back(static_cast<int>(m(i, 0)));
    out[ri].pitch_bins.push_back(m(i, 1));
    out[ri].activations.push_back(m(i, 2));
  }
  return out;
}

std::vector<RidgeCurves> track_curves(const TrackContext& ctx, const dag::Graph& graph,
                                      const std::vector<Ridge>& ridges) {
  const auto& on = *graph.read(ctx, "onset_net").data;
  const auto& off = *graph.read(ctx, "offset_net").data;
  std::vector<RidgeCurves> out(ridges.size());
  Index k = 0;
  for (std::size_t r = 0; r < ridges.size(); ++r) {
    for (std::size_t i = 0; i < ridges[r].size(); ++i, ++k) {
      out[r].onset.push_back(on(k, 0));
      out[r].beyond.push_back(off(k, 0));
      out[r].framewise.push_back(ridges[r].activations[i]);
    }
  }
  if (k != on.rows()) throw Error("track " + ctx.track_id + ": onset curve length disagrees with ridges");
  return out;
}

std::vector<TentativeNote> track_tentative(const std::vector<Ridge>& ridges, const std::vector<RidgeCurves>& curves,
                                           const PeakParams& params, double offset_threshold) {
  std::vector<TentativeNote> all;
  for (std::size_t r = 0; r < ridges.size(); ++r) {
    const auto& c = curves[r];
    const auto onsets = detect_onsets(c.onset, params);
    const auto offsets = offset_crossings(c.beyond, offset_threshold);
    auto notes = form_tentative_notes(onsets, offsets, static_cast<int>(r), c, params.min_distance_frames);
    all.insert(all.end(), notes.begin(), notes.end());
  }
  return all;
}

std::vector<int> label_notes(const std::vector<NoteEvent>& est, const TrackAnnotation& ref, const EvalTolerances& tol) {
  struct Pair {
    double dt, dp;
    int e, r;
  };
  std::vector<Pair> pairs;
  for (std::size_t e = 0; e < est.size(); ++e) {
    for (std::size_t r = 0; r < ref.notes.size(); ++r) {
      const PitchEvent a{ref.notes[r].onset_s, ref.notes[r].pitch_midi, 0.0};
      const PitchEvent b{est[e].onset_s, est[e].pitch_midi, 0.0};
      if (!admissible(a, b, tol.onset_tol_s, tol.pitch_tol_cents)) continue;
      pairs.push_back({std::abs(a.time_s - b.time_s), std::abs(a.pitch_midi - b.pitch_midi), static_cast<int>(e),
                       static_cast<int>(r)});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
    return std::tie(x.dt, x.dp, x.e, x.r) < std::tie(y.dt, y.dp, y.e, y.r);
  });
  std::vector<int> label(est.size(), 0);
  std::vector<char> used(ref.notes.size(), 0);
  for (const auto& p : pairs) {
    if (label[static_cast<std::size_t>(p.e)] || used[static_cast<std::size_t>(p.r)]) continue;
    label[static_cast<std::size_t>(p.e)] = 1;
    used[static_cast<std::size_t>(p.r)] = 1;
  }
  return label;
}

const TentativeState& tentative_state(const dag::Graph& graph) {
  auto* n = dynamic_cast<const TentativeNode*>(&graph.node("tentative"));
  if (!n) throw Error("graph node 'tentative' has the wrong type");
  return n->state();
}

void add_dll_nodes(dag::Graph& g, const ExperimentConfig& cfg) {
  const std::string grids = hash_config("dll", cfg, {"grids", "flux_bin_frames"});
  const std::string targets = hash_config("dll", cfg, {"grids", "targets"});
  const std::string ridge = hash_config("dll", cfg, {"grids", "ridge"});
  g.add(std::make_shared<dag::FunctionNode>(
      "fw_features", std::vector<std::string>{"raw:salience", "raw:spec", "raw:flux_binned"}, grids + ":fw",
      framewise_features, std::vector<std::string>{}, false));
  g.add(std::make_shared<dag::FunctionNode>(
      "fw_target", std::vector<std::string>{}, targets + ":fwt",
      [cfg](TrackContext& ctx, const dag::Graph&, const std::string&) {
        ctx.values["fw_target"] =
            grid_rows(derive_targets(ctx.annotation, cfg.pitch_grid, 0, cfg.framewise_pitch_smear).framewise);
      },
      std::vector<std::string>{}, false));
  {
    auto n = std::make_shared<dag::LearningNode>(
        module("framewise", {dag::output_source("fw_features")}, "fw_target", cfg.framewise));
    auto hard = [](const TrackContext& ctx, Index row) {
      const Pitchogram& R = ctx.raw.at("salience");
      const int nf = R.n_frames();
      return R.values(row / nf, row % nf) > 0.15f;
    };
    n->set_sampler(cell_sampler(cfg.framewise, hard));
    g.add(n);
  }
  g.add(std::make_shared<dag::FunctionNode>(
      "ridges", std::vector<std::string>{"framewise"}, ridge + ":ridges",
      [cfg](TrackContext& ctx, const dag::Graph& graph, const std::string&) { ridge_points_node(cfg, ctx, graph); },
      std::vector<std::string>{"ridges", "ridges/cell"}));
  g.add(std::make_shared<dag::FunctionNode>(
      "ridge_skip", std::vector<std::string>{"ridges", "raw:flux_binned", "raw:spec"}, grids + ":skip",
      [cfg](TrackContext& ctx, const dag::Graph& graph, const std::string&) { ridge_skip_node(cfg, ctx, graph); },
      std::vector<std::string>{}, false));
  g.add(std::make_shared<dag::FunctionNode>(
      "ridge_context", std::vector<std::string>{"ridges", "framewise"}, grids + ":ctx",
      [cfg](TrackContext& ctx, const dag::Graph& graph, const std::string&) { ridge_context_node(cfg, ctx, graph); }));
  g.add(std::make_shared<dag::FunctionNode>(
      "ridge_targets", std::vector<std::string>{"ridges"}, targets + ":rt",
      [cfg](TrackContext& ctx, const dag::Graph& graph, const std::string&) { ridge_targets_node(cfg, ctx, graph); },
      std::vector<std::string>{"ridge_targets/onset", "ridge_targets/beyond"}, false));

  const std::vector<dag::InputSource> ridge_inputs{dag::skip_source("ridge_skip"), dag::output_source("ridge_context"),
                                                   dag::latent_source("framewise", "ridges/cell")};
  {
    auto n = std::make_shared<dag::LearningNode>(module("onset_net", ridge_inputs, "ridge_targets/onset", cfg.onset));
    n->set_sampler(cell_sampler(cfg.onset, nullptr));
    g.add(n);
  }
  {
    auto n = std::make_shared<dag::LearningNode>(module("offset_net", ridge_inputs, "ridge_targets/beyond", cfg.offset));
    n->set_sampler(cell_sampler(cfg.offset, nullptr));
    g.add(n);
  }
  g.add(std::make_shared<TentativeNode>(cfg));
  if (cfg.steps.contains("3")) {
    g.add(std::make_shared<dag::FunctionNode>(
        "note_targets", std::vector<std::string>{"tentative", "ridges"}, grids + ":nt",
        [cfg](TrackContext& ctx, const dag::Graph& graph, const std::string&) { note_targets_node(cfg, ctx, graph); },
        std::vector<std::string>{}, false));
    auto n = std::make_shared<dag::LearningNode>(
        classifier_module(cfg),
        std::vector<std::string>{"ridges", "onset_net", "offset_net"});
    n->set_augmenter(double_onset_augmenter(cfg));
    g.add(n);
  }
}

void add_direct_nodes(dag::Graph& g, const ExperimentConfig& cfg) {
  const std::string base = hash_config("direct", cfg, {"grids", "flux_bin_frames", "targets"});
  g.add(std::make_shared<dag::FunctionNode>(
      "direct_features", std::vector<std::string>{"raw:flux_binned", "raw:spec"}, base + ":df",
      [cfg](TrackContext& ctx, const dag::Graph&, const std::string&) { direct_features(cfg, ctx); },
      std::vector<std::string>{}, false));
  g.add(std::make_shared<dag::FunctionNode>(
      "direct_targets", std::vector<std::string>{}, base + ":dt",
      [cfg](TrackContext& ctx, const dag::Graph&, const std::string&) { direct_targets(cfg, ctx); },
      std::vector<std::string>{"direct_targets/onset", "direct_targets/offset"}, false));
  const GridSpec dg = direct_grid();
  {
    auto n = std::make_shared<dag::LearningNode>(
        module("direct_onset", {dag::output_source("direct_features")}, "direct_targets/onset", cfg.direct_onset));
    n->set_sampler(cell_sampler(cfg.direct_onset, sounding_cell(dg, 0.15)));
    g.add(n);
  }
  {
    auto n = std::make_shared<dag::LearningNode>(
        module("direct_offset", {dag::output_source("direct_features")}, "direct_targets/offset", cfg.direct_offset));
    n->set_sampler(cell_sampler(cfg.direct_offset, sounding_cell(dg, 0.15)));
    g.add(n);
  }
}

dag::Graph build_dll_graph(const ExperimentConfig& config) {
  dag::Graph g;
  add_dll_nodes(g, config);
  return g;
}

dag::Graph build_direct_graph(const ExperimentConfig& config) {
  dag::Graph g;
  add_direct_nodes(g, config);
  return g;
}

dag::Graph build_graph(const ExperimentConfig& config) {
  dag::Graph g;
  add_dll_nodes(g, config);
  if (config.steps.contains("direct")) add_direct_nodes(g, config);
  g.validate();
  return g;
}

}  // namespace ltrack::pipeline
