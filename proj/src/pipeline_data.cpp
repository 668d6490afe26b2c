#include "ltrack/error.hpp"
#include "ltrack/io.hpp"
#include "ltrack/pipeline.hpp"

#include <json.hpp>

#include <filesystem>

namespace ltrack::pipeline {

namespace fs = std::filesystem;

TrackContext make_track(TrackAnnotation annotation, Pitchogram salience, Pitchogram spectrogram,
                        const ExperimentConfig& config) {
  if (!(salience.grid == config.pitch_grid)) throw ConfigError("track " + annotation.track_id + ": salience grid mismatch");
  if (!(spectrogram.grid == config.spec_grid)) throw ConfigError("track " + annotation.track_id + ": spectrogram grid mismatch");
  if (salience.n_frames() != spectrogram.n_frames()) throw Error("track " + annotation.track_id + ": frame counts differ");
  TrackContext ctx;
  ctx.track_id = annotation.track_id;
  ctx.annotation = std::move(annotation);
  Pitchogram flux = synth::spectral_flux(spectrogram);
  ctx.raw["flux_binned"] = synth::bin_flux(flux, config.flux_bin_frames);
  ctx.raw["salience"] = std::move(salience);
  ctx.raw["spec"] = std::move(spectrogram);
  return ctx;
}

TrackContext render_track(const TrackAnnotation& annotation, const synth::SynthConfig& synth,
                          const ExperimentConfig& config) {
  return make_track(annotation, synth::render_pitchogram(annotation, synth, config.pitch_grid),
                    synth::render_spectrogram(annotation, synth, config.spec_grid), config);
}

TrackContext distort_track(const TrackContext& ctx, const synth::DistortionParams& params, std::uint64_t seed,
                           int flux_bin_frames) {
  TrackContext out;
  out.track_id = ctx.track_id;
  out.annotation = ctx.annotation;
  out.raw["salience"] = synth::apply_distortion(ctx.raw.at("salience"), params, seed);
  out.raw["spec"] = synth::apply_distortion(ctx.raw.at("spec"), params, seed ^ 0x5bec7ull);
  Pitchogram flux = synth::spectral_flux(out.raw["spec"]);
  out.raw["flux_binned"] = synth::bin_flux(flux, flux_bin_frames);
  return out;
}

namespace {

std::uint64_t track_seed(const ExperimentConfig& c, const std::string& subset, int kind, int index) {
  return io::Hasher().i64(static_cast<std::int64_t>(c.seed)).str(subset).i64(kind).i64(index).value();
}

}  // namespace

DataSet generate_dataset(const ExperimentConfig& config, int jobs) {
  config.validate();
  struct Job {
    const SubsetSpec* subset;
    int kind;
    int index;
  };
  std::vector<Job> job_list;
  for (const auto& s : config.subsets) {
    for (int i = 0; i < s.n_train; ++i) job_list.push_back({&s, 0, i});
    for (int i = 0; i < s.n_validation; ++i) job_list.push_back({&s, 1, i});
    for (int i = 0; i < s.n_test; ++i) job_list.push_back({&s, 2, i});
  }
  std::vector<TrackContext> rendered(job_list.size());
  static const char* kKind[] = {"train", "val", "test"};
  dag::parallel_for(job_list.size(), jobs, [&](std::size_t k) {
    const Job& j = job_list[k];
    synth::SynthConfig sc = j.subset->synth;
    sc.seed = track_seed(config, j.subset->name, j.kind, j.index);
    const std::string id = j.subset->name + "-" + kKind[j.kind] + "-" + std::to_string(j.index);
    const TrackAnnotation a = synth::sample_score(sc, sc.seed, id);
    rendered[k] = render_track(a, sc, config);
  });
  DataSet d;
  for (const auto& s : config.subsets) d.test.push_back({s.name, {}});
  for (std::size_t k = 0; k < job_list.size(); ++k) {
    const Job& j = job_list[k];
    if (j.kind == 0) {
      d.train.push_back(std::move(rendered[k]));
    } else if (j.kind == 1) {
      d.validation.push_back(std::move(rendered[k]));
    } else {
      for (auto& t : d.test)
        if (t.subset == j.subset->name) t.tracks.push_back(std::move(rendered[k]));
    }
  }
  return d;
}

std::string data_fingerprint(const ExperimentConfig& config) {
  const nlohmann::json j = nlohmann::json::parse(config.to_json());
  nlohmann::json k;
  for (const char* key : {"seed", "grids", "subsets"}) k[key] = j.at(key);
  return io::Hasher().str("data").str(k.dump()).hex();
}

namespace {

void save_split(const std::vector<TrackContext>& tracks, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<TrackAnnotation> ann;
  for (const auto& t : tracks) {
    ann.push_back(t.annotation);
    io::save_pgrm(dir / (t.track_id + ".salience.pgrm"), t.raw.at("salience"));
    io::save_pgrm(dir / (t.track_id + ".spec.pgrm"), t.raw.at("spec"));
  }
  io::save_annotations(dir / "annotations.json", ann);
}

}  // namespace

std::vector<TrackContext> load_split(const fs::path& dir, const std::string& split, const ExperimentConfig& config) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) throw Error("missing prerequisite: no dataset in " + dir.string() + " (run gen first)");
  const auto m = nlohmann::json::parse(io::read_file(manifest));
  if (m.at("fingerprint").get<std::string>() != data_fingerprint(config)) {
    throw Error("dataset in " + dir.string() + " was generated with different settings (run gen again)");
  }
  const fs::path sub = dir / split;
  if (!fs::exists(sub / "annotations.json")) throw Error("missing prerequisite: dataset split " + sub.string() + " (run gen first)");
  std::vector<TrackContext> out;
  for (auto& a : io::load_annotations(sub / "annotations.json")) {
    const std::string id = a.track_id;
    out.push_back(make_track(std::move(a), io::load_pgrm(sub / (id + ".salience.pgrm")),
                             io::load_pgrm(sub / (id + ".spec.pgrm")), config));
  }
  return out;
}

void save_dataset(const DataSet& data, const fs::path& dir, const ExperimentConfig& config) {
  save_split(data.train, dir / "train");
  save_split(data.validation, dir / "validation");
  for (const auto& t : data.test) save_split(t.tracks, dir / ("test-" + t.subset));
  nlohmann::json m = {{"fingerprint", data_fingerprint(config)},
                      {"train", data.train.size()},
                      {"validation", data.validation.size()}};
  for (const auto& t : data.test) m["test"][t.subset] = t.tracks.size();
  io::write_file(dir / "manifest.json", m.dump(1) + "\n");
}

DataSet load_dataset(const fs::path& dir, const ExperimentConfig& config) {
  DataSet d;
  d.train = load_split(dir, "train", config);
  d.validation = load_split(dir, "validation", config);
  for (const auto& s : config.subsets) d.test.push_back({s.name, load_split(dir, "test-" + s.name, config)});
  return d;
}

}  // namespace ltrack::pipeline
