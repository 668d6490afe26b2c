#include "ltrack/dag.hpp"
#include "ltrack/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace ltrack;
using namespace ltrack::dag;

namespace fs = std::filesystem;

namespace {

std::shared_ptr<FunctionNode> stub(const std::string& name, std::vector<std::string> deps) {
  return std::make_shared<FunctionNode>(name, std::move(deps), "stub", [name](TrackContext& ctx, const Graph&,
                                                                               const std::string&) {
    ctx.values[name] = Representation::from_matrix(RowMatrixF::Zero(1, 1));
  });
}

// raw "x" holds one row of values; features are (x, x^2, 1) per frame and the
// target is x > 0.5.
TrackContext toy_track(int index) {
  TrackContext c;
  c.track_id = "toy-" + std::to_string(index);
  Pitchogram p = make_pitchogram(GridSpec{26.0, 26.0 + 1.0, 100.0, 0.01}, 40);
  std::mt19937_64 rng(static_cast<std::uint64_t>(index) + 1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Index f = 0; f < p.values.cols(); ++f) p.values(0, f) = u(rng);
  c.raw["x"] = p;
  return c;
}

void feat_fn(TrackContext& ctx, const Graph& g, const std::string&) {
  const auto& x = g.raw(ctx, "raw:x").values;
  RowMatrixF m(x.cols(), 3);
  for (Index f = 0; f < x.cols(); ++f) m.row(f) << x(0, f), x(0, f) * x(0, f), 1.0f;
  ctx.values["feat"] = Representation::from_matrix(std::move(m));
}

void target_fn(TrackContext& ctx, const Graph& g, const std::string&) {
  const auto& x = g.raw(ctx, "raw:x").values;
  RowMatrixF m(x.cols(), 1);
  for (Index f = 0; f < x.cols(); ++f) m(f, 0) = x(0, f) > 0.5f ? 1.0f : 0.0f;
  ctx.values["target"] = Representation::from_matrix(std::move(m));
}

ModuleSpec toy_module(const std::string& name, std::vector<InputSource> sources) {
  ModuleSpec s;
  s.name = name;
  s.sources = std::move(sources);
  s.target_key = "target";
  s.hidden_layers = {4};
  s.train.epochs = 5;
  s.train.batch_size = 16;
  return s;
}

Graph toy_graph() {
  Graph g;
  g.add(std::make_shared<FunctionNode>("feat", std::vector<std::string>{"raw:x"}, "f1", feat_fn));
  g.add(std::make_shared<FunctionNode>("target", std::vector<std::string>{"raw:x"}, "t1", target_fn));
  g.add(std::make_shared<LearningNode>(toy_module("a", {output_source("feat")})));
  g.add(std::make_shared<LearningNode>(toy_module("b", {output_source("feat"), latent_source("a")})));
  return g;
}

TrainingSet toy_data() {
  std::vector<TrackContext> t;
  for (int i = 0; i < 3; ++i) t.push_back(toy_track(i));
  return make_training_set(std::move(t));
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ltrack_dag_" + name);
  fs::remove_all(d);
  return d;
}

TrackContext distort(const TrackContext& c, std::uint64_t seed) {
  TrackContext out = c;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.01f);
  for (Index i = 0; i < out.raw["x"].values.size(); ++i) out.raw["x"].values.data()[i] += n(rng);
  return out;
}

}  // namespace

TEST_CASE("topological order") {
  SUBCASE("chain") {
    Graph g;
    g.add(stub("c", {"b"}));
    g.add(stub("b", {"a"}));
    g.add(stub("a", {"raw:x"}));
    CHECK(g.topo_order() == std::vector<std::string>{"a", "b", "c"});
  }
  SUBCASE("diamond breaks ties by name") {
    Graph g;
    g.add(stub("d", {"c", "b"}));
    g.add(stub("c", {"a"}));
    g.add(stub("b", {"a"}));
    g.add(stub("a", {}));
    CHECK(g.topo_order() == std::vector<std::string>{"a", "b", "c", "d"});
  }
  SUBCASE("cycle names its members") {
    Graph g;
    g.add(stub("a", {"b"}));
    g.add(stub("b", {"a"}));
    g.add(stub("z", {}));
    try {
      (void)g.topo_order();
      FAIL("expected a cycle error");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("cycle") != std::string::npos);
      CHECK(msg.find(" a") != std::string::npos);
      CHECK(msg.find(" b") != std::string::npos);
      CHECK(msg.find(" z") == std::string::npos);
    }
  }
  SUBCASE("unknown dependency") {
    Graph g;
    g.add(stub("a", {"missing/out"}));
    CHECK_THROWS_AS(g.validate(), ConfigError);
  }
  SUBCASE("invalid and duplicate names") {
    Graph g;
    CHECK_THROWS_AS(g.add(stub("a/b", {})), ConfigError);
    g.add(stub("a", {}));
    CHECK_THROWS_AS(g.add(stub("a", {})), ConfigError);
  }
}

TEST_CASE("input concatenation follows declared sources") {
  Graph g;
  g.add(std::make_shared<FunctionNode>("o", std::vector<std::string>{}, "o", [](TrackContext& c, const Graph&, const std::string&) {
    c.values["o"] = Representation::from_matrix(RowMatrixF::Constant(5, 3, 1.0f));
  }));
  g.add(std::make_shared<FunctionNode>("s", std::vector<std::string>{}, "s", [](TrackContext& c, const Graph&, const std::string&) {
    c.values["s"] = Representation::lazy(5, 247 * 4, [](std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) {
      for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)).setConstant(static_cast<float>(rows[i]));
    });
  }, std::vector<std::string>{}, false));
  g.add(std::make_shared<FunctionNode>("target", std::vector<std::string>{}, "t", [](TrackContext& c, const Graph&, const std::string&) {
    c.values["target"] = Representation::from_matrix(RowMatrixF::Zero(5, 1));
  }));
  ModuleSpec up = toy_module("up", {output_source("o")});
  up.hidden_layers = {8};
  auto upn = std::make_shared<LearningNode>(up);
  upn->set_model(learn::init_mlp({3, 8, 1}, 1));
  g.add(upn);
  auto down = std::make_shared<LearningNode>(toy_module("down", {output_source("o"), latent_source("up"), skip_source("s")}));
  g.add(down);
  TrackContext c;
  c.track_id = "t";
  g.process(c, {"o", "s", "target", "up"});
  CHECK(down->input_dim(c, g) == 3 + 8 + 988);
  std::vector<Index> rows{4, 1};
  const RowMatrixF x = collect_inputs(down->spec(), c, g, rows);
  CHECK(x.cols() == 999);
  CHECK(x(0, 11) == 4.0f);
  CHECK(x(1, 998) == 1.0f);

  ModuleSpec none = toy_module("none", {});
  CHECK_THROWS_AS(collect_inputs(none, c, g, rows), Error);
  ModuleSpec missing = toy_module("missing", {output_source("nope")});
  CHECK_THROWS_AS(collect_inputs(missing, c, g, rows), Error);
}

TEST_CASE("checkpoints are reused on a second run") {
  const fs::path dir = fresh_dir("reuse");
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  std::string hash_a;
  {
    Graph g = toy_graph();
    TrainingSet d = toy_data();
    const Telemetry t = g.train_pipeline(d, opt);
    CHECK(t.trained == std::vector<std::string>{"a", "b"});
    CHECK(t.process_calls > 0);
    hash_a = g.node("a").state_fingerprint();
  }
  Graph g = toy_graph();
  TrainingSet d = toy_data();
  const Telemetry t = g.train_pipeline(d, opt);
  CHECK(t.trained.empty());
  CHECK(t.reused == std::vector<std::string>{"a", "b"});
  CHECK(t.process_calls == 0);
  CHECK(g.node("a").state_fingerprint() == hash_a);
}

TEST_CASE("retraining a module retrains everything downstream") {
  const fs::path dir = fresh_dir("retrain");
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  Graph g = toy_graph();
  TrainingSet d = toy_data();
  g.train_pipeline(d, opt);
  const std::string b_before = g.node("b").state_fingerprint();

  opt.retrain = {"a"};
  const Telemetry t = g.train_pipeline(d, opt);
  CHECK(t.trained == std::vector<std::string>{"a", "b"});
  CHECK(g.node("b").state_fingerprint() != b_before);

  opt.retrain = {"b"};
  const Telemetry t2 = g.train_pipeline(d, opt);
  CHECK(t2.trained == std::vector<std::string>{"b"});
  CHECK(t2.reused == std::vector<std::string>{"a"});
}

TEST_CASE("training is deterministic across fresh graphs") {
  TrainOptions opt;
  Graph g1 = toy_graph(), g2 = toy_graph();
  TrainingSet d1 = toy_data(), d2 = toy_data();
  g1.train_pipeline(d1, opt);
  g2.train_pipeline(d2, opt);
  CHECK(g1.node("b").state_fingerprint() == g2.node("b").state_fingerprint());
}

TEST_CASE("distortion mode reads no checkpointed outputs") {
  const fs::path dir = fresh_dir("distort");
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  opt.distortion = true;
  opt.distort = distort;
  Graph g = toy_graph();
  TrainingSet d = toy_data();
  const Telemetry t = g.train_pipeline(d, opt);
  CHECK(t.checkpoint_reads == 0);
  CHECK(t.trained == std::vector<std::string>{"a", "b"});
  // Only the two trained states are written; outputs of distorted copies are not.
  CHECK(t.checkpoint_writes == 2);
  CHECK_FALSE(fs::exists(dir / "feat"));
  CHECK(d.tracks[0].values.empty());

  // The distorted models differ from clean training.
  Graph clean = toy_graph();
  TrainingSet d2 = toy_data();
  clean.train_pipeline(d2, TrainOptions{});
  CHECK(clean.node("a").state_fingerprint() != g.node("a").state_fingerprint());

  opt.distort = nullptr;
  CHECK_THROWS_AS(g.train_pipeline(d, opt), ConfigError);
}

TEST_CASE("values of an outdated node state are rejected") {
  Graph g = toy_graph();
  TrainingSet d = toy_data();
  g.train_pipeline(d, TrainOptions{});
  TrackContext c = toy_track(7);
  g.process(c, {"b"});
  CHECK_NOTHROW(g.read(c, "b"));

  // Retrain only "a" in place: "b" values and the latent cache for "a" are now stale.
  auto& a = dynamic_cast<LearningNode&>(g.node("a"));
  learn::MlpModel m = *a.model();
  m.biases[1](0) += 0.5;
  a.set_model(m);
  CHECK_THROWS_AS(g.read(c, "a"), StaleError);
  CHECK_THROWS_AS(g.read(c, "b"), StaleError);
  std::vector<Index> rows{0};
  CHECK_THROWS_AS(collect_inputs(g.learning_node("b").spec(), c, g, rows), StaleError);

  // A fresh context recomputes cleanly.
  TrackContext fresh = toy_track(7);
  g.process(fresh, {"b"});
  CHECK_NOTHROW(g.read(fresh, "b"));
}

TEST_CASE("restore_states reports missing stages") {
  const fs::path dir = fresh_dir("restore");
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  Graph g = toy_graph();
  TrainingSet d = toy_data();
  CHECK(g.restore_states(d.hash, opt) == std::vector<std::string>{"a", "b"});
  g.train_pipeline(d, opt);
  Graph h = toy_graph();
  CHECK(h.restore_states(d.hash, opt).empty());
  CHECK(h.node("b").state_fingerprint() == g.node("b").state_fingerprint());
}

TEST_CASE("untrained modules cannot process") {
  Graph g = toy_graph();
  TrackContext c = toy_track(0);
  CHECK_THROWS_AS(g.process(c, {"a"}), Error);
}

TEST_CASE("lazy representations fill requested rows") {
  auto r = Representation::lazy(10, 2, [](std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) {
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) << static_cast<float>(rows[i]), 1.0f;
  });
  CHECK_FALSE(r.materialized());
  RowMatrixF out(2, 2);
  std::vector<Index> rows{7, 3};
  r.fill(rows, out);
  CHECK(out(0, 0) == 7.0f);
  CHECK(out(1, 0) == 3.0f);
  std::vector<Index> bad{10};
  RowMatrixF one(1, 2);
  CHECK_THROWS_AS(r.fill(bad, one), Error);
}

TEST_CASE("parallel_for covers every index once") {
  std::vector<int> hits(100, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { ++hits[i]; });
  for (int h : hits) CHECK(h == 1);
}
