#pragma once

#include "ltrack/datamodel.hpp"
#include "ltrack/error.hpp"
#include "ltrack/mlp.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ltrack::dag {

using learn::RowMatrixF;
using Index = Eigen::Index;

/// Reading a value produced by an out-of-date version of its node.
class StaleError : public Error {
 public:
  using Error::Error;
};

/// Per-example features of one track: rows are examples, columns features.
/// Either materialised, or generated on demand for a subset of rows.
struct Representation {
  Index rows = 0;
  Index dim = 0;
  std::string version;
  std::shared_ptr<const RowMatrixF> data;
  std::function<void(std::span<const Index> rows, Eigen::Ref<RowMatrixF> out)> generator;

  bool materialized() const { return data != nullptr; }
  /// Writes the requested rows into out (rows.size() x dim).
  void fill(std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) const;

  static Representation from_matrix(RowMatrixF m, std::string version = {});
  static Representation lazy(Index rows, Index dim,
                             std::function<void(std::span<const Index>, Eigen::Ref<RowMatrixF>)> gen,
                             std::string version = {});
};

/// Everything known about one track while it flows through a graph.
struct TrackContext {
  std::string track_id;
  TrackAnnotation annotation;
  std::map<std::string, Pitchogram> raw;  // raw representations, addressed as "raw:<name>"
  std::map<std::string, Representation> values;

  bool has(const std::string& key) const { return values.contains(key); }
  const Representation& at(const std::string& key) const;
};

class Graph;

/// A step in the pipeline. Dependencies name other nodes' outputs or raw
/// representations ("raw:<name>").
class Node {
 public:
  Node(std::string name, std::vector<std::string> deps) : name_(std::move(name)), deps_(std::move(deps)) {}
  virtual ~Node() = default;

  const std::string& name() const { return name_; }
  const std::vector<std::string>& dependencies() const { return deps_; }
  /// Keys needed only while training (targets).
  virtual std::vector<std::string> training_dependencies() const { return {}; }
  virtual std::vector<std::string> output_keys() const { return {name_}; }
  /// Parameters fixing this node's behaviour before any training.
  virtual std::string config_hash() const = 0;
  /// Lazy outputs are cheap to rebuild and never checkpointed.
  virtual bool checkpointable() const { return true; }

  virtual void process(TrackContext& ctx, const Graph& graph, const std::string& version) const = 0;

  // Trainable nodes (learning modules, tuned post-processing).
  virtual bool trainable() const { return false; }
  virtual bool trained() const { return true; }
  virtual void train(std::span<TrackContext> contexts, const Graph& graph, std::uint64_t seed);
  /// Identity of the trained state; empty when untrained.
  virtual std::string state_fingerprint() const { return {}; }
  virtual std::string save_state() const { return {}; }
  virtual void load_state(const std::string&) {}
  virtual void reset() {}

 private:
  std::string name_;
  std::vector<std::string> deps_;
};

/// Stateless processing step backed by a function.
class FunctionNode : public Node {
 public:
  using Fn = std::function<void(TrackContext&, const Graph&, const std::string& version)>;
  FunctionNode(std::string name, std::vector<std::string> deps, std::string config, Fn fn,
               std::vector<std::string> outputs = {}, bool checkpointable = true);

  std::vector<std::string> output_keys() const override;
  std::string config_hash() const override { return config_; }
  bool checkpointable() const override { return checkpointable_; }
  void process(TrackContext& ctx, const Graph& graph, const std::string& version) const override;

 private:
  std::string config_;
  Fn fn_;
  std::vector<std::string> outputs_;
  bool checkpointable_;
};

struct InputSource {
  enum class Kind { Output, Latent, Skip };
  Kind kind = Kind::Output;
  /// Output / skip: key of a representation. Latent: name of a learning node.
  std::string key;
  /// Optional key of a one-column index representation mapping this
  /// module's examples onto rows of the source's example domain.
  std::string gather;
};

InputSource output_source(std::string key, std::string gather = {});
InputSource latent_source(std::string node, std::string gather = {});
InputSource skip_source(std::string key, std::string gather = {});

struct ModuleSpec {
  std::string name;
  std::vector<InputSource> sources;
  std::string target_key;
  std::vector<int> hidden_layers{16};
  learn::Activation hidden_activation = learn::Activation::Tanh;
  learn::TrainParams train;
  /// Opaque description of the row sampler / augmenter; part of the config hash.
  std::string sampler_config;
};

/// Picks training rows of one track; default takes every row.
using RowSampler =
    std::function<std::vector<Index>(const TrackContext&, const RowMatrixF& targets, std::mt19937_64& rng)>;
/// Extra training examples for one track (data augmentation).
using Augmenter = std::function<learn::Dataset(const TrackContext&, const Graph&, std::mt19937_64& rng)>;

/// An MLP learning module. Its outputs are "<name>" (sigmoid activations)
/// and "<name>/logits", one row per example of its domain.
class LearningNode : public Node {
 public:
  LearningNode(ModuleSpec spec, std::vector<std::string> extra_deps = {});

  const ModuleSpec& spec() const { return spec_; }
  const std::optional<learn::MlpModel>& model() const { return model_; }
  void set_model(learn::MlpModel m);
  void set_sampler(RowSampler s) { sampler_ = std::move(s); }
  void set_augmenter(Augmenter a) { augmenter_ = std::move(a); }
  const std::vector<double>& loss_trace() const { return loss_trace_; }

  std::vector<std::string> training_dependencies() const override { return {spec_.target_key}; }
  std::vector<std::string> output_keys() const override { return {name(), name() + "/logits"}; }
  std::string config_hash() const override;
  void process(TrackContext& ctx, const Graph& graph, const std::string& version) const override;

  bool trainable() const override { return true; }
  bool trained() const override { return model_.has_value(); }
  void train(std::span<TrackContext> contexts, const Graph& graph, std::uint64_t seed) override;
  std::string state_fingerprint() const override { return model_ ? model_->hash() : std::string{}; }
  std::string save_state() const override;
  void load_state(const std::string& s) override;
  void reset() override { model_.reset(); }

  /// Training examples of one track (sampled rows plus augmentation).
  learn::Dataset training_examples(const TrackContext& ctx, const Graph& graph, std::mt19937_64& rng) const;
  /// Input dimension implied by the sources in this context.
  Index input_dim(const TrackContext& ctx, const Graph& graph) const;

 private:
  ModuleSpec spec_;
  std::optional<learn::MlpModel> model_;
  RowSampler sampler_;
  Augmenter augmenter_;
  std::vector<double> loss_trace_;
};

/// Concatenates the module's sources, in declared order, for the given rows.
RowMatrixF collect_inputs(const ModuleSpec& spec, TrackContext& ctx, const Graph& graph,
                          std::span<const Index> rows);
/// Number of examples in the module's domain for this track.
Index domain_rows(const ModuleSpec& spec, const TrackContext& ctx, const Graph& graph);

struct Telemetry {
  long process_calls = 0;      // node x track evaluations of checkpointable nodes
  long lazy_process_calls = 0; // evaluations of lazy nodes
  long checkpoint_reads = 0;
  long checkpoint_writes = 0;
  std::vector<std::string> trained;  // nodes actually (re)trained
  std::vector<std::string> reused;   // trainable nodes restored from checkpoints
};

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  bool distortion = false;
  /// Returns a distorted copy of a training context (raw representations only).
  std::function<TrackContext(const TrackContext&, std::uint64_t seed)> distort;
  std::uint64_t seed = 1;
  std::set<std::string> retrain;
  int jobs = 1;
};

/// A set of training tracks plus a content hash of their raw data.
struct TrainingSet {
  std::vector<TrackContext> tracks;
  std::string hash;
};

std::string hash_raw(std::span<const TrackContext> tracks);
TrainingSet make_training_set(std::vector<TrackContext> tracks);

class Graph {
 public:
  void add(std::shared_ptr<Node> node);
  bool contains(const std::string& name) const { return nodes_.contains(name); }
  const Node& node(const std::string& name) const;
  Node& node(const std::string& name);
  const LearningNode& learning_node(const std::string& name) const;
  std::vector<std::string> node_names() const;

  /// Producer node of an output key ("node" or "node/suffix"), or "" for raw keys.
  std::string producer(const std::string& key) const;
  /// Node-level edges: producers of every key a node depends on (including training deps).
  std::vector<std::string> upstream(const std::string& name, bool include_training = true) const;
  /// Dependencies first; ties by name. Throws naming a cycle if one exists.
  std::vector<std::string> topo_order() const;
  void validate() const;

  /// Current identity of a node's function (covers all upstream state).
  std::string state_hash(const std::string& name) const;
  /// Identity of a trainable node's training problem.
  std::string input_hash(const std::string& name, const std::string& dataset_hash) const;

  /// Reads a value, failing if it was produced by an outdated node state.
  const Representation& read(const TrackContext& ctx, const std::string& key) const;
  const Pitchogram& raw(const TrackContext& ctx, const std::string& key) const;

  /// Computes the given nodes (and their ancestors) for one track.
  void process(TrackContext& ctx, const std::vector<std::string>& targets) const;
  /// Same over many tracks, optionally in parallel.
  void process_all(std::span<TrackContext> contexts, const std::vector<std::string>& targets, int jobs = 1) const;

  /// Iterative module-by-module training in topological order.
  Telemetry train_pipeline(TrainingSet& data, const TrainOptions& options);
  /// Loads every trainable node's checkpointed state for this training set
  /// without training; returns the nodes that have none.
  std::vector<std::string> restore_states(const std::string& dataset_hash, const TrainOptions& options);

  int generation(const std::string& name) const;

 private:
  void ensure(std::span<TrackContext> contexts, const std::string& dataset_hash, const std::vector<std::string>& targets,
              const TrainOptions& options, bool allow_checkpoints, Telemetry& telemetry, bool training) const;
  std::vector<std::string> ancestors(const std::vector<std::string>& targets, bool include_training) const;
  bool outputs_current(const TrackContext& ctx, const Node& n) const;
  bool feeds_trainable(const std::string& name) const;

  std::map<std::string, std::shared_ptr<Node>> nodes_;
  std::map<std::string, int> generations_;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace ltrack::dag
