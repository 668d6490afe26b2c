#include "ltrack/dag.hpp"

#include "ltrack/error.hpp"
#include "ltrack/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <queue>
#include <sstream>
#include <thread>

namespace ltrack::dag {

namespace fs = std::filesystem;
using nlohmann::json;

void Representation::fill(std::span<const Index> rows, Eigen::Ref<RowMatrixF> out) const {
  if (out.rows() != static_cast<Index>(rows.size()) || out.cols() != dim) {
    throw Error("representation fill: output block has the wrong shape");
  }
  for (Index r : rows)
    if (r < 0 || r >= this->rows) throw Error("representation fill: row out of range");
  if (data) {
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = data->row(rows[i]);
  } else if (generator) {
    generator(rows, out);
  } else if (!rows.empty()) {
    throw Error("representation fill: empty representation");
  }
}

Representation Representation::from_matrix(RowMatrixF m, std::string version) {
  Representation r;
  r.rows = m.rows();
  r.dim = m.cols();
  r.version = std::move(version);
  r.data = std::make_shared<const RowMatrixF>(std::move(m));
  return r;
}

Representation Representation::lazy(Index rows, Index dim,
                                    std::function<void(std::span<const Index>, Eigen::Ref<RowMatrixF>)> gen,
                                    std::string version) {
  Representation r;
  r.rows = rows;
  r.dim = dim;
  r.version = std::move(version);
  r.generator = std::move(gen);
  return r;
}

const Representation& TrackContext::at(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw Error("track " + track_id + ": no value '" + key + "'");
  return it->second;
}

void Node::train(std::span<TrackContext>, const Graph&, std::uint64_t) {
  throw Error("node " + name() + " is not trainable");
}

FunctionNode::FunctionNode(std::string name, std::vector<std::string> deps, std::string config, Fn fn,
                           std::vector<std::string> outputs, bool checkpointable)
    : Node(std::move(name), std::move(deps)),
      config_(std::move(config)),
      fn_(std::move(fn)),
      outputs_(std::move(outputs)),
      checkpointable_(checkpointable) {}

std::vector<std::string> FunctionNode::output_keys() const {
  return outputs_.empty() ? std::vector<std::string>{name()} : outputs_;
}

namespace {

void stamp(TrackContext& ctx, const Node& n, const std::string& version) {
  for (const auto& key : n.output_keys()) {
    auto it = ctx.values.find(key);
    if (it == ctx.values.end()) throw Error("node " + n.name() + " did not produce '" + key + "'");
    it->second.version = version;
  }
}

}  // namespace

void FunctionNode::process(TrackContext& ctx, const Graph& graph, const std::string& version) const {
  fn_(ctx, graph, version);
  stamp(ctx, *this, version);
}

InputSource output_source(std::string key, std::string gather) {
  return {InputSource::Kind::Output, std::move(key), std::move(gather)};
}
InputSource latent_source(std::string node, std::string gather) {
  return {InputSource::Kind::Latent, std::move(node), std::move(gather)};
}
InputSource skip_source(std::string key, std::string gather) {
  return {InputSource::Kind::Skip, std::move(key), std::move(gather)};
}

namespace {

std::vector<std::string> spec_dependencies(const ModuleSpec& spec, std::vector<std::string> extra) {
  std::vector<std::string> deps;
  auto add = [&](const std::string& k) {
    if (!k.empty() && std::find(deps.begin(), deps.end(), k) == deps.end()) deps.push_back(k);
  };
  for (const auto& s : spec.sources) {
    add(s.key);
    add(s.gather);
  }
  for (const auto& e : extra) add(e);
  return deps;
}

std::vector<Index> gather_rows(const Representation& index_rep, std::span<const Index> rows) {
  if (index_rep.dim != 1) throw Error("gather index must have a single column");
  RowMatrixF idx(static_cast<Index>(rows.size()), 1);
  index_rep.fill(rows, idx);
  std::vector<Index> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = static_cast<Index>(idx(static_cast<Index>(i), 0));
  return out;
}

std::string latent_cache_key(const InputSource& s) { return "latent:" + s.key + "@" + s.gather; }

}  // namespace

LearningNode::LearningNode(ModuleSpec spec, std::vector<std::string> extra_deps)
    : Node(spec.name, spec_dependencies(spec, std::move(extra_deps))), spec_(std::move(spec)) {}

void LearningNode::set_model(learn::MlpModel m) {
  m.validate();
  model_ = std::move(m);
}

std::string LearningNode::config_hash() const {
  io::Hasher h;
  h.str("mlp-module").str(spec_.name).str(spec_.target_key);
  for (const auto& s : spec_.sources) h.i64(static_cast<int>(s.kind)).str(s.key).str(s.gather);
  for (int l : spec_.hidden_layers) h.i64(l);
  h.str(learn::to_string(spec_.hidden_activation));
  const auto& t = spec_.train;
  h.f64(t.learning_rate).i64(t.epochs).i64(t.batch_size).i64(static_cast<std::int64_t>(t.seed)).f64(t.l2);
  h.i64(t.standardize).f64(t.positive_weight);
  h.str(spec_.sampler_config);
  return h.hex();
}

Index domain_rows(const ModuleSpec& spec, const TrackContext& ctx, const Graph& graph) {
  if (spec.sources.empty()) throw Error("module " + spec.name + " declares no input sources");
  Index rows = -1;
  for (const auto& s : spec.sources) {
    Index r;
    if (!s.gather.empty()) {
      r = graph.read(ctx, s.gather).rows;
    } else if (s.kind == InputSource::Kind::Latent) {
      r = domain_rows(graph.learning_node(s.key).spec(), ctx, graph);
    } else {
      r = graph.read(ctx, s.key).rows;
    }
    if (rows >= 0 && r != rows) {
      throw Error("module " + spec.name + ": source '" + s.key + "' has " + std::to_string(r) + " rows, expected " +
                  std::to_string(rows));
    }
    rows = r;
  }
  return rows;
}

RowMatrixF collect_inputs(const ModuleSpec& spec, TrackContext& ctx, const Graph& graph,
                          std::span<const Index> rows) {
  if (spec.sources.empty()) throw Error("module " + spec.name + " declares no input sources");
  // Resolve every source first so dimensions are known.
  struct Part {
    const Representation* rep;
    std::vector<Index> rows;
  };
  std::vector<Part> parts;
  Index total = 0;
  for (const auto& s : spec.sources) {
    if (s.kind == InputSource::Kind::Latent) {
      if (!graph.contains(s.key)) throw Error("module " + spec.name + ": missing latent source '" + s.key + "'");
      const auto& upstream = graph.learning_node(s.key);
      if (!upstream.model()) throw Error("module " + spec.name + ": latent source '" + s.key + "' is untrained");
      const std::string current = graph.state_hash(s.key);
      const std::string cache = latent_cache_key(s);
      auto it = ctx.values.find(cache);
      if (it != ctx.values.end()) {
        if (it->second.version != current) {
          throw StaleError("module " + spec.name + ": cached latent of '" + s.key +
                           "' predates its retraining; recompute it");
        }
      } else {
        // Derive on demand from the upstream model over this module's whole domain.
        Index n;
        std::vector<Index> src;
        if (!s.gather.empty()) {
          const auto& idx = graph.read(ctx, s.gather);
          n = idx.rows;
          std::vector<Index> all(static_cast<std::size_t>(n));
          for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
          src = gather_rows(idx, all);
        } else {
          n = domain_rows(upstream.spec(), ctx, graph);
          src.resize(static_cast<std::size_t>(n));
          for (Index i = 0; i < n; ++i) src[static_cast<std::size_t>(i)] = i;
        }
        const RowMatrixF up_in = collect_inputs(upstream.spec(), ctx, graph, src);
        auto fwd = learn::mlp_forward_batch(*upstream.model(), up_in, true);
        it = ctx.values.emplace(cache, Representation::from_matrix(std::move(fwd.latent), current)).first;
      }
      parts.push_back({&it->second, std::vector<Index>(rows.begin(), rows.end())});
      total += it->second.dim;
      continue;
    }
    if (!ctx.has(s.key)) {
      throw Error("module " + spec.name + ": missing input source '" + s.key + "' for track " + ctx.track_id);
    }
    const Representation& rep = graph.read(ctx, s.key);
    std::vector<Index> r = s.gather.empty() ? std::vector<Index>(rows.begin(), rows.end())
                                            : gather_rows(graph.read(ctx, s.gather), rows);
    parts.push_back({&rep, std::move(r)});
    total += rep.dim;
  }
  RowMatrixF out(static_cast<Index>(rows.size()), total);
  Index col = 0;
  for (const auto& p : parts) {
    if (p.rep->dim > 0) p.rep->fill(p.rows, out.middleCols(col, p.rep->dim));
    col += p.rep->dim;
  }
  return out;
}

Index LearningNode::input_dim(const TrackContext& ctx, const Graph& graph) const {
  TrackContext scratch = ctx;
  std::vector<Index> none;
  return collect_inputs(spec_, scratch, graph, none).cols();
}

void LearningNode::process(TrackContext& ctx, const Graph& graph, const std::string& version) const {
  if (!model_) throw Error("module " + name() + " is untrained");
  const Index n = domain_rows(spec_, ctx, graph);
  const Index out_dim = model_->output_dim();
  RowMatrixF logits(n, out_dim);
  constexpr Index kChunk = 2048;
  std::vector<Index> rows;
  for (Index start = 0; start < n; start += kChunk) {
    const Index m = std::min(kChunk, n - start);
    rows.resize(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) rows[static_cast<std::size_t>(i)] = start + i;
    const RowMatrixF x = collect_inputs(spec_, ctx, graph, rows);
    logits.middleRows(start, m) = learn::mlp_forward_batch(*model_, x).logits;
  }
  RowMatrixF probs = logits.unaryExpr([](float z) { return learn::sigmoid(z); });
  ctx.values[name()] = Representation::from_matrix(std::move(probs), version);
  ctx.values[name() + "/logits"] = Representation::from_matrix(std::move(logits), version);
}

learn::Dataset LearningNode::training_examples(const TrackContext& ctx_in, const Graph& graph,
                                               std::mt19937_64& rng) const {
  TrackContext& ctx = const_cast<TrackContext&>(ctx_in);
  const Representation& target = graph.read(ctx, spec_.target_key);
  if (!target.data) throw Error("module " + name() + ": target '" + spec_.target_key + "' must be materialised");
  std::vector<Index> rows;
  if (sampler_) {
    rows = sampler_(ctx, *target.data, rng);
  } else {
    rows.resize(static_cast<std::size_t>(target.rows));
    for (Index i = 0; i < target.rows; ++i) rows[static_cast<std::size_t>(i)] = i;
  }
  learn::Dataset d;
  d.inputs = collect_inputs(spec_, ctx, graph, rows);
  d.targets.resize(static_cast<Index>(rows.size()), target.dim);
  for (std::size_t i = 0; i < rows.size(); ++i) d.targets.row(static_cast<Index>(i)) = target.data->row(rows[i]);
  if (augmenter_) d.append(augmenter_(ctx, graph, rng));
  return d;
}

void LearningNode::train(std::span<TrackContext> contexts, const Graph& graph, std::uint64_t seed) {
  learn::Dataset data;
  for (auto& ctx : contexts) {
    std::mt19937_64 rng(io::Hasher().i64(static_cast<std::int64_t>(seed)).str(ctx.track_id).value());
    data.append(training_examples(ctx, graph, rng));
  }
  if (data.size() == 0) throw Error("module " + name() + ": no training examples");
  std::vector<int> sizes{static_cast<int>(data.inputs.cols())};
  for (int h : spec_.hidden_layers) sizes.push_back(h);
  sizes.push_back(static_cast<int>(data.targets.cols()));
  auto params = spec_.train;
  params.seed = seed;
  const auto init = learn::init_mlp(sizes, seed, spec_.hidden_activation);
  auto result = learn::mlp_train(init, data, params);
  model_ = std::move(result.model);
  loss_trace_ = std::move(result.loss_trace);
}

std::string LearningNode::save_state() const {
  if (!model_) throw Error("module " + name() + " is untrained");
  return learn::mlp_to_json(*model_);
}

void LearningNode::load_state(const std::string& s) { model_ = learn::mlp_from_json(s); }

std::string hash_raw(std::span<const TrackContext> tracks) {
  io::Hasher h;
  for (const auto& t : tracks) {
    h.str(t.track_id).f64(t.annotation.duration_s);
    for (const auto& n : t.annotation.notes) h.f64(n.pitch_midi).f64(n.onset_s).f64(n.offset_s);
    for (const auto& [name, p] : t.raw) {
      h.str(name).f64(p.grid.pitch_min_midi).f64(p.grid.pitch_max_midi).f64(p.grid.bin_cents).f64(p.grid.hop_s);
      h.i64(p.values.rows()).i64(p.values.cols());
      h.bytes(p.values.data(), static_cast<std::size_t>(p.values.size()) * sizeof(float));
    }
  }
  return h.hex();
}

TrainingSet make_training_set(std::vector<TrackContext> tracks) {
  TrainingSet s;
  s.hash = hash_raw(tracks);
  s.tracks = std::move(tracks);
  return s;
}

void Graph::add(std::shared_ptr<Node> node) {
  const std::string name = node->name();
  if (name.empty() || name.find('/') != std::string::npos || name.rfind("raw:", 0) == 0) {
    throw ConfigError("invalid node name '" + name + "'");
  }
  if (!nodes_.emplace(name, std::move(node)).second) throw ConfigError("duplicate node '" + name + "'");
}

const Node& Graph::node(const std::string& name) const {
  auto it = nodes_.find(name);
  if (it == nodes_.end()) throw Error("graph has no node '" + name + "'");
  return *it->second;
}

Node& Graph::node(const std::string& name) {
  auto it = nodes_.find(name);
  if (it == nodes_.end()) throw Error("graph has no node '" + name + "'");
  return *it->second;
}

const LearningNode& Graph::learning_node(const std::string& name) const {
  auto* p = dynamic_cast<const LearningNode*>(&node(name));
  if (!p) throw Error("node '" + name + "' is not a learning module");
  return *p;
}

std::vector<std::string> Graph::node_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : nodes_) out.push_back(k);
  return out;
}

std::string Graph::producer(const std::string& key) const {
  if (key.rfind("raw:", 0) == 0) return {};
  const auto slash = key.find('/');
  return slash == std::string::npos ? key : key.substr(0, slash);
}

std::vector<std::string> Graph::upstream(const std::string& name, bool include_training) const {
  const Node& n = node(name);
  std::vector<std::string> keys = n.dependencies();
  if (include_training) {
    const auto t = n.training_dependencies();
    keys.insert(keys.end(), t.begin(), t.end());
  }
  std::vector<std::string> out;
  for (const auto& k : keys) {
    const std::string p = producer(k);
    if (p.empty()) continue;
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  // Latent sources also need their producer's inputs, reached through that node's deps.
  return out;
}

void Graph::validate() const {
  for (const auto& [name, n] : nodes_) {
    for (const auto& key : n->dependencies()) {
      const std::string p = producer(key);
      if (!p.empty() && !nodes_.contains(p)) {
        throw ConfigError("node '" + name + "' depends on unknown node '" + p + "'");
      }
    }
    for (const auto& key : n->training_dependencies()) {
      const std::string p = producer(key);
      if (!p.empty() && !nodes_.contains(p)) {
        throw ConfigError("node '" + name + "' trains on unknown node '" + p + "'");
      }
    }
  }
  (void)topo_order();
}

std::vector<std::string> Graph::topo_order() const {
  std::map<std::string, int> indegree;
  std::map<std::string, std::vector<std::string>> children;
  for (const auto& [name, n] : nodes_) indegree[name];
  for (const auto& [name, n] : nodes_) {
    for (const auto& p : upstream(name, true)) {
      if (!nodes_.contains(p)) throw ConfigError("node '" + name + "' depends on unknown node '" + p + "'");
      ++indegree[name];
      children[p].push_back(name);
    }
  }
  std::priority_queue<std::string, std::vector<std::string>, std::greater<>> ready;
  for (const auto& [name, d] : indegree)
    if (d == 0) ready.push(name);
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::string n = ready.top();
    ready.pop();
    order.push_back(n);
    for (const auto& c : children[n])
      if (--indegree[c] == 0) ready.push(c);
  }
  if (order.size() == nodes_.size()) return order;

  // Walk parent links among the remaining nodes until one repeats.
  std::string start;
  for (const auto& [name, d] : indegree)
    if (d > 0) {
      start = name;
      break;
    }
  std::vector<std::string> path;
  std::map<std::string, std::size_t> seen;
  std::string cur = start;
  while (!seen.contains(cur)) {
    seen[cur] = path.size();
    path.push_back(cur);
    std::string next;
    for (const auto& p : upstream(cur, true))
      if (indegree[p] > 0) {
        next = p;
        break;
      }
    cur = next;
  }
  std::vector<std::string> cycle(path.begin() + static_cast<std::ptrdiff_t>(seen[cur]), path.end());
  std::reverse(cycle.begin(), cycle.end());
  std::sort(cycle.begin(), cycle.end());
  std::string msg = "cycle in pipeline graph:";
  for (const auto& c : cycle) msg += " " + c;
  throw ConfigError(msg);
}

int Graph::generation(const std::string& name) const {
  auto it = generations_.find(name);
  return it == generations_.end() ? 0 : it->second;
}

std::string Graph::state_hash(const std::string& name) const {
  const Node& n = node(name);
  io::Hasher h;
  h.str("state").str(name).str(n.config_hash()).str(n.state_fingerprint());
  for (const auto& key : n.dependencies()) {
    const std::string p = producer(key);
    h.str(key);
    if (!p.empty()) h.str(state_hash(p));
  }
  return h.hex();
}

std::string Graph::input_hash(const std::string& name, const std::string& dataset_hash) const {
  const Node& n = node(name);
  io::Hasher h;
  h.str("input").str(name).str(n.config_hash()).i64(generation(name)).str(dataset_hash);
  for (const auto& p : upstream(name, true)) h.str(p).str(state_hash(p));
  return h.hex();
}

const Representation& Graph::read(const TrackContext& ctx, const std::string& key) const {
  const Representation& rep = ctx.at(key);
  const std::string p = producer(key);
  if (!p.empty()) {
    const std::string current = state_hash(p);
    if (rep.version != current) {
      throw StaleError("track " + ctx.track_id + ": value '" + key + "' was produced by an outdated state of '" + p +
                       "'");
    }
  }
  return rep;
}

const Pitchogram& Graph::raw(const TrackContext& ctx, const std::string& key) const {
  const std::string name = key.rfind("raw:", 0) == 0 ? key.substr(4) : key;
  auto it = ctx.raw.find(name);
  if (it == ctx.raw.end()) throw Error("track " + ctx.track_id + ": no raw representation '" + name + "'");
  return it->second;
}

std::vector<std::string> Graph::ancestors(const std::vector<std::string>& targets, bool include_training) const {
  std::set<std::string> seen;
  std::vector<std::string> stack(targets.begin(), targets.end());
  while (!stack.empty()) {
    const std::string n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (const auto& p : upstream(n, include_training)) stack.push_back(p);
    // Latent sources are computed from the upstream module's own inputs.
    if (auto* ln = dynamic_cast<const LearningNode*>(&node(n))) {
      for (const auto& s : ln->spec().sources)
        if (s.kind == InputSource::Kind::Latent)
          for (const auto& p : upstream(s.key, false)) stack.push_back(p);
    }
  }
  std::vector<std::string> out;
  for (const auto& n : topo_order())
    if (seen.contains(n)) out.push_back(n);
  return out;
}

bool Graph::outputs_current(const TrackContext& ctx, const Node& n) const {
  const std::string current = state_hash(n.name());
  for (const auto& key : n.output_keys()) {
    auto it = ctx.values.find(key);
    if (it == ctx.values.end() || it->second.version != current) return false;
  }
  return true;
}

void Graph::process(TrackContext& ctx, const std::vector<std::string>& targets) const {
  for (const auto& name : ancestors(targets, false)) {
    const Node& n = node(name);
    if (outputs_current(ctx, n)) continue;
    if (!n.trained()) throw Error("node '" + name + "' is untrained");
    n.process(ctx, *this, state_hash(name));
  }
}

void Graph::process_all(std::span<TrackContext> contexts, const std::vector<std::string>& targets, int jobs) const {
  parallel_for(contexts.size(), jobs, [&](std::size_t i) { process(contexts[i], targets); });
}

namespace {

fs::path output_dir(const fs::path& root, const std::string& node, const std::string& key) {
  return root / node / key;
}

bool load_outputs(const fs::path& dir, const std::string& state, const std::string& dataset_hash,
                  std::span<TrackContext> contexts, const Node& n) {
  const fs::path meta_path = dir / "meta.json";
  const fs::path data_path = dir / "outputs.pgrm";
  if (!fs::exists(meta_path) || !fs::exists(data_path)) return false;
  try {
    const json meta = json::parse(io::read_file(meta_path));
    if (meta.at("state_hash") != state || meta.at("dataset_hash") != dataset_hash) return false;
    const std::string bytes = io::read_file(data_path);
    if (meta.at("content_hash") != io::Hasher().bytes(bytes.data(), bytes.size()).hex()) return false;
    const auto tracks = meta.at("tracks").get<std::vector<std::string>>();
    const auto keys = meta.at("keys").get<std::vector<std::string>>();
    if (tracks.size() != contexts.size() || keys != n.output_keys()) return false;
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (tracks[i] != contexts[i].track_id) return false;
    std::istringstream in(bytes);
    std::vector<std::vector<Representation>> loaded(contexts.size());
    for (std::size_t t = 0; t < contexts.size(); ++t) {
      for (std::size_t k = 0; k < keys.size(); ++k) {
        Pitchogram rec = io::read_pgrm(in);
        loaded[t].push_back(Representation::from_matrix(std::move(rec.values), state));
      }
    }
    for (std::size_t t = 0; t < contexts.size(); ++t)
      for (std::size_t k = 0; k < keys.size(); ++k) contexts[t].values[keys[k]] = std::move(loaded[t][k]);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

void save_outputs(const fs::path& dir, const std::string& state, const std::string& dataset_hash,
                  std::span<TrackContext> contexts, const Node& n) {
  fs::create_directories(dir);
  std::ostringstream out;
  json tracks = json::array();
  const auto keys = n.output_keys();
  for (auto& ctx : contexts) {
    tracks.push_back(ctx.track_id);
    for (const auto& key : keys) {
      const Representation& rep = ctx.at(key);
      if (!rep.data) throw Error("checkpoint: output '" + key + "' is not materialised");
      Pitchogram rec;
      rec.grid = GridSpec{0.0, 0.0, 0.0, 0.0};
      rec.values = *rep.data;
      io::write_pgrm(out, rec);
    }
  }
  const std::string bytes = out.str();
  io::write_file(dir / "outputs.pgrm", bytes);
  json meta = {{"node", n.name()},
               {"state_hash", state},
               {"dataset_hash", dataset_hash},
               {"content_hash", io::Hasher().bytes(bytes.data(), bytes.size()).hex()},
               {"tracks", tracks},
               {"keys", keys}};
  io::write_file(dir / "meta.json", meta.dump(1));
}

std::map<std::string, int> load_generations(const fs::path& root) {
  std::map<std::string, int> g;
  const fs::path p = root / "generations.json";
  if (root.empty() || !fs::exists(p)) return g;
  const json j = json::parse(io::read_file(p));
  for (auto it = j.begin(); it != j.end(); ++it) g[it.key()] = it.value().get<int>();
  return g;
}

void save_generations(const fs::path& root, const std::map<std::string, int>& g) {
  if (root.empty()) return;
  fs::create_directories(root);
  json j = json::object();
  for (const auto& [k, v] : g) j[k] = v;
  io::write_file(root / "generations.json", j.dump(1));
}

}  // namespace

void Graph::ensure(std::span<TrackContext> contexts, const std::string& dataset_hash,
                   const std::vector<std::string>& targets, const TrainOptions& options, bool allow_checkpoints,
                   Telemetry& telemetry, bool training) const {
  const bool use_dir = allow_checkpoints && !options.checkpoint_dir.empty();
  for (const auto& name : ancestors(targets, training)) {
    const Node& n = node(name);
    const bool current = std::all_of(contexts.begin(), contexts.end(),
                                     [&](const TrackContext& c) { return outputs_current(c, n); });
    if (current) continue;
    if (!n.trained()) throw Error("node '" + name + "' is untrained");
    const std::string state = state_hash(name);
    const std::string key = io::Hasher().str(state).str(dataset_hash).hex();
    const fs::path dir = output_dir(options.checkpoint_dir, name, key);
    if (use_dir && n.checkpointable() && load_outputs(dir, state, dataset_hash, contexts, n)) {
      ++telemetry.checkpoint_reads;
      continue;
    }
    parallel_for(contexts.size(), options.jobs, [&](std::size_t i) {
      if (!outputs_current(contexts[i], n)) n.process(contexts[i], *this, state);
    });
    if (n.checkpointable()) {
      telemetry.process_calls += static_cast<long>(contexts.size());
      if (use_dir) {
        save_outputs(dir, state, dataset_hash, contexts, n);
        ++telemetry.checkpoint_writes;
      }
    } else {
      telemetry.lazy_process_calls += static_cast<long>(contexts.size());
    }
  }
}

Telemetry Graph::train_pipeline(TrainingSet& data, const TrainOptions& options) {
  validate();
  Telemetry telemetry;
  if (!options.checkpoint_dir.empty()) {
    for (const auto& [k, v] : load_generations(options.checkpoint_dir)) generations_[k] = std::max(generations_[k], v);
  }
  if (options.distortion && !options.distort) throw ConfigError("train_pipeline: distortion enabled without a distorter");
  // Trained states are checkpointed in both modes (callers key distorted
  // training through the dataset hash); outputs computed on distorted copies never are.
  const bool checkpoints = !options.checkpoint_dir.empty();

  for (const auto& name : topo_order()) {
    Node& n = node(name);
    if (!n.trainable()) continue;
    const bool forced = options.retrain.contains(name);
    if (forced) {
      ++generations_[name];
      save_generations(options.checkpoint_dir, generations_);
    }
    const std::string key = input_hash(name, data.hash);
    const fs::path state_dir = options.checkpoint_dir / name / key;
    const std::uint64_t seed =
        io::Hasher().i64(static_cast<std::int64_t>(options.seed)).str(name).i64(generation(name)).value();

    bool restored = false;
    if (checkpoints && !forced && fs::exists(state_dir / "state.json")) {
      try {
        n.load_state(io::read_file(state_dir / "state.json"));
        restored = true;
        ++telemetry.checkpoint_reads;
        telemetry.reused.push_back(name);
      } catch (const std::exception&) {
        n.reset();
      }
    }
    if (!restored) {
      n.reset();
      std::vector<std::string> inputs = upstream(name, true);
      if (options.distortion) {
        // Fresh distortion per module: its training data differs from every other module's.
        std::vector<TrackContext> distorted;
        distorted.reserve(data.tracks.size());
        const std::uint64_t dseed = io::Hasher().i64(static_cast<std::int64_t>(options.seed)).str("distort").str(name).value();
        for (std::size_t i = 0; i < data.tracks.size(); ++i) {
          TrackContext c = options.distort(data.tracks[i], dseed + i);
          c.values.clear();
          distorted.push_back(std::move(c));
        }
        ensure(distorted, data.hash, inputs, options, false, telemetry, true);
        n.train(distorted, *this, seed);
      } else {
        ensure(data.tracks, data.hash, inputs, options, checkpoints, telemetry, true);
        n.train(data.tracks, *this, seed);
      }
      telemetry.trained.push_back(name);
      if (checkpoints) {
        fs::create_directories(state_dir);
        io::write_file(state_dir / "state.json", n.save_state());
        const json meta = {{"node", name},
                           {"input_hash", key},
                           {"fingerprint", n.state_fingerprint()},
                           {"generation", generation(name)}};
        io::write_file(state_dir / "meta.json", meta.dump(1));
        ++telemetry.checkpoint_writes;
      }
    }
    // Latent caches of the previous state would be rejected downstream as stale.
    const std::string prefix = "latent:" + name + "@";
    const std::string current = state_hash(name);
    for (auto& c : data.tracks)
      std::erase_if(c.values, [&](const auto& kv) { return kv.first.starts_with(prefix) && kv.second.version != current; });
    // Step (3) only matters when a later trainable node consumes these outputs.
    if (!options.distortion && feeds_trainable(name)) {
      ensure(data.tracks, data.hash, {name}, options, checkpoints, telemetry, false);
    }
  }
  return telemetry;
}

bool Graph::feeds_trainable(const std::string& name) const {
  for (const auto& [other, n] : nodes_) {
    if (other == name || !n->trainable()) continue;
    const auto anc = ancestors({other}, true);
    if (std::find(anc.begin(), anc.end(), name) != anc.end()) return true;
  }
  return false;
}

std::vector<std::string> Graph::restore_states(const std::string& dataset_hash, const TrainOptions& options) {
  validate();
  for (const auto& [k, v] : load_generations(options.checkpoint_dir)) generations_[k] = std::max(generations_[k], v);
  std::vector<std::string> missing;
  for (const auto& name : topo_order()) {
    Node& n = node(name);
    if (!n.trainable()) continue;
    const fs::path path = options.checkpoint_dir / name / input_hash(name, dataset_hash) / "state.json";
    if (options.checkpoint_dir.empty() || !fs::exists(path)) {
      n.reset();
      missing.push_back(name);
      continue;
    }
    n.load_state(io::read_file(path));
  }
  return missing;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ltrack::dag
