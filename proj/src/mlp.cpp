#include "ltrack/mlp.hpp"

#include "ltrack/error.hpp"
#include "ltrack/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>

namespace ltrack::learn {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "sigmoid"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

void MlpModel::validate() const {
  if (layer_sizes.size() < 2) throw Error("mlp: need at least input and output layers");
  if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
    throw Error("mlp: parameter count does not match layer_sizes");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
        biases[l].size() != layer_sizes[l + 1]) {
      throw Error("mlp: layer " + std::to_string(l) + " has inconsistent shape");
    }
    if (!weights[l].allFinite() || !biases[l].allFinite()) throw Error("mlp: non-finite parameter");
  }
}

std::string MlpModel::hash() const {
  io::Hasher h;
  h.str("mlp").str(to_string(hidden));
  for (int s : layer_sizes) h.i64(s);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h.bytes(weights[l].data(), static_cast<std::size_t>(weights[l].size()) * sizeof(double));
    h.bytes(biases[l].data(), static_cast<std::size_t>(biases[l].size()) * sizeof(double));
  }
  return h.hex();
}

MlpModel make_mlp(std::vector<int> layer_sizes, Activation hidden) {
  if (layer_sizes.size() < 2) throw ConfigError("mlp: need at least input and output layers");
  for (int s : layer_sizes)
    if (s < 1) throw ConfigError("mlp: layer sizes must be positive");
  MlpModel m;
  m.layer_sizes = std::move(layer_sizes);
  m.hidden = hidden;
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    m.weights.push_back(Eigen::MatrixXd::Zero(m.layer_sizes[l + 1], m.layer_sizes[l]));
    m.biases.push_back(Eigen::VectorXd::Zero(m.layer_sizes[l + 1]));
  }
  return m;
}

MlpModel init_mlp(std::vector<int> layer_sizes, std::uint64_t seed, Activation hidden) {
  MlpModel m = make_mlp(std::move(layer_sizes), hidden);
  std::mt19937_64 rng(seed);
  for (auto& w : m.weights) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
  }
  return m;
}

namespace {

template <typename Derived>
void apply_hidden(Eigen::ArrayBase<Derived>&& a, Activation act) {
  if (act == Activation::Tanh) {
    a = a.tanh();
  } else {
    a = 1.0 / (1.0 + (-a).exp());
  }
}

}  // namespace

ForwardResult mlp_forward(const MlpModel& model, const Eigen::VectorXd& input) {
  if (input.size() != model.input_dim()) {
    throw Error("mlp_forward: input has " + std::to_string(input.size()) + " values, model expects " +
                std::to_string(model.input_dim()));
  }
  Eigen::VectorXd a = input;
  const std::size_t n_layers = model.weights.size();
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    Eigen::VectorXd z = model.weights[l] * a + model.biases[l];
    apply_hidden(z.array(), model.hidden);
    a = std::move(z);
  }
  ForwardResult r;
  r.last_hidden = a;
  r.logits = model.weights.back() * a + model.biases.back();
  r.output = r.logits.unaryExpr([](double z) { return sigmoid(z); });
  return r;
}

BatchForward mlp_forward_batch(const MlpModel& model, const RowMatrixF& inputs, bool want_latent) {
  if (inputs.cols() != model.input_dim()) {
    throw Error("mlp_forward_batch: input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                std::to_string(model.input_dim()));
  }
  RowMatrixF a = inputs;
  const std::size_t n_layers = model.weights.size();
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    const Eigen::MatrixXf wt = model.weights[l].transpose().cast<float>();
    const Eigen::RowVectorXf b = model.biases[l].transpose().cast<float>();
    RowMatrixF z = a * wt;
    z.rowwise() += b;
    apply_hidden(z.array(), model.hidden);
    a = std::move(z);
  }
  BatchForward out;
  const Eigen::MatrixXf wt = model.weights.back().transpose().cast<float>();
  out.logits = a * wt;
  out.logits.rowwise() += model.biases.back().transpose().cast<float>();
  if (want_latent) out.latent = std::move(a);
  return out;
}

void Dataset::append(const Dataset& other) {
  if (other.size() == 0) return;
  if (size() == 0) {
    *this = other;
    return;
  }
  if (other.inputs.cols() != inputs.cols() || other.targets.cols() != targets.cols()) {
    throw Error("dataset append: dimension mismatch");
  }
  RowMatrixF x(inputs.rows() + other.inputs.rows(), inputs.cols());
  x << inputs, other.inputs;
  RowMatrixF y(targets.rows() + other.targets.rows(), targets.cols());
  y << targets, other.targets;
  inputs = std::move(x);
  targets = std::move(y);
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Forward pass keeping activations; returns output logits.
Eigen::MatrixXd forward_keep(const MlpModel& m, const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>& acts) {
  acts.clear();
  acts.push_back(x);
  const std::size_t n_layers = m.weights.size();
  for (std::size_t l = 0; l + 1 < n_layers; ++l) {
    Eigen::MatrixXd z = acts.back() * m.weights[l].transpose();
    z.rowwise() += m.biases[l].transpose();
    apply_hidden(z.array(), m.hidden);
    acts.push_back(std::move(z));
  }
  Eigen::MatrixXd logits = acts.back() * m.weights.back().transpose();
  logits.rowwise() += m.biases.back().transpose();
  return logits;
}

double l2_term(const MlpModel& m, double l2) {
  if (l2 == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& w : m.weights) s += w.squaredNorm();
  return 0.5 * l2 * s;
}

}  // namespace

double loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                         Gradient& grad, double l2, double positive_weight) {
  std::vector<Eigen::MatrixXd> acts;
  const Eigen::MatrixXd logits = forward_keep(model, inputs, acts);
  const double scale = 1.0 / static_cast<double>(logits.size());
  double loss = 0.0;
  Eigen::MatrixXd dz(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double z = logits(i, j);
      const double y = targets(i, j);
      loss += positive_weight * y * softplus(-z) + (1.0 - y) * softplus(z);
      const double p = sigmoid(z);
      dz(i, j) = scale * (-positive_weight * y * (1.0 - p) + (1.0 - y) * p);
    }
  }
  loss = loss * scale + l2_term(model, l2);

  const std::size_t n_layers = model.weights.size();
  grad.weights.resize(n_layers);
  grad.biases.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    grad.weights[l] = dz.transpose() * acts[l];
    if (l2 != 0.0) grad.weights[l] += l2 * model.weights[l];
    grad.biases[l] = dz.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd da = dz * model.weights[l];
    const auto& a = acts[l];
    if (model.hidden == Activation::Tanh) {
      dz = da.array() * (1.0 - a.array().square());
    } else {
      dz = da.array() * a.array() * (1.0 - a.array());
    }
  }
  return loss;
}

double cross_entropy(const MlpModel& model, const Dataset& data, double l2, double positive_weight) {
  constexpr Eigen::Index kChunk = 4096;
  double total = 0.0;
  for (Eigen::Index start = 0; start < data.size(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, data.size() - start);
    std::vector<Eigen::MatrixXd> acts;
    const Eigen::MatrixXd logits = forward_keep(model, data.inputs.middleRows(start, n).cast<double>(), acts);
    const Eigen::MatrixXd y = data.targets.middleRows(start, n).cast<double>();
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double z = logits.data()[i];
      const double t = y.data()[i];
      total += positive_weight * t * softplus(-z) + (1.0 - t) * softplus(z);
    }
  }
  const double denom = static_cast<double>(std::max<Eigen::Index>(1, data.targets.size()));
  return total / denom + l2_term(model, l2);
}

namespace {

struct AdamState {
  std::vector<Eigen::MatrixXd> mw, vw;
  std::vector<Eigen::VectorXd> mb, vb;
  long step = 0;

  explicit AdamState(const MlpModel& m) {
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      mw.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
      vw.push_back(mw.back());
      mb.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
      vb.push_back(mb.back());
    }
  }
};

void adam_update(MlpModel& m, const Gradient& g, AdamState& s, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++s.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    s.mw[l] = b1 * s.mw[l] + (1.0 - b1) * g.weights[l];
    s.vw[l] = b2 * s.vw[l] + (1.0 - b2) * g.weights[l].cwiseProduct(g.weights[l]);
    m.weights[l].array() -= lr * (s.mw[l].array() / c1) / ((s.vw[l].array() / c2).sqrt() + eps);
    s.mb[l] = b1 * s.mb[l] + (1.0 - b1) * g.biases[l];
    s.vb[l] = b2 * s.vb[l] + (1.0 - b2) * g.biases[l].cwiseProduct(g.biases[l]);
    m.biases[l].array() -= lr * (s.mb[l].array() / c1) / ((s.vb[l].array() / c2).sqrt() + eps);
  }
}

}  // namespace

TrainResult mlp_train(const MlpModel& initial, const Dataset& data, const TrainParams& params) {
  initial.validate();
  if (data.inputs.rows() != data.targets.rows()) throw Error("mlp_train: inputs and targets differ in length");
  if (data.inputs.cols() != initial.input_dim() || data.targets.cols() != initial.output_dim()) {
    throw Error("mlp_train: dataset dimensions do not match the model");
  }
  if (params.epochs < 0 || params.batch_size < 1) throw ConfigError("mlp_train: bad epochs or batch size");
  if (data.targets.size() > 0 && (data.targets.minCoeff() < 0.0f || data.targets.maxCoeff() > 1.0f)) {
    throw Error("mlp_train: targets must lie in [0, 1]");
  }

  TrainResult result;
  result.model = initial;
  if (params.epochs == 0 || data.size() == 0) {
    result.loss_trace.push_back(cross_entropy(initial, data, params.l2, params.positive_weight));
    return result;
  }

  // Optional standardisation; the model is trained in the scaled space.
  Dataset scaled_storage;
  const Dataset* train = &data;
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(data.inputs.cols());
  Eigen::RowVectorXd inv_std = Eigen::RowVectorXd::Ones(data.inputs.cols());
  if (params.standardize) {
    const Eigen::MatrixXd x = data.inputs.cast<double>();
    mean = x.colwise().mean();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - mean(j)).square().mean();
      inv_std(j) = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    }
    scaled_storage.inputs = ((x.rowwise() - mean).array().rowwise() * inv_std.array()).matrix().cast<float>();
    scaled_storage.targets = data.targets;
    train = &scaled_storage;
  }

  MlpModel& m = result.model;
  AdamState adam(m);
  double lr = params.learning_rate;
  double loss = cross_entropy(m, *train, params.l2, params.positive_weight);
  if (!std::isfinite(loss)) throw Error("mlp_train: initial loss is not finite");
  result.loss_trace.push_back(loss);

  std::mt19937_64 rng(params.seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(train->size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Gradient g;
  Eigen::MatrixXd xb, yb;

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    const MlpModel saved = m;
    const AdamState saved_adam = adam;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(params.batch_size)) {
      const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(params.batch_size));
      xb.resize(static_cast<Eigen::Index>(n), train->inputs.cols());
      yb.resize(static_cast<Eigen::Index>(n), train->targets.cols());
      for (std::size_t i = 0; i < n; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = train->inputs.row(order[start + i]).cast<double>();
        yb.row(static_cast<Eigen::Index>(i)) = train->targets.row(order[start + i]).cast<double>();
      }
      loss_and_gradient(m, xb, yb, g, params.l2, params.positive_weight);
      adam_update(m, g, adam, lr);
    }
    const double next = cross_entropy(m, *train, params.l2, params.positive_weight);
    if (!std::isfinite(next)) {
      std::ostringstream msg;
      msg << "mlp_train: loss became " << next << " at epoch " << epoch << " (learning rate " << lr << ")";
      throw Error(msg.str());
    }
    if (next > loss) {
      m = saved;
      adam = saved_adam;
      lr *= 0.5;
      ++result.rejected_epochs;
    } else {
      loss = next;
    }
    result.loss_trace.push_back(loss);
  }

  if (params.standardize) {
    // x_scaled = (x - mean) * inv_std  =>  W x_scaled + b = (W diag(inv_std)) x + (b - W diag(inv_std) mean)
    Eigen::MatrixXd w = m.weights[0].array().rowwise() * inv_std.array();
    m.biases[0] -= w * mean.transpose();
    m.weights[0] = std::move(w);
  }
  return result;
}

namespace {

std::string encode_doubles(const double* data, Eigen::Index n) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n) * 8);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int k = 0; k < 8; ++k) bytes[static_cast<std::size_t>(i) * 8 + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  return io::base64_encode(bytes);
}

std::vector<double> decode_doubles(const std::string& text) {
  const auto bytes = io::base64_decode(text);
  if (bytes.size() % 8 != 0) throw Error("mlp json: parameter blob not a multiple of 8 bytes");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace

std::string mlp_to_json(const MlpModel& model) {
  using nlohmann::json;
  json j;
  j["layer_sizes"] = model.layer_sizes;
  j["hidden_activation"] = to_string(model.hidden);
  j["output_activation"] = "sigmoid";
  json w = json::array(), b = json::array();
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    // Row-major weight bytes.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = model.weights[l];
    w.push_back(encode_doubles(rm.data(), rm.size()));
    b.push_back(encode_doubles(model.biases[l].data(), model.biases[l].size()));
  }
  j["weights"] = std::move(w);
  j["biases"] = std::move(b);
  return j.dump(1);
}

MlpModel mlp_from_json(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("mlp json: ") + e.what());
  }
  if (j.value("output_activation", "sigmoid") != "sigmoid") throw Error("mlp json: output activation must be sigmoid");
  MlpModel m = make_mlp(j.at("layer_sizes").get<std::vector<int>>(),
                        activation_from_string(j.at("hidden_activation").get<std::string>()));
  const auto& w = j.at("weights");
  const auto& b = j.at("biases");
  if (w.size() != m.weights.size() || b.size() != m.biases.size()) throw Error("mlp json: wrong number of layers");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const auto wv = decode_doubles(w[l].get<std::string>());
    const auto bv = decode_doubles(b[l].get<std::string>());
    if (wv.size() != static_cast<std::size_t>(m.weights[l].size()) ||
        bv.size() != static_cast<std::size_t>(m.biases[l].size())) {
      throw Error("mlp json: parameter blob size mismatch in layer " + std::to_string(l));
    }
    for (Eigen::Index r = 0; r < m.weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < m.weights[l].cols(); ++c)
        m.weights[l](r, c) = wv[static_cast<std::size_t>(r * m.weights[l].cols() + c)];
    for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) m.biases[l](r) = bv[static_cast<std::size_t>(r)];
  }
  m.validate();
  return m;
}

}  // namespace ltrack::learn
