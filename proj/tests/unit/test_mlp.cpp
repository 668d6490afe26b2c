#include "ltrack/error.hpp"
#include "ltrack/mlp.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace ltrack;
using namespace ltrack::learn;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

Dataset xor_data() {
  Dataset d;
  d.inputs.resize(4, 2);
  d.targets.resize(4, 1);
  d.inputs << 0, 0, 0, 1, 1, 0, 1, 1;
  d.targets << 0, 1, 1, 0;
  return d;
}

}  // namespace

TEST_CASE("zero weights output the sigmoid of the bias") {
  MlpModel m = make_mlp({3, 4, 2});
  m.biases[1] << 0.5, -1.0;
  const auto r = mlp_forward(m, Eigen::VectorXd::Random(3));
  CHECK(r.output(0) == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
  CHECK(r.output(1) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
}

TEST_CASE("identity single layer passes inputs to the logits") {
  MlpModel m = make_mlp({3, 3});
  m.weights[0] = Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd x(3);
  x << 0.2, -1.5, 3.0;
  const auto r = mlp_forward(m, x);
  CHECK((r.logits - x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(m.latent_dim() == 3);
}

TEST_CASE("forward matches a hand-coded evaluation") {
  for (Activation act : {Activation::Tanh, Activation::Sigmoid}) {
    const MlpModel m = init_mlp({4, 8, 3}, 5, act);
    std::mt19937_64 rng(6);
    const Eigen::MatrixXd X = random_matrix(10, 4, rng);
    const Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(10, 3, 0.3);
    double total = 0;
    for (int n = 0; n < 10; ++n) {
      const auto r = mlp_forward(m, X.row(n).transpose());
      for (int o = 0; o < 3; ++o) total -= 0.3 * std::log(r.output(o)) + 0.7 * std::log(1 - r.output(o));
    }
    CHECK(std::abs(total / 30.0 - oracle::loss_by_hand(m, X, Y)) < 1e-12);
  }
}

TEST_CASE("batched single-precision forward agrees with the double path") {
  const MlpModel m = init_mlp({5, 7, 6, 2}, 9);
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd X = random_matrix(12, 5, rng);
  const auto b = mlp_forward_batch(m, X.cast<float>(), true);
  REQUIRE(b.latent.cols() == 6);
  for (int n = 0; n < 12; ++n) {
    const auto r = mlp_forward(m, X.row(n).transpose());
    for (int o = 0; o < 2; ++o) CHECK(std::abs(b.logits(n, o) - r.logits(o)) < 1e-4);
    for (int h = 0; h < 6; ++h) CHECK(std::abs(b.latent(n, h) - r.last_hidden(h)) < 1e-4);
  }
}

TEST_CASE("analytic gradient matches central differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const MlpModel m = init_mlp({3, 5, 2}, 100 + trial);
    const Eigen::MatrixXd X = random_matrix(7, 3, rng);
    Eigen::MatrixXd Y = (random_matrix(7, 2, rng).array() > 0).cast<double>();
    Gradient g;
    loss_and_gradient(m, X, Y, g, 1e-3, 2.0);
    double worst = 0;
    const double eps = 1e-5;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
      for (Eigen::Index i = 0; i < m.weights[l].size(); ++i) {
        MlpModel p = m, q = m;
        p.weights[l].data()[i] += eps;
        q.weights[l].data()[i] -= eps;
        Gradient dummy;
        const double fd =
            (loss_and_gradient(p, X, Y, dummy, 1e-3, 2.0) - loss_and_gradient(q, X, Y, dummy, 1e-3, 2.0)) / (2 * eps);
        const double an = g.weights[l].data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an)));
      }
      for (Eigen::Index i = 0; i < m.biases[l].size(); ++i) {
        MlpModel p = m, q = m;
        p.biases[l](i) += eps;
        q.biases[l](i) -= eps;
        Gradient dummy;
        const double fd =
            (loss_and_gradient(p, X, Y, dummy, 1e-3, 2.0) - loss_and_gradient(q, X, Y, dummy, 1e-3, 2.0)) / (2 * eps);
        const double an = g.biases[l](i);
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-8, std::abs(fd) + std::abs(an)));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("cross_entropy equals the hand-coded loss") {
  const MlpModel m = init_mlp({3, 4, 1}, 12);
  std::mt19937_64 rng(13);
  Dataset d;
  d.inputs = random_matrix(9, 3, rng).cast<float>();
  d.targets = (random_matrix(9, 1, rng).array() > 0).cast<float>();
  CHECK(cross_entropy(m, d) ==
        doctest::Approx(oracle::loss_by_hand(m, d.inputs.cast<double>(), d.targets.cast<double>())).epsilon(1e-6));
}

TEST_CASE("XOR is learnable") {
  TrainParams p;
  p.epochs = 5000;
  p.batch_size = 4;
  p.seed = 3;
  const auto r = mlp_train(init_mlp({2, 8, 1}, 3), xor_data(), p);
  const Dataset d = xor_data();
  double mse = 0;
  for (int n = 0; n < 4; ++n) {
    const double y = mlp_forward(r.model, d.inputs.row(n).transpose().cast<double>()).output(0);
    mse += (y - d.targets(n, 0)) * (y - d.targets(n, 0));
  }
  CHECK(mse / 4 < 0.05);
}

TEST_CASE("training trace never increases and zero epochs is a no-op") {
  TrainParams p;
  p.epochs = 200;
  p.batch_size = 2;
  p.learning_rate = 0.5;
  const MlpModel init = init_mlp({2, 8, 1}, 4);
  const auto r = mlp_train(init, xor_data(), p);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) CHECK(r.loss_trace[i] <= r.loss_trace[i - 1]);
  p.epochs = 0;
  CHECK(mlp_train(init, xor_data(), p).model == init);
}

TEST_CASE("training is deterministic") {
  TrainParams p;
  p.epochs = 50;
  const MlpModel init = init_mlp({2, 8, 1}, 4);
  CHECK(mlp_train(init, xor_data(), p).model.hash() == mlp_train(init, xor_data(), p).model.hash());
}

TEST_CASE("standardised training folds the scaling into layer 0") {
  Dataset d = xor_data();
  d.inputs = d.inputs * 100.0f;
  d.inputs.array() += 50.0f;
  TrainParams p;
  p.epochs = 3000;
  p.batch_size = 4;
  p.standardize = true;
  const auto r = mlp_train(init_mlp({2, 8, 1}, 3), d, p);
  for (int n = 0; n < 4; ++n) {
    const double y = mlp_forward(r.model, d.inputs.row(n).transpose().cast<double>()).output(0);
    CHECK(std::abs(y - d.targets(n, 0)) < 0.3);
  }
}

TEST_CASE("model JSON round trip is exact") {
  const MlpModel m = init_mlp({4, 6, 3}, 21, Activation::Sigmoid);
  const MlpModel back = mlp_from_json(mlp_to_json(m));
  CHECK(back == m);
  CHECK(back.hash() == m.hash());
}

TEST_CASE("dimension errors") {
  const MlpModel m = init_mlp({3, 2}, 1);
  CHECK_THROWS_AS(mlp_forward(m, Eigen::VectorXd::Zero(4)), Error);
  Dataset d;
  d.inputs = RowMatrixF::Zero(2, 5);
  d.targets = RowMatrixF::Zero(2, 2);
  CHECK_THROWS_AS(mlp_train(m, d, TrainParams{}), Error);
}
