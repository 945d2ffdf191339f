#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "civic_lens/baselines.hpp"

using namespace civic_lens;

namespace {

SparseRows sparse(const Eigen::MatrixXd& dense) { return dense.sparseView(); }

// Newton's method on the same objective, dense; independent of the L-BFGS code.
Eigen::VectorXd newton_oracle(const Eigen::MatrixXd& X, const std::vector<int>& y, double alpha) {
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::MatrixXd A(n, d + 1);
  A << X, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd p = (-(A * theta).array()).exp().unaryExpr([](double e) { return 1.0 / (1.0 + e); });
    Eigen::VectorXd r = p;
    for (Eigen::Index i = 0; i < n; ++i) r(i) -= y[static_cast<std::size_t>(i)];
    Eigen::VectorXd g = A.transpose() * r / static_cast<double>(n);
    Eigen::MatrixXd H = A.transpose() * (p.array() * (1 - p.array())).matrix().asDiagonal() * A / static_cast<double>(n);
    for (Eigen::Index k = 0; k < d; ++k) {
      g(k) += alpha * theta(k);
      H(k, k) += alpha;
    }
    theta -= H.ldlt().solve(g);
  }
  return theta;
}

TokenVocab small_vocab(int n) {
  std::vector<std::string> terms;
  for (int i = 0; i < n; ++i) terms.push_back("w" + std::to_string(i));
  return TokenVocab(terms);
}

}  // namespace

TEST_CASE("train_logreg separates the 1-D example") {
  Eigen::MatrixXd X(4, 1);
  X << -1, 1, -1, 1;
  std::vector<int> y = {0, 1, 0, 1};
  auto m = train_logreg(sparse(X), y, 1e-4);
  auto p = predict_proba(m, sparse(X));
  for (int i = 0; i < 4; ++i) CHECK((p(i) > 0.5) == (y[static_cast<std::size_t>(i)] == 1));
}

TEST_CASE("train_logreg matches a Newton oracle and its loss is monotone") {
  Rng rng(3);
  Eigen::MatrixXd X(40, 5);
  std::vector<int> y;
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 5; ++j) X(i, j) = rng.normal();
    y.push_back(X(i, 0) + 0.5 * X(i, 1) + 0.8 * rng.normal() > 0 ? 1 : 0);
  }
  for (double alpha : {1e-1, 1e-2, 1e-3}) {
    LogRegTrace trace;
    auto m = train_logreg(sparse(X), y, alpha, {}, &trace);
    CHECK(trace.converged);
    CHECK(trace.gradient_norm < 1e-6);
    for (std::size_t k = 1; k < trace.losses.size(); ++k) CHECK(trace.losses[k] <= trace.losses[k - 1]);
    auto ref = newton_oracle(X, y, alpha);
    for (int j = 0; j < 5; ++j) CHECK(m.weights(j) == doctest::Approx(ref(j)).epsilon(1e-5));
    CHECK(m.bias == doctest::Approx(ref(5)).epsilon(1e-5));
    CHECK(logreg_objective(m, sparse(X), y) == doctest::Approx(trace.losses.back()).epsilon(1e-12));
  }
}

TEST_CASE("train_logreg: heavy regularization gives the prior, duplicates change nothing") {
  Eigen::MatrixXd X(6, 2);
  X << 1, 0, 0, 1, 1, 1, 2, 0, 0, 2, 1, 0;
  std::vector<int> y = {1, 0, 1, 1, 0, 0};
  auto heavy = train_logreg(sparse(X), y, 1e8);
  CHECK(heavy.weights.norm() < 1e-6);
  auto p = predict_proba(heavy, sparse(X));
  for (int i = 0; i < 6; ++i) CHECK(p(i) == doctest::Approx(0.5).epsilon(1e-6));

  auto base = train_logreg(sparse(X), y, 1e-2);
  Eigen::MatrixXd X2(12, 2);
  X2 << X, X;
  std::vector<int> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  auto doubled = train_logreg(sparse(X2), y2, 1e-2);
  CHECK((doubled.weights - base.weights).norm() < 1e-6);
  CHECK(doubled.bias == doctest::Approx(base.bias).epsilon(1e-6));
}

TEST_CASE("train_logreg rejects single-class labels and predict_proba checks dimensions") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 2);
  std::vector<int> y = {1, 1, 1};
  CHECK_THROWS_AS(train_logreg(sparse(X), y), Error);
  LinearModel m;
  m.weights = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(predict_proba(m, sparse(X)), Error);
}

TEST_CASE("predict_proba basics") {
  LinearModel m;
  m.weights = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd X(2, 2);
  X << 1, 2, -3, 4;
  auto p = predict_proba(m, sparse(X));
  CHECK(p(0) == 0.5);
  CHECK(p(1) == 0.5);

  m.weights << 1.5, -0.5;
  m.bias = 0.3;
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 2);
  CHECK(predict_proba(m, sparse(zero))(0) == doctest::Approx(1.0 / (1.0 + std::exp(-0.3))));

  double last = 0;
  for (double v = 0; v < 3; v += 0.5) {
    Eigen::MatrixXd row(1, 2);
    row << v, 1;
    const double q = predict_proba(m, sparse(row))(0);
    CHECK(q > last);
    last = q;
  }

  LinearModel wide = m;
  wide.weights.conservativeResize(4);
  wide.weights.tail(2).setZero();
  Eigen::MatrixXd Xw(2, 4);
  Xw << X, Eigen::MatrixXd::Zero(2, 2);
  CHECK((predict_proba(wide, sparse(Xw)) - predict_proba(m, sparse(X))).norm() == 0.0);
}

TEST_CASE("linear checkpoints round-trip") {
  LinearModel m;
  m.weights = Eigen::Vector3d(0.1, -2.0, 1.0 / 3.0);
  m.bias = -0.7;
  m.feature_names = {"a", "b", "c"};
  auto back = linear_model_from_checkpoint(checkpoint_from_json(checkpoint_to_json(to_checkpoint(m, "lr-bow", "h"))));
  CHECK(back.weights == m.weights);
  CHECK(back.bias == m.bias);
  CHECK(back.feature_names == m.feature_names);
  CHECK_THROWS_AS(checkpoint_from_json(checkpoint_to_json(to_checkpoint(m, "lr-bow", "h")), std::string("other")), Error);
}

TEST_CASE("BiLSTM-ATT attention, masking and single-token behaviour") {
  BiLstmAttConfig cfg;
  cfg.embed_dim = 6;
  cfg.hidden_units = 5;
  BiLstmAtt model(cfg, small_vocab(20), 1);
  std::vector<int> ids = {4, 9, 7, 12, 5};
  auto w = model.attention_weights(ids);
  double total = 0;
  for (double v : w) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<int> padded = ids;
  padded.insert(padded.end(), 4, TokenVocab::kPad);
  CHECK(model.probability(padded) == model.probability(ids));

  nn::Graph g;
  std::vector<int> one = {8};
  auto f = model.forward(g, one);
  CHECK((f.user_embedding.value() - f.states.value()).norm() < 1e-12);

  std::vector<int> pads = {TokenVocab::kPad};
  CHECK_THROWS_AS(model.probability(pads), Error);
  std::vector<int> bad = {500};
  CHECK_THROWS_AS(model.probability(bad), Error);
}

TEST_CASE("BiLSTM-ATT gradients match central finite differences") {
  BiLstmAttConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden_units = 3;
  cfg.dropout = 0.0;
  BiLstmAtt model(cfg, small_vocab(12), 7);
  // larger embeddings than the +-0.05 default so the check is not trivially flat
  Rng rng(2);
  model.params().get("embedding").value = nn::uniform(16, 4, 1.0, rng);
  std::vector<int> ids = {4, 5, 6, 7, 8, 9, 10, 11, 4, 6};
  const double target = 1.0;
  auto loss = [&]() {
    nn::Graph g;
    return nn::bce_with_logits(model.forward(g, ids).logit, target).scalar();
  };
  nn::GradStore grads;
  {
    nn::Graph g;
    g.backward(nn::bce_with_logits(model.forward(g, ids).logit, target), &grads);
  }
  double worst = 0;
  for (nn::Parameter* p : model.params().all()) {
    const nn::Matrix* grad = grads.find(*p);
    REQUIRE(grad);
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const double keep = p->value(i, j);
        const double h = 1e-5;
        p->value(i, j) = keep + h;
        const double up = loss();
        p->value(i, j) = keep - h;
        const double down = loss();
        p->value(i, j) = keep;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max(1e-6, std::max(std::abs(numeric), std::abs((*grad)(i, j))));
        if (std::abs(numeric) > 1e-9 || std::abs((*grad)(i, j)) > 1e-9)
          worst = std::max(worst, std::abs(numeric - (*grad)(i, j)) / denom);
      }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("BiLSTM-ATT learns a planted token and round-trips through a checkpoint") {
  BiLstmAttConfig cfg;
  cfg.embed_dim = 8;
  cfg.hidden_units = 6;
  cfg.dropout = 0.0;
  auto vocab = small_vocab(30);
  BiLstmAtt model(cfg, vocab, 3);
  Rng data(9);
  std::vector<Example> train;
  for (int i = 0; i < 40; ++i) {
    Example ex;
    ex.label = i % 2;
    for (int k = 0; k < 12; ++k) ex.ids.push_back(6 + static_cast<int>(data.below(28)));
    ex.ids[data.below(12)] = ex.label ? 4 : 5;
    train.push_back(ex);
  }
  const double before = model.mean_loss(train);
  nn::Adam opt(nn::AdamOptions{1e-2});
  Rng rng(1);
  for (int epoch = 0; epoch < 15; ++epoch) model.train_epoch(train, 8, opt, rng, {});
  CHECK(model.mean_loss(train) < 0.5 * before);

  auto back = BiLstmAtt::from_checkpoint(checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(model.to_checkpoint()).dump())));
  CHECK(back.probability(train[0].ids) == model.probability(train[0].ids));

  auto ck = model.to_checkpoint();
  ck.vocab_hash = "deadbeef";
  CHECK_THROWS_AS(BiLstmAtt::from_checkpoint(ck), Error);
}

TEST_CASE("BiLSTM-ATT loads pretrained vectors for known tokens") {
  BiLstmAttConfig cfg;
  cfg.embed_dim = 2;
  cfg.hidden_units = 2;
  BiLstmAtt model(cfg, small_vocab(3), 1);
  const auto path = std::filesystem::temp_directory_path() / "civic_lens_vectors.txt";
  {
    std::ofstream out(path);
    out << "2 2\nw1 0.5 -0.25\nunknown 1 1\n";
  }
  CHECK(model.load_pretrained(path) == 1);
  CHECK(model.params().get("embedding").value(5, 0) == 0.5);
  {
    std::ofstream out(path);
    out << "w1 0.5 1\nw2 0.5\n";
  }
  CHECK_THROWS_AS(model.load_pretrained(path), Error);
  std::filesystem::remove(path);
}
