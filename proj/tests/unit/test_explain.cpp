#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "civic_lens/explain.hpp"
#include "civic_lens/hiernet.hpp"
#include "civic_lens/trainer.hpp"

using namespace civic_lens;

namespace {

// logit = sum_i w_i * x_i over scalar embeddings x_i of each position.
class LinearScorer : public DifferentiableTextModel {
 public:
  LinearScorer(std::vector<double> w, std::vector<double> x) : w_(std::move(w)), x_(std::move(x)) {}
  const TokenVocab& vocab() const override { return vocab_; }
  InputGradient logit_input_gradient(const std::vector<std::string>& tokens) const override {
    InputGradient ig;
    ig.embeddings.resize(static_cast<Eigen::Index>(tokens.size()), 1);
    ig.gradients.resize(static_cast<Eigen::Index>(tokens.size()), 1);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      ig.positions.push_back(i);
      ig.embeddings(static_cast<Eigen::Index>(i), 0) = x_[i];
      ig.gradients(static_cast<Eigen::Index>(i), 0) = w_[i];
      ig.logit += w_[i] * x_[i];
    }
    return ig;
  }

 private:
  std::vector<double> w_, x_;
  TokenVocab vocab_;
};

std::vector<std::string> words(std::size_t n) {
  std::vector<std::string> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back("w" + std::to_string(i));
  return t;
}

}  // namespace

TEST_CASE("linear scorer oracle") {
  LinearScorer m({2, -3}, {1, 1});
  auto raw = input_x_grad(m, {"a", "b"}, AttributionTarget::PosterLogit);
  CHECK(raw.values(0, 0) == 2.0);
  CHECK(raw.values(1, 0) == -3.0);
  auto scores = l2_aggregate(raw.values);
  CHECK(scores[0] == 2.0);
  CHECK(scores[1] == 3.0);

  // logit -1: ACTIVE_CITIZEN predicted, its score is -z, flipping the signs
  auto pred = input_x_grad(m, {"a", "b"});
  CHECK(pred.predicted_class == Label::ActiveCitizen);
  CHECK(pred.values(0, 0) == -2.0);
  CHECK(pred.values(1, 0) == 3.0);
  CHECK(l2_aggregate(pred.values) == scores);

  auto attr = explain_tokens(m, {"a", "b"});
  auto top = rank_tokens(attr, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].first == "b");
}

TEST_CASE("ranking follows |w x| on random linear scorers") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<double> w, x;
    for (std::size_t i = 0; i < n; ++i) {
      w.push_back(rng.normal());
      x.push_back(rng.normal());
    }
    LinearScorer m(w, x);
    auto attr = explain_tokens(m, words(n));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::fabs(w[a] * x[a]) > std::fabs(w[b] * x[b]); });
    auto ranked = rank_tokens(attr, n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(ranked[i].first == "w" + std::to_string(order[i]));
      CHECK(ranked[i].second == std::fabs(w[order[i]] * x[order[i]]));
    }
  }
}

TEST_CASE("zero embeddings and constant models give zero attribution") {
  LinearScorer zero_row({1, 5, 2}, {1, 0, 1});
  auto raw = input_x_grad(zero_row, words(3));
  CHECK(raw.values(1, 0) == 0.0);
  LinearScorer constant({0, 0, 0}, {1, 2, 3});
  CHECK(input_x_grad(constant, words(3)).values.isZero());
  CHECK_THROWS_AS(input_x_grad(constant, {}), Error);
}

TEST_CASE("l2_aggregate") {
  nn::Matrix m(3, 2);
  m << 3, 4, 0, 0, -3, -4;
  auto s = l2_aggregate(m);
  CHECK(s[0] == 5.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 5.0);
}

TEST_CASE("merge_subwords") {
  std::vector<double> sc{0.2, 0.3};
  auto merged = merge_subwords({"hash", "##tag"}, sc);
  REQUIRE(merged.tokens.size() == 1);
  CHECK(merged.tokens[0] == "hashtag");
  CHECK(merged.scores[0] == doctest::Approx(0.5));

  std::vector<double> ident{1, 2, 3};
  auto same = merge_subwords({"a", "b", "c"}, ident);
  CHECK(same.tokens == std::vector<std::string>{"a", "b", "c"});
  CHECK(same.scores == ident);
  CHECK(same.orphan_pieces.empty());

  std::vector<double> lead{0.4, 0.1, 0.2};
  auto orphan = merge_subwords({"##ing", "walk", "##ed"}, lead);
  CHECK(orphan.tokens == std::vector<std::string>{"##ing", "walked"});
  CHECK(orphan.orphan_pieces == std::vector<std::size_t>{0});

  std::vector<double> three{0.1, 0.5, 0.3};
  CHECK(merge_subwords({"a", "##b", "##c"}, three, MergeRule::Max).scores[0] == 0.5);
  CHECK(merge_subwords({"a", "##b", "##c"}, three, MergeRule::Mean).scores[0] == doctest::Approx(0.3));
  CHECK(parse_merge_rule("mean") == MergeRule::Mean);
  CHECK_THROWS_AS(parse_merge_rule("median"), Error);
}

TEST_CASE("merge_subwords conserves total score") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> t;
    std::vector<double> s;
    const std::size_t n = 1 + rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      t.push_back(rng.bernoulli(0.4) ? "##p" : "w");
      s.push_back(rng.uniform());
    }
    auto m = merge_subwords(t, s);
    CHECK(std::accumulate(m.scores.begin(), m.scores.end(), 0.0) ==
          doctest::Approx(std::accumulate(s.begin(), s.end(), 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("rank_tokens ties and bounds") {
  Attribution a;
  a.tokens = {"x", "y", "z"};
  a.scores = {1.0, 2.0, 1.0};
  auto all = rank_tokens(a, 10);
  REQUIRE(all.size() == 3);
  CHECK(all[0].first == "y");
  CHECK(all[1].first == "x");
  CHECK(all[2].first == "z");
  CHECK_THROWS_AS(rank_tokens(a, 0), Error);
}

TEST_CASE("input_x_grad on the tiny encoder matches finite differences") {
  HierConfig c;
  c.encoder.embed_dim = 8;
  c.encoder.content_capacity = 8;
  c.encoder.max_positions = 10;
  c.encoder.dropout = 0.0;
  c.fusion = FusionKind::LstmAttention;
  HierModel m(c, TokenVocab(words(8)), 4);
  const auto tokens = words(8);
  const auto ids = m.vocab().encode(tokens);
  auto raw = input_x_grad(m, tokens, AttributionTarget::PosterLogit);
  auto ig = m.logit_input_gradient(tokens);

  // each token occurs once, so its embedding-table row stands in for the input row
  auto& table = m.params().get("encoder.token_embedding").value;
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (Eigen::Index d = 0; d < 8; ++d) {
      double& v = table(ids[i], d);
      const double orig = v;
      v = orig + h;
      const double up = m.logit(ids);
      v = orig - h;
      const double down = m.logit(ids);
      v = orig;
      const double fd = (up - down) / (2 * h);
      const double an = ig.gradients(static_cast<Eigen::Index>(i), d);
      worst = std::max(worst, std::fabs(fd - an) / std::max(1e-6, std::fabs(fd) + std::fabs(an)));
      CHECK(raw.values(static_cast<Eigen::Index>(i), d) == doctest::Approx(orig * an).epsilon(1e-12));
    }
  CHECK(worst < 1e-3);
}

TEST_CASE("importance summary and exports") {
  Attribution a, b;
  a.tokens = {"x", "y"};
  a.scores = {1.0, 3.0};
  b.tokens = {"y", "z"};
  b.scores = {1.0, 0.5};
  b.predicted_class = Label::Poster;
  auto rows = summarize_importance({a, b}, 2);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].token == "y");
  CHECK(rows[0].support == 2);
  CHECK(rows[0].mean_score == 2.0);
  std::ostringstream csv;
  write_importance_csv(rows, csv);
  CHECK(csv.str().rfind("class,token,mean_score,support\nposter,y,2,2\n", 0) == 0);

  auto j = attribution_to_json(a, "u1");
  CHECK(j["user_id"] == "u1");
  CHECK(j["tokens"].size() == j["scores"].size());
}

TEST_CASE("linear models are rejected for attribution") {
  class Flat : public TrainedModel {
   public:
    std::string kind() const override { return "lr-bow"; }
    std::vector<double> predict_proba(std::span<const NormalizedHistory>) const override { return {}; }
    Checkpoint checkpoint() const override { return {}; }
  } flat;
  try {
    differentiable_or_throw(flat);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == "not_differentiable");
  }
}
