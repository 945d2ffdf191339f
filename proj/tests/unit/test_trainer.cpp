#include <doctest.h>

#include <cmath>
#include <sstream>

#include "civic_lens/corpus.hpp"
#include "civic_lens/trainer.hpp"

using namespace civic_lens;

namespace {

constexpr Label P = Label::Poster;
constexpr Label A = Label::ActiveCitizen;

// Two-sided tail of Student's t by Simpson integration of the density.
double t_two_sided_oracle(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const double x = std::fabs(t);
  const int n = 200000;
  const double h = x / n;
  double s = pdf(0) + pdf(x);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  const double central = s * h / 3;  // integral over [0, |t|]
  return 1 - 2 * central;
}

std::vector<NormalizedHistory> histories(const LabeledDataset& ds) {
  auto norm = normalizer_for(ds.platform);
  std::vector<NormalizedHistory> out;
  for (const auto& u : ds.users) out.push_back(concatenate_history(u, norm));
  return out;
}

RunReport report(double f1, std::string model = "m", std::string hash = "h") {
  RunReport r;
  r.model = std::move(model);
  r.config_hash = std::move(hash);
  r.metrics.f1 = f1;
  r.metrics.precision = f1;
  r.metrics.recall = f1;
  return r;
}

}  // namespace

TEST_CASE("evaluate_macro hand-derived example") {
  std::vector<Label> gold{P, P, A, A}, pred{P, A, A, A};
  auto m = evaluate_macro(pred, gold);
  // oracle: POSTER tp=1 fp=0 fn=1; ACTIVE tp=2 fp=1 fn=0
  const double f1_p = 2 * 1.0 * 0.5 / 1.5;
  const double f1_a = 2 * (2.0 / 3) * 1.0 / (2.0 / 3 + 1.0);
  CHECK(m.poster.f1 == doctest::Approx(f1_p).epsilon(1e-12));
  CHECK(m.active_citizen.f1 == doctest::Approx(f1_a).epsilon(1e-12));
  CHECK(std::fabs(m.f1 - (f1_p + f1_a) / 2) < 1e-9);
  CHECK(std::fabs(m.f1 - 0.733333333333) < 1e-9);
  CHECK(m.confusion[0][0] == 1);
  CHECK(m.confusion[0][1] == 1);
  CHECK(m.confusion[1][1] == 2);
  CHECK(m.confusion[1][0] == 0);
}

TEST_CASE("evaluate_macro trivial cases and errors") {
  std::vector<Label> gold{P, A, P, A, A};
  auto perfect = evaluate_macro(gold, gold);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  std::vector<Label> all_p(gold.size(), P);
  auto one = evaluate_macro(all_p, gold);
  CHECK(one.poster.recall == 1.0);
  CHECK(one.active_citizen.f1 == 0.0);
  CHECK(one.active_citizen.precision == 0.0);

  CHECK_THROWS_AS(evaluate_macro(std::vector<Label>{}, std::vector<Label>{}), Error);
  CHECK_THROWS_AS(evaluate_macro(std::vector<Label>{P}, std::vector<Label>{P, A}), Error);
}

TEST_CASE("evaluate_macro relabeling symmetry") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    std::vector<Label> g, p, gs, ps;
    for (std::size_t i = 0; i < n; ++i) {
      g.push_back(rng.bernoulli(0.5) ? P : A);
      p.push_back(rng.bernoulli(0.5) ? P : A);
      gs.push_back(g.back() == P ? A : P);
      ps.push_back(p.back() == P ? A : P);
    }
    auto a = evaluate_macro(p, g);
    auto b = evaluate_macro(ps, gs);
    CHECK(a.f1 == doctest::Approx(b.f1).epsilon(1e-12));
    CHECK(a.precision == doctest::Approx(b.precision).epsilon(1e-12));
    CHECK(a.recall == doctest::Approx(b.recall).epsilon(1e-12));
  }
}

namespace {

struct Replay {
  std::vector<double> losses;
  std::vector<int> saved;
  int restored = 0;
  int current = 0;

  EarlyStoppingResult run(int max_epochs, int patience) {
    return run_early_stopping(
        max_epochs, patience, [&](int e) { current = e; return 1.0; },
        [&] { return losses.at(static_cast<std::size_t>(current - 1)); }, [&] { saved.push_back(current); },
        [&] { restored = saved.empty() ? 0 : saved.back(); });
  }
};

}  // namespace

TEST_CASE("early stopping: patience 2 after a rise") {
  Replay r{{0.7, 0.6, 0.65, 0.66, 0.5, 0.4}};
  auto res = r.run(10, 2);
  CHECK(res.curve.size() == 4);
  CHECK(res.best_epoch == 2);
  CHECK(r.restored == 2);
  CHECK(res.best_valid_loss == 0.6);
  CHECK(res.stopped_early);
}

TEST_CASE("early stopping: monotone losses run to max_epochs") {
  Replay r{{0.9, 0.8, 0.7, 0.6, 0.5}};
  auto res = r.run(5, 3);
  CHECK(res.curve.size() == 5);
  CHECK(res.best_epoch == 5);
  CHECK(r.restored == 5);
  CHECK_FALSE(res.stopped_early);
}

TEST_CASE("early stopping: patience 0 stops at first non-improvement") {
  Replay r{{0.5, 0.4, 0.4, 0.3}};
  auto res = r.run(4, 0);
  CHECK(res.curve.size() == 3);
  CHECK(res.best_epoch == 2);
}

TEST_CASE("early stopping never keeps a worse checkpoint") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Replay r;
    for (int i = 0; i < 12; ++i) r.losses.push_back(rng.uniform());
    auto res = r.run(12, static_cast<int>(rng.below(4)));
    for (const auto& e : res.curve) CHECK(res.best_valid_loss <= e.valid_loss);
    CHECK(r.losses[static_cast<std::size_t>(r.restored - 1)] == res.best_valid_loss);
  }
}

TEST_CASE("early stopping rejects non-finite losses") {
  Replay r{{0.5, std::nan("")}};
  CHECK_THROWS_AS(r.run(4, 2), Error);
}

TEST_CASE("aggregate_runs") {
  auto same = aggregate_runs({report(0.8), report(0.8), report(0.8)});
  CHECK(same.f1.mean == doctest::Approx(0.8));
  CHECK(same.f1.std == doctest::Approx(0.0));

  auto two = aggregate_runs({report(0.7), report(0.9)});
  CHECK(std::fabs(two.f1.mean - 0.8) < 1e-12);
  CHECK(two.f1.std == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(two.runs.size() == 2);

  CHECK_THROWS_AS(aggregate_runs({report(0.7)}), Error);
  CHECK_THROWS_AS(aggregate_runs({report(0.7), report(0.8, "m", "other")}), Error);
  CHECK_THROWS_AS(aggregate_runs({report(0.7), report(0.8, "other")}), Error);

  auto j = two.to_json();
  CHECK(j["f1"]["mean"].get<double>() == doctest::Approx(0.8));
  CHECK(RunReport::from_json(two.runs[1].to_json()).metrics.f1 == 0.9);
}

TEST_CASE("significance_test against an integrated t density") {
  std::vector<double> a{0.70, 0.71, 0.72}, b{0.90, 0.91, 0.92};
  auto r = significance_test(a, b);
  // Welch by hand: both sample variances 1e-4, n = 3
  const double se = std::sqrt(1e-4 / 3 + 1e-4 / 3);
  const double t = (0.71 - 0.91) / se;
  const double df = std::pow(2e-4 / 3, 2) / (2 * std::pow(1e-4 / 3, 2) / 2);
  CHECK(r.t == doctest::Approx(t).epsilon(1e-9));
  CHECK(r.df == doctest::Approx(df).epsilon(1e-9));
  CHECK(r.p == doctest::Approx(t_two_sided_oracle(t, df)).epsilon(1e-6));
  CHECK(r.p < 0.05);
  CHECK(r.small_sample);

  auto s = significance_test(b, a);
  CHECK(s.t == doctest::Approx(-r.t));
  CHECK(s.p == doctest::Approx(r.p));

  std::vector<double> c{0.6, 0.75, 0.7, 0.9, 0.66}, d{0.7, 0.72, 0.81, 0.69, 0.8, 0.77};
  auto u = significance_test(c, d);
  CHECK(u.p == doctest::Approx(t_two_sided_oracle(u.t, u.df)).epsilon(1e-6));
  CHECK_FALSE(u.small_sample);
}

TEST_CASE("significance_test degenerate inputs") {
  std::vector<double> a{0.8, 0.8, 0.8};
  auto same = significance_test(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);
  std::vector<double> b{0.7, 0.72, 0.74};
  auto ident = significance_test(b, b);
  CHECK(ident.t == 0.0);
  CHECK(ident.p == doctest::Approx(1.0));
  std::vector<double> c{0.9, 0.9, 0.9};
  CHECK(significance_test(a, c).p == 0.0);
  CHECK_THROWS_AS(significance_test(std::vector<double>{0.5}, a), Error);
}

TEST_CASE("model kinds and config round trip") {
  for (auto k : {ModelKind::LrBow, ModelKind::LrLexicon, ModelKind::BiLstmAtt, ModelKind::Hier, ModelKind::HierTruncated})
    CHECK(parse_model_kind(to_string(k)) == k);
  CHECK(parse_model_kind("LR_BOW") == ModelKind::LrBow);
  CHECK_THROWS_AS(parse_model_kind("svm"), Error);

  TrainConfig c;
  c.kind = ModelKind::Hier;
  c.hier.fusion = FusionKind::MeanPool;
  c.patience = 2;
  c.vocabulary.max_df_ratio = 0.3;
  auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());

  TrainConfig bad;
  bad.patience = bad.max_epochs;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.seeds.clear();
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.hier_mode = "partial";
  CHECK_THROWS_AS(bad.validate(), Error);
}

namespace {

struct Data {
  std::vector<NormalizedHistory> train, valid, test;
};

Data small_corpus(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_users = 40;
  spec.posts_per_user = 12;
  spec.tokens_per_post = 6;
  spec.noise_vocab_size = 200;
  spec.p_plant = 0.5;
  spec.seed = seed;
  spec.planted = {{P, {"alpha", "beta"}}, {A, {"gamma", "delta"}}};
  auto split = split_dataset(generate_synthetic(spec), {0.7, 0.1, 0.2, seed});
  return {histories(split.train), histories(split.valid), histories(split.test)};
}

TrainConfig small_config(ModelKind kind) {
  TrainConfig c;
  c.kind = kind;
  c.max_epochs = 4;
  c.patience = 2;
  c.head_max_epochs = 6;
  c.batch_size = 8;
  c.vocabulary.min_count = 1;
  c.vocabulary.max_df_ratio = 1.0;
  c.bilstm.embed_dim = 8;
  c.bilstm.hidden_units = 6;
  c.bilstm.dropout = 0.2;
  c.hier.encoder.embed_dim = 8;
  c.hier.encoder.content_capacity = 16;
  c.hier.encoder.max_positions = 18;
  return c;
}

}  // namespace

TEST_CASE("identical seeds give bitwise-identical checkpoints") {
  const auto d = small_corpus(3);
  for (auto kind : {ModelKind::LrBow, ModelKind::LrLexicon, ModelKind::BiLstmAtt, ModelKind::Hier}) {
    CAPTURE(to_string(kind));
    auto cfg = small_config(kind);
    auto a = train_model(cfg, d.train, d.valid, 7);
    auto b = train_model(cfg, d.train, d.valid, 7);
    CHECK(checkpoint_to_json(a.model->checkpoint()).dump() == checkpoint_to_json(b.model->checkpoint()).dump());
    CHECK(a.curve.size() == b.curve.size());
    if (kind == ModelKind::BiLstmAtt) {
      auto c = train_model(cfg, d.train, d.valid, 8);
      CHECK(checkpoint_to_json(a.model->checkpoint()).dump() != checkpoint_to_json(c.model->checkpoint()).dump());
    }
  }
}

TEST_CASE("trained models round trip through checkpoints") {
  const auto d = small_corpus(4);
  for (auto kind : {ModelKind::LrBow, ModelKind::LrLexicon, ModelKind::BiLstmAtt, ModelKind::Hier,
                    ModelKind::HierTruncated}) {
    CAPTURE(to_string(kind));
    auto out = train_model(small_config(kind), d.train, d.valid, 1);
    CHECK(out.model->kind() == std::string(to_string(kind)));
    auto ckpt = checkpoint_from_json(checkpoint_to_json(out.model->checkpoint()));
    auto loaded = load_trained_model(ckpt);
    const auto pa = out.model->predict_proba(d.test);
    const auto pb = loaded->predict_proba(d.test);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    CHECK((loaded->differentiable() != nullptr) == (kind != ModelKind::LrBow && kind != ModelKind::LrLexicon));
    CHECK(out.best_epoch >= 1);
    CHECK(out.best_epoch <= static_cast<int>(out.curve.size()));
  }
}

TEST_CASE("LR-BOW recovers a planted signal") {
  const auto d = small_corpus(5);
  auto out = train_model(small_config(ModelKind::LrBow), d.train, d.valid, 1);
  auto m = evaluate_macro(predict_labels(*out.model, d.test), gold_labels(d.test));
  CHECK(m.f1 >= 0.95);
}

TEST_CASE("frozen hierarchical training concatenates both stage curves") {
  const auto d = small_corpus(6);
  auto out = train_model(small_config(ModelKind::Hier), d.train, d.valid, 2);
  const auto s1 = out.meta["stage1_epochs"].get<int>();
  const auto s2 = out.meta["stage2_epochs"].get<int>();
  CHECK(static_cast<int>(out.curve.size()) == s1 + s2);
  for (std::size_t i = 0; i < out.curve.size(); ++i) CHECK(out.curve[i].epoch == static_cast<int>(i) + 1);
  CHECK(out.best_epoch > s1);
  std::ostringstream csv;
  write_curves_csv(out.curve, csv);
  CHECK(csv.str().rfind("epoch,train_loss,valid_loss\n", 0) == 0);
}

TEST_CASE("training rejects single-class data") {
  auto d = small_corpus(7);
  std::vector<NormalizedHistory> one;
  for (const auto& h : d.train)
    if (h.label == P) one.push_back(h);
  try {
    train_model(small_config(ModelKind::LrBow), one, d.valid, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == "single_class");
  }
}
