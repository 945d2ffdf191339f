#include "civic_lens/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <boost/math/distributions/students_t.hpp>

#include "civic_lens/common.hpp"

namespace civic_lens {

using nlohmann::json;

// ------------------------------------------------------------------- metrics

namespace {

int label_index(Label l) { return l == Label::Poster ? 0 : 1; }

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics class_metrics(const std::array<std::array<std::int64_t, 2>, 2>& c, int k) {
  const int o = 1 - k;
  ClassMetrics m;
  const std::int64_t tp = c[k][k], fp = c[o][k], fn = c[k][o];
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = (m.precision + m.recall) == 0 ? 0.0 : 2 * m.precision * m.recall / (m.precision + m.recall);
  m.support = tp + fn;
  return m;
}

json class_json(const ClassMetrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
}

ClassMetrics class_from_json(const json& j) {
  ClassMetrics m;
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.support = j.at("support").get<std::int64_t>();
  return m;
}

}  // namespace

json MacroMetrics::to_json() const {
  return {{"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"poster", class_json(poster)},
          {"active_citizen", class_json(active_citizen)},
          {"confusion", confusion}};
}

MacroMetrics evaluate_macro(std::span<const Label> predictions, std::span<const Label> gold) {
  if (predictions.size() != gold.size())
    throw Error("prediction count " + std::to_string(predictions.size()) + " differs from gold count " +
                    std::to_string(gold.size()),
                "input");
  if (gold.empty()) throw Error("cannot evaluate an empty prediction set", "input");
  MacroMetrics m;
  for (std::size_t i = 0; i < gold.size(); ++i) ++m.confusion[label_index(gold[i])][label_index(predictions[i])];
  m.poster = class_metrics(m.confusion, 0);
  m.active_citizen = class_metrics(m.confusion, 1);
  m.precision = (m.poster.precision + m.active_citizen.precision) / 2;
  m.recall = (m.poster.recall + m.active_citizen.recall) / 2;
  m.f1 = (m.poster.f1 + m.active_citizen.f1) / 2;
  return m;
}

// ------------------------------------------------------------ early stopping

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
  if (patience < 0) throw Error("patience must be non-negative", "config");
}

bool EarlyStopper::update(double valid_loss) {
  if (!std::isfinite(valid_loss)) throw Error("non-finite validation loss", "numeric");
  ++epochs_;
  if (best_epoch_ == 0 || valid_loss < best_) {
    best_ = valid_loss;
    best_epoch_ = epochs_;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

EarlyStoppingResult run_early_stopping(int max_epochs, int patience, const std::function<double(int)>& train_epoch,
                                       const std::function<double()>& valid_loss, const std::function<void()>& save_best,
                                       const std::function<void()>& restore_best) {
  if (max_epochs < 1) throw Error("max_epochs must be at least 1", "config");
  EarlyStopper stopper(patience);
  EarlyStoppingResult r;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    const double train = train_epoch(epoch);
    if (!std::isfinite(train)) throw Error("non-finite training loss", "numeric");
    const double valid = valid_loss();
    if (stopper.update(valid) && save_best) save_best();
    r.curve.push_back({epoch, train, valid});
    if (stopper.should_stop()) {
      r.stopped_early = epoch < max_epochs;
      break;
    }
  }
  if (restore_best) restore_best();
  r.best_epoch = stopper.best_epoch();
  r.best_valid_loss = stopper.best_loss();
  return r;
}

// --------------------------------------------------------------- aggregation

json RunReport::to_json() const {
  return {{"model", model},
          {"config_hash", config_hash},
          {"seed", seed},
          {"metrics", metrics.to_json()},
          {"wall_seconds", wall_seconds}};
}

RunReport RunReport::from_json(const json& j) {
  try {
    RunReport r;
    r.model = j.at("model").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& m = j.at("metrics");
    r.metrics.precision = m.at("precision").get<double>();
    r.metrics.recall = m.at("recall").get<double>();
    r.metrics.f1 = m.at("f1").get<double>();
    r.metrics.poster = class_from_json(m.at("poster"));
    r.metrics.active_citizen = class_from_json(m.at("active_citizen"));
    r.metrics.confusion = m.at("confusion").get<std::array<std::array<std::int64_t, 2>, 2>>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed run report: ") + e.what(), "parse");
  }
}

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double ss = 0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

}  // namespace

json AggregateReport::to_json() const {
  json rs = json::array();
  for (const auto& r : runs) rs.push_back(r.to_json());
  return {{"model", model},
          {"config_hash", config_hash},
          {"n_runs", runs.size()},
          {"precision", mean_std_json(precision)},
          {"recall", mean_std_json(recall)},
          {"f1", mean_std_json(f1)},
          {"runs", rs}};
}

AggregateReport aggregate_runs(const std::vector<RunReport>& runs) {
  if (runs.size() < 2) throw Error("aggregation needs at least two runs, got " + std::to_string(runs.size()), "input");
  AggregateReport a;
  a.model = runs.front().model;
  a.config_hash = runs.front().config_hash;
  std::vector<double> p, r, f;
  for (const auto& run : runs) {
    if (run.model != a.model || run.config_hash != a.config_hash)
      throw Error("cannot aggregate runs of different models or configurations", "input");
    p.push_back(run.metrics.precision);
    r.push_back(run.metrics.recall);
    f.push_back(run.metrics.f1);
  }
  a.runs = runs;
  a.precision = mean_std(p);
  a.recall = mean_std(r);
  a.f1 = mean_std(f);
  return a;
}

TTestResult significance_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw Error("Welch test needs at least two values per side", "input");
  auto moments = [](std::span<const double> xs) {
    // shifted by the first value so constant lists give exactly zero variance
    double shift = 0;
    for (double x : xs) shift += x - xs[0];
    shift /= static_cast<double>(xs.size());
    double ss = 0;
    for (double x : xs) ss += (x - xs[0] - shift) * (x - xs[0] - shift);
    return std::pair{xs[0] + shift, ss / static_cast<double>(xs.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  TTestResult r;
  r.small_sample = a.size() < 5 || b.size() < 5;
  if (sa + sb == 0) {
    r.df = na + nb - 2;
    if (ma == mb) {
      r.t = 0;
      r.p = 1;
    } else {
      r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0;
    }
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1) + sb * sb / (nb - 1));
  boost::math::students_t_distribution<double> dist(r.df);
  r.p = std::min(1.0, 2 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
  return r;
}

// ------------------------------------------------------------------ training

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::LrBow: return "lr-bow";
    case ModelKind::LrLexicon: return "lr-lexicon";
    case ModelKind::BiLstmAtt: return "bilstm-att";
    case ModelKind::Hier: return "hier";
    case ModelKind::HierTruncated: return "hier-truncated";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return c == '_' ? '-' : std::tolower(c); });
  for (auto k : {ModelKind::LrBow, ModelKind::LrLexicon, ModelKind::BiLstmAtt, ModelKind::Hier, ModelKind::HierTruncated})
    if (to_string(k) == t) return k;
  throw Error("unknown model kind '" + std::string(text) + "'", "config");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(m, "config"); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (max_epochs < 1) fail("max_epochs must be at least 1");
  if (head_max_epochs < 1) fail("head_max_epochs must be at least 1");
  if (patience < 0) fail("patience must be non-negative");
  if (patience >= max_epochs) fail("patience must be smaller than max_epochs");
  if (seeds.empty()) fail("at least one seed is required");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) fail("warmup_fraction must lie in [0, 1)");
  if (!(alpha > 0)) fail("alpha must be positive");
  if (!(learning_rate > 0) || !(head_learning_rate > 0) || !(bilstm_learning_rate > 0))
    fail("learning rates must be positive");
  if (weight_decay < 0) fail("weight_decay must be non-negative");
  if (hier_mode != "frozen" && hier_mode != "joint") fail("hier_mode must be 'frozen' or 'joint'");
  if (stage1_chunks != "all" && stage1_chunks != "head") fail("stage1_chunks must be 'all' or 'head'");
  if (vocabulary.ngram_max < 1) fail("ngram_max must be at least 1");
  if (!(vocabulary.max_df_ratio > 0 && vocabulary.max_df_ratio <= 1)) fail("max_df_ratio must lie in (0, 1]");
  if (bilstm.embed_dim < 1 || bilstm.hidden_units < 1) fail("BiLSTM sizes must be positive");
  if (!(bilstm.dropout >= 0 && bilstm.dropout < 1)) fail("BiLSTM dropout must lie in [0, 1)");
  hier.encoder.validate();
}

json TrainConfig::to_json() const {
  return {{"model", to_string(kind)},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seeds", seeds},
          {"warmup_fraction", warmup_fraction},
          {"weight_decay", weight_decay},
          {"alpha", alpha},
          {"vocabulary",
           {{"ngram_max", vocabulary.ngram_max},
            {"min_count", vocabulary.min_count},
            {"min_count_mode", vocabulary.min_count_mode == CountMode::Corpus ? "corpus" : "document"},
            {"max_df_ratio", vocabulary.max_df_ratio},
            {"max_size", vocabulary.max_size}}},
          {"lexicon_path", lexicon_path},
          {"bilstm", bilstm.to_json()},
          {"bilstm_learning_rate", bilstm_learning_rate},
          {"hier", hier.to_json()},
          {"hier_mode", hier_mode},
          {"learning_rate", learning_rate},
          {"head_learning_rate", head_learning_rate},
          {"head_max_epochs", head_max_epochs},
          {"stage1_chunks", stage1_chunks},
          {"token_vocab_size", token_vocab_size}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  try {
    TrainConfig c;
    if (j.contains("model")) c.kind = parse_model_kind(j.at("model").get<std::string>());
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seeds = j.value("seeds", c.seeds);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.alpha = j.value("alpha", c.alpha);
    if (j.contains("vocabulary")) {
      const auto& v = j.at("vocabulary");
      c.vocabulary.ngram_max = v.value("ngram_max", c.vocabulary.ngram_max);
      c.vocabulary.min_count = v.value("min_count", c.vocabulary.min_count);
      const auto mode = v.value("min_count_mode", std::string("corpus"));
      if (mode != "corpus" && mode != "document") throw Error("min_count_mode must be corpus or document", "config");
      c.vocabulary.min_count_mode = mode == "corpus" ? CountMode::Corpus : CountMode::Document;
      c.vocabulary.max_df_ratio = v.value("max_df_ratio", c.vocabulary.max_df_ratio);
      c.vocabulary.max_size = v.value("max_size", c.vocabulary.max_size);
    }
    c.lexicon_path = j.value("lexicon_path", c.lexicon_path);
    if (j.contains("bilstm")) c.bilstm = BiLstmAttConfig::from_json(j.at("bilstm"));
    c.bilstm_learning_rate = j.value("bilstm_learning_rate", c.bilstm_learning_rate);
    if (j.contains("hier")) c.hier = HierConfig::from_json(j.at("hier"));
    c.hier_mode = j.value("hier_mode", c.hier_mode);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.head_learning_rate = j.value("head_learning_rate", c.head_learning_rate);
    c.head_max_epochs = j.value("head_max_epochs", c.head_max_epochs);
    c.stage1_chunks = j.value("stage1_chunks", c.stage1_chunks);
    c.token_vocab_size = j.value("token_vocab_size", c.token_vocab_size);
    return c;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed training config: ") + e.what(), "config");
  }
}

// ------------------------------------------------------------ trained models

namespace {

json vocabulary_json(const Vocabulary& v) {
  return {{"terms", v.terms()},
          {"doc_freq", v.doc_freq()},
          {"total_freq", v.total_freq()},
          {"n_docs", v.n_docs()},
          {"ngram_max", v.ngram_max()}};
}

Vocabulary vocabulary_from_json(const json& j) {
  return Vocabulary(j.at("terms").get<std::vector<std::string>>(), j.at("doc_freq").get<std::vector<std::int64_t>>(),
                    j.at("total_freq").get<std::vector<std::int64_t>>(), j.at("n_docs").get<std::size_t>(),
                    j.at("ngram_max").get<int>());
}

std::string lexicon_hash(const Lexicon& lex) {
  return hex64(fnv1a64(json({{"categories", lex.categories()}}).dump()));
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

class BowModel : public TrainedModel {
 public:
  BowModel(Vocabulary vocab, LinearModel lm) : vocab_(std::move(vocab)), lm_(std::move(lm)) {}
  std::string kind() const override { return "lr-bow"; }
  std::vector<double> predict_proba(std::span<const NormalizedHistory> h) const override {
    return to_vector(civic_lens::predict_proba(lm_, tfidf_vectorize(h, vocab_)));
  }
  Checkpoint checkpoint() const override {
    auto c = to_checkpoint(lm_, kind(), hex64(vocab_.hash()));
    c.vocab = vocabulary_json(vocab_);
    return c;
  }

 private:
  Vocabulary vocab_;
  LinearModel lm_;
};

class LexiconModel : public TrainedModel {
 public:
  LexiconModel(Lexicon lex, LinearModel lm) : lex_(std::move(lex)), lm_(std::move(lm)) {}
  std::string kind() const override { return "lr-lexicon"; }
  std::vector<double> predict_proba(std::span<const NormalizedHistory> h) const override {
    return to_vector(civic_lens::predict_proba(lm_, lexicon_vectorize(h, lex_)));
  }
  Checkpoint checkpoint() const override {
    auto c = to_checkpoint(lm_, kind(), lexicon_hash(lex_));
    c.vocab = {{"categories", lex_.categories()}};
    return c;
  }

 private:
  Lexicon lex_;
  LinearModel lm_;
};

class BiLstmModel : public TrainedModel {
 public:
  explicit BiLstmModel(std::unique_ptr<BiLstmAtt> m) : m_(std::move(m)) {}
  std::string kind() const override { return "bilstm-att"; }
  std::vector<double> predict_proba(std::span<const NormalizedHistory> h) const override {
    std::vector<double> out;
    for (const auto& u : h) {
      const auto ids = m_->prepare(m_->vocab().encode(u.tokens));
      out.push_back(ids.empty() ? 0.5 : m_->probability(ids));
    }
    return out;
  }
  Checkpoint checkpoint() const override { return m_->to_checkpoint(); }
  const DifferentiableTextModel* differentiable() const override { return m_.get(); }

 private:
  std::unique_ptr<BiLstmAtt> m_;
};

class HierTrained : public TrainedModel {
 public:
  explicit HierTrained(std::unique_ptr<HierModel> m) : m_(std::move(m)) {}
  std::string kind() const override { return m_->config().truncated ? "hier-truncated" : "hier"; }
  std::vector<double> predict_proba(std::span<const NormalizedHistory> h) const override {
    std::vector<double> out;
    for (const auto& u : h) out.push_back(m_->probability(m_->vocab().encode(u.tokens)));
    return out;
  }
  Checkpoint checkpoint() const override { return m_->to_checkpoint(); }
  const DifferentiableTextModel* differentiable() const override { return m_.get(); }

 private:
  std::unique_ptr<HierModel> m_;
};

std::vector<int> int_labels(std::span<const NormalizedHistory> h) {
  std::vector<int> y;
  for (const auto& u : h) y.push_back(label_to_int(u.label));
  return y;
}

// Counts optimizer steps and turns them into a warmup/decay multiplier.
struct Schedule {
  std::int64_t step = 0, warmup = 0, total = 1;
  Schedule(std::size_t n_items, std::size_t batch, int epochs, double warmup_fraction) {
    const auto per_epoch = static_cast<std::int64_t>((n_items + batch - 1) / batch);
    total = std::max<std::int64_t>(1, per_epoch * epochs);
    warmup = static_cast<std::int64_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  }
  std::function<double()> fn() {
    return [this] { return nn::linear_schedule(step++, warmup, total); };
  }
};

void require_both_classes(std::span<const NormalizedHistory> train) {
  bool pos = false, neg = false;
  for (const auto& u : train) (u.label == Label::Poster ? pos : neg) = true;
  if (!pos || !neg) throw Error("training data contains a single class", "single_class");
}

TrainOutcome train_linear(const TrainConfig& cfg, std::span<const NormalizedHistory> train,
                          std::span<const NormalizedHistory> valid) {
  TrainOutcome out;
  const auto y = int_labels(train);
  const auto yv = int_labels(valid);
  LogRegTrace trace;
  auto record = [&](const LinearModel& lm, const FeatureMatrix& X, const FeatureMatrix& V) {
    EpochRecord r{1, logreg_logloss(lm, X.values, y), valid.empty() ? 0.0 : logreg_logloss(lm, V.values, yv)};
    out.curve.push_back(r);
    out.best_epoch = 1;
    out.meta["lbfgs_iterations"] = trace.iterations;
    out.meta["converged"] = trace.converged;
  };
  if (cfg.kind == ModelKind::LrBow) {
    auto vocab = build_vocabulary(train, cfg.vocabulary);
    if (vocab.size() == 0) throw Error("bag-of-words vocabulary is empty", "input");
    auto X = tfidf_vectorize(train, vocab);
    auto lm = train_logreg(X, y, cfg.alpha, {}, &trace);
    record(lm, X, tfidf_vectorize(valid, vocab));
    out.meta["vocabulary_size"] = vocab.size();
    out.model = std::make_unique<BowModel>(std::move(vocab), std::move(lm));
  } else {
    auto lex = cfg.lexicon_path.empty() ? Lexicon::bundled() : Lexicon::load(cfg.lexicon_path);
    auto X = lexicon_vectorize(train, lex);
    auto lm = train_logreg(X, y, cfg.alpha, {}, &trace);
    record(lm, X, lexicon_vectorize(valid, lex));
    out.model = std::make_unique<LexiconModel>(std::move(lex), std::move(lm));
  }
  return out;
}

TrainOutcome train_bilstm(const TrainConfig& cfg, std::span<const NormalizedHistory> train,
                          std::span<const NormalizedHistory> valid, std::uint64_t seed) {
  auto vocab = TokenVocab::build(train, cfg.token_vocab_size);
  auto model = std::make_unique<BiLstmAtt>(cfg.bilstm, std::move(vocab), seed);
  auto examples = [&](std::span<const NormalizedHistory> h) {
    std::vector<Example> ex;
    for (const auto& u : h) {
      auto ids = model->prepare(model->vocab().encode(u.tokens));
      if (!ids.empty()) ex.push_back({std::move(ids), label_to_int(u.label)});
    }
    return ex;
  };
  auto tr = examples(train);
  const auto va = examples(valid);
  Rng rng(seed ^ 0x5bd1e995ULL);
  nn::Adam adam({.learning_rate = cfg.bilstm_learning_rate, .weight_decay = cfg.weight_decay});
  Schedule sched(tr.size(), cfg.batch_size, cfg.max_epochs, cfg.warmup_fraction);
  std::vector<nn::Matrix> best;
  auto res = run_early_stopping(
      cfg.max_epochs, cfg.patience,
      [&](int) {
        rng.shuffle(tr);
        return model->train_epoch(tr, cfg.batch_size, adam, rng, sched.fn());
      },
      [&] { return va.empty() ? model->mean_loss(tr) : model->mean_loss(va); },
      [&] { best = model->params().snapshot(); }, [&] { model->params().restore(best); });
  TrainOutcome out;
  out.curve = res.curve;
  out.best_epoch = res.best_epoch;
  out.model = std::make_unique<BiLstmModel>(std::move(model));
  return out;
}

TrainOutcome train_hier(const TrainConfig& cfg, std::span<const NormalizedHistory> train,
                        std::span<const NormalizedHistory> valid, std::uint64_t seed) {
  HierConfig hc = cfg.hier;
  hc.truncated = cfg.kind == ModelKind::HierTruncated;
  auto model = std::make_unique<HierModel>(hc, TokenVocab::build(train, cfg.token_vocab_size), seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<nn::Matrix> best;
  auto save = [&] { best = model->params().snapshot(); };
  auto restore = [&] { model->params().restore(best); };
  TrainOutcome out;

  auto users = [&](std::span<const NormalizedHistory> h) {
    std::vector<std::pair<std::vector<int>, int>> u;
    for (const auto& x : h) u.emplace_back(model->vocab().encode(x.tokens), label_to_int(x.label));
    return u;
  };
  auto tr_users = users(train);
  const auto va_users = users(valid);

  if (cfg.hier_mode == "joint") {
    nn::Adam adam({.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});
    Schedule sched(tr_users.size(), cfg.batch_size, cfg.max_epochs, cfg.warmup_fraction);
    auto res = run_early_stopping(
        cfg.max_epochs, cfg.patience,
        [&](int) {
          rng.shuffle(tr_users);
          return model->train_joint_epoch(tr_users, cfg.batch_size, adam, rng, sched.fn());
        },
        [&] { return model->joint_loss(va_users.empty() ? tr_users : va_users); }, save, restore);
    out.curve = res.curve;
    out.best_epoch = res.best_epoch;
    out.meta["mode"] = "joint";
    out.model = std::make_unique<HierTrained>(std::move(model));
    return out;
  }

  // stage one: encoder + chunk classifier on labelled chunks
  auto chunk_examples = [&](const std::vector<std::pair<std::vector<int>, int>>& us) {
    std::vector<HierModel::ChunkExample> ex;
    for (const auto& [ids, label] : us) {
      const auto cs = model->chunk(ids);
      const std::size_t n = cfg.stage1_chunks == "head" ? std::min<std::size_t>(1, cs.n_chunks()) : cs.n_chunks();
      for (std::size_t c = 0; c < n; ++c) ex.push_back({cs.chunks[c], cs.masks[c], label});
    }
    return ex;
  };
  auto tr_chunks = chunk_examples(tr_users);
  const auto va_chunks = chunk_examples(va_users);
  nn::Adam enc_adam({.learning_rate = cfg.learning_rate, .weight_decay = cfg.weight_decay});
  Schedule s1(tr_chunks.size(), cfg.batch_size, cfg.max_epochs, cfg.warmup_fraction);
  auto r1 = run_early_stopping(
      cfg.max_epochs, cfg.patience,
      [&](int) {
        rng.shuffle(tr_chunks);
        return model->train_chunk_epoch(tr_chunks, cfg.batch_size, enc_adam, rng, s1.fn());
      },
      [&] { return model->chunk_loss(va_chunks.empty() ? tr_chunks : va_chunks); }, save, restore);

  // stage two: fusion + head on frozen [CLS] vectors
  auto cache = [&](const std::vector<std::pair<std::vector<int>, int>>& us) {
    std::vector<HierModel::CachedUser> c;
    for (const auto& [ids, label] : us) c.push_back({model->encode_chunks(model->chunk(ids)), label});
    return c;
  };
  auto tr_cache = cache(tr_users);
  const auto va_cache = cache(va_users);
  nn::Adam head_adam({.learning_rate = cfg.head_learning_rate, .weight_decay = cfg.weight_decay});
  Schedule s2(tr_cache.size(), cfg.batch_size, cfg.head_max_epochs, cfg.warmup_fraction);
  auto r2 = run_early_stopping(
      cfg.head_max_epochs, cfg.patience,
      [&](int) {
        rng.shuffle(tr_cache);
        return model->train_head_epoch(tr_cache, cfg.batch_size, head_adam, rng, s2.fn());
      },
      [&] { return model->head_loss(va_cache.empty() ? tr_cache : va_cache); }, save, restore);

  out.curve = r1.curve;
  const int offset = static_cast<int>(r1.curve.size());
  for (auto rec : r2.curve) {
    rec.epoch += offset;
    out.curve.push_back(rec);
  }
  out.best_epoch = offset + r2.best_epoch;
  out.meta["mode"] = "frozen";
  out.meta["stage1_epochs"] = r1.curve.size();
  out.meta["stage1_best_epoch"] = r1.best_epoch;
  out.meta["stage2_epochs"] = r2.curve.size();
  out.meta["stage2_best_epoch"] = r2.best_epoch;
  out.meta["stage1_chunks"] = tr_chunks.size();
  out.model = std::make_unique<HierTrained>(std::move(model));
  return out;
}

}  // namespace

std::unique_ptr<TrainedModel> load_trained_model(const Checkpoint& ckpt) {
  try {
    if (ckpt.kind == "lr-bow") {
      auto vocab = vocabulary_from_json(ckpt.vocab);
      if (hex64(vocab.hash()) != ckpt.vocab_hash) throw Error("checkpoint vocabulary hash mismatch", "vocab_mismatch");
      auto lm = linear_model_from_checkpoint(ckpt);
      lm.feature_names = vocab.terms();
      return std::make_unique<BowModel>(std::move(vocab), std::move(lm));
    }
    if (ckpt.kind == "lr-lexicon") {
      Lexicon lex(ckpt.vocab.at("categories").get<Lexicon::Categories>());
      if (lexicon_hash(lex) != ckpt.vocab_hash) throw Error("checkpoint lexicon hash mismatch", "vocab_mismatch");
      auto lm = linear_model_from_checkpoint(ckpt);
      lm.feature_names = lex.names();
      return std::make_unique<LexiconModel>(std::move(lex), std::move(lm));
    }
    if (ckpt.kind == "bilstm-att")
      return std::make_unique<BiLstmModel>(std::make_unique<BiLstmAtt>(BiLstmAtt::from_checkpoint(ckpt)));
    if (ckpt.kind == "hier" || ckpt.kind == "hier-truncated")
      return std::make_unique<HierTrained>(std::make_unique<HierModel>(HierModel::from_checkpoint(ckpt)));
  } catch (const json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what(), "parse");
  }
  throw Error("unknown checkpoint kind '" + ckpt.kind + "'", "config");
}

TrainOutcome train_model(const TrainConfig& config, std::span<const NormalizedHistory> train,
                         std::span<const NormalizedHistory> valid, std::uint64_t seed) {
  config.validate();
  if (train.empty()) throw Error("no training users", "input");
  require_both_classes(train);
  switch (config.kind) {
    case ModelKind::LrBow:
    case ModelKind::LrLexicon: return train_linear(config, train, valid);
    case ModelKind::BiLstmAtt: return train_bilstm(config, train, valid, seed);
    case ModelKind::Hier:
    case ModelKind::HierTruncated: return train_hier(config, train, valid, seed);
  }
  throw Error("unhandled model kind", "config");
}

std::vector<Label> predict_labels(const TrainedModel& model, std::span<const NormalizedHistory> histories) {
  std::vector<Label> out;
  for (double p : model.predict_proba(histories)) out.push_back(p >= 0.5 ? Label::Poster : Label::ActiveCitizen);
  return out;
}

std::vector<Label> gold_labels(std::span<const NormalizedHistory> histories) {
  std::vector<Label> out;
  for (const auto& h : histories) out.push_back(h.label);
  return out;
}

void write_curves_csv(const std::vector<EpochRecord>& curve, std::ostream& out) {
  out << "epoch,train_loss,valid_loss\n";
  out.precision(10);
  for (const auto& r : curve) out << r.epoch << ',' << r.train_loss << ',' << r.valid_loss << '\n';
}

}  // namespace civic_lens
