#include "civic_lens/baselines.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

namespace civic_lens {

namespace {

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_labels(const SparseRows& X, std::span<const int> y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw Error("feature rows and labels differ in length", "config");
  bool pos = false, neg = false;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error("labels must be 0 or 1", "config");
    (v ? pos : neg) = true;
  }
  if (!pos || !neg) throw Error("training labels contain a single class", "single_class");
}

// Objective and gradient over theta = [w; b].
double objective(const SparseRows& X, const Eigen::VectorXd& y, double alpha, const Eigen::VectorXd& theta,
                 Eigen::VectorXd* grad) {
  const Eigen::Index d = X.cols();
  const double n = static_cast<double>(X.rows());
  const auto w = theta.head(d);
  const double b = theta(d);
  Eigen::VectorXd z = X * w;
  z.array() += b;
  double loss = 0;
  Eigen::VectorXd r(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    loss += log1pexp(z(i)) - y(i) * z(i);
    r(i) = sigmoid(z(i)) - y(i);
  }
  loss = loss / n + 0.5 * alpha * w.squaredNorm();
  if (grad) {
    grad->resize(d + 1);
    grad->head(d) = (X.transpose() * r) / n + alpha * w;
    (*grad)(d) = r.sum() / n;
  }
  return loss;
}

}  // namespace

LinearModel train_logreg(const SparseRows& X, std::span<const int> y, double alpha, const LogRegOptions& options,
                         LogRegTrace* trace) {
  check_labels(X, y);
  if (!(alpha >= 0)) throw Error("regularization strength must be non-negative", "config");
  const Eigen::Index d = X.cols();
  Eigen::VectorXd yv(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) yv(static_cast<Eigen::Index>(i)) = y[i];

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  Eigen::VectorXd grad;
  double f = objective(X, yv, alpha, theta, &grad);
  LogRegTrace local;
  local.losses.push_back(f);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y) pairs

  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (grad.norm() < options.tolerance) {
      local.converged = true;
      break;
    }
    // two-loop recursion
    Eigen::VectorXd q = grad;
    std::vector<double> a(memory.size());
    for (std::size_t k = memory.size(); k-- > 0;) {
      const auto& [s, yk] = memory[k];
      a[k] = s.dot(q) / yk.dot(s);
      q -= a[k] * yk;
    }
    if (!memory.empty()) {
      const auto& [s, yk] = memory.back();
      q *= s.dot(yk) / yk.squaredNorm();
    } else {
      q /= std::max(1.0, grad.norm());
    }
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const auto& [s, yk] = memory[k];
      const double beta = yk.dot(q) / yk.dot(s);
      q += s * (a[k] - beta);
    }
    Eigen::VectorXd dir = -q;
    double slope = grad.dot(dir);
    if (slope >= 0) {  // not a descent direction; fall back to steepest descent
      memory.clear();
      dir = -grad / std::max(1.0, grad.norm());
      slope = grad.dot(dir);
    }
    double step = 1.0;
    Eigen::VectorXd next, next_grad;
    double f_next = f;
    bool accepted = false;
    for (int k = 0; k < 60; ++k) {
      next = theta + step * dir;
      f_next = objective(X, yv, alpha, next, &next_grad);
      if (std::isfinite(f_next) && f_next <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    Eigen::VectorXd s = next - theta;
    Eigen::VectorXd yk = next_grad - grad;
    if (s.dot(yk) > 1e-12) {
      memory.emplace_back(std::move(s), std::move(yk));
      if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
    }
    theta = std::move(next);
    grad = std::move(next_grad);
    f = f_next;
    local.losses.push_back(f);
  }
  if (!local.converged && grad.norm() < options.tolerance) local.converged = true;
  local.iterations = it;
  local.gradient_norm = grad.norm();
  if (trace) *trace = std::move(local);

  LinearModel m;
  m.weights = theta.head(d);
  m.bias = theta(d);
  m.reg_strength = alpha;
  return m;
}

LinearModel train_logreg(const FeatureMatrix& X, std::span<const int> y, double alpha, const LogRegOptions& options,
                         LogRegTrace* trace) {
  auto m = train_logreg(X.values, y, alpha, options, trace);
  m.feature_names = X.feature_names;
  return m;
}

double logreg_logloss(const LinearModel& model, const SparseRows& X, std::span<const int> y) {
  if (static_cast<std::size_t>(X.rows()) != y.size()) throw Error("feature rows and labels differ in length", "config");
  if (X.cols() != model.weights.size()) throw Error("feature dimension does not match model", "config");
  Eigen::VectorXd z = X * model.weights;
  double loss = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double zi = z(i) + model.bias;
    loss += log1pexp(zi) - y[static_cast<std::size_t>(i)] * zi;
  }
  return loss / static_cast<double>(std::max<std::size_t>(1, y.size()));
}

double logreg_objective(const LinearModel& model, const SparseRows& X, std::span<const int> y) {
  return logreg_logloss(model, X, y) + 0.5 * model.reg_strength * model.weights.squaredNorm();
}

Eigen::VectorXd predict_proba(const LinearModel& model, const SparseRows& X) {
  if (X.cols() != model.weights.size())
    throw Error("feature dimension " + std::to_string(X.cols()) + " does not match model dimension " +
                    std::to_string(model.weights.size()),
                "config");
  Eigen::VectorXd z = X * model.weights;
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sigmoid(z(i) + model.bias);
  return z;
}

Eigen::VectorXd predict_proba(const LinearModel& model, const FeatureMatrix& X) {
  if (!model.feature_names.empty() && model.feature_names != X.feature_names)
    throw Error("feature columns do not match the model", "config");
  return predict_proba(model, X.values);
}

Checkpoint to_checkpoint(const LinearModel& model, const std::string& kind, const std::string& vocab_hash) {
  Checkpoint c;
  c.kind = kind;
  c.config = {{"alpha", model.reg_strength}};
  c.vocab_hash = vocab_hash;
  c.vocab = model.feature_names;
  std::vector<double> w(model.weights.data(), model.weights.data() + model.weights.size());
  c.params = {{"weights", w}, {"bias", model.bias}};
  return c;
}

LinearModel linear_model_from_checkpoint(const Checkpoint& ckpt) {
  LinearModel m;
  try {
    const auto w = ckpt.params.at("weights").get<std::vector<double>>();
    m.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    m.bias = ckpt.params.at("bias").get<double>();
    m.reg_strength = ckpt.config.value("alpha", 1e-4);
    if (ckpt.vocab.is_array()) m.feature_names = ckpt.vocab.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed linear checkpoint: ") + e.what(), "parse");
  }
  if (!m.feature_names.empty() && m.feature_names.size() != static_cast<std::size_t>(m.weights.size()))
    throw Error("linear checkpoint feature names do not match weights", "parse");
  return m;
}

// ----------------------------------------------------------------- BiLSTM-ATT

nlohmann::json BiLstmAttConfig::to_json() const {
  return {{"embed_dim", embed_dim},   {"hidden_units", hidden_units}, {"dropout", dropout},
          {"vocab_size", vocab_size}, {"max_tokens", max_tokens},     {"embed_init", embed_init}};
}

BiLstmAttConfig BiLstmAttConfig::from_json(const nlohmann::json& j) {
  BiLstmAttConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_units = j.value("hidden_units", c.hidden_units);
  c.dropout = j.value("dropout", c.dropout);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.embed_init = j.value("embed_init", c.embed_init);
  return c;
}

BiLstmAtt::BiLstmAtt(BiLstmAttConfig config, TokenVocab vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.vocab_size = static_cast<int>(vocab_.size());
  if (config_.hidden_units <= 0 || config_.embed_dim <= 0) throw Error("BiLSTM sizes must be positive", "config");
  if (config_.dropout < 0 || config_.dropout >= 1) throw Error("dropout must lie in [0, 1)", "config");
  if (config_.max_tokens <= 0) throw Error("max_tokens must be positive", "config");
  Rng rng(seed);
  const Eigen::Index e = config_.embed_dim, h = config_.hidden_units;
  embedding_ = &params_.add("embedding", nn::uniform(config_.vocab_size, e, config_.embed_init, rng));
  forward_lstm_ = nn::LstmParams::create(params_, "lstm_fwd", e, h, rng);
  backward_lstm_ = nn::LstmParams::create(params_, "lstm_bwd", e, h, rng);
  attention_ = nn::AttentionParams::create(params_, "attention", 2 * h, h, rng);
  out_w_ = &params_.add("out.w", nn::xavier_uniform(2 * h, 1, rng));
  out_b_ = &params_.add("out.b", nn::Matrix::Zero(1, 1));
}

std::vector<int> BiLstmAtt::prepare(std::span<const int> ids) const {
  std::vector<int> out;
  for (int id : ids) {
    if (id < 0 || id >= config_.vocab_size) throw Error("token id out of vocabulary range", "config");
    if (id == TokenVocab::kPad) continue;
    out.push_back(id);
    if (static_cast<int>(out.size()) == config_.max_tokens) break;
  }
  if (out.empty()) throw Error("empty token sequence", "empty_history");
  return out;
}

BiLstmAtt::Forward BiLstmAtt::forward(nn::Graph& g, std::span<const int> ids, Rng* dropout_rng) const {
  const auto seq = prepare(ids);
  Forward f;
  f.embeddings = g.embedding(*embedding_, seq);
  nn::Var x = nn::dropout(f.embeddings, config_.dropout, dropout_rng);
  f.states = nn::concat_cols({nn::lstm(g, x, forward_lstm_, false), nn::lstm(g, x, backward_lstm_, true)});
  auto att = nn::additive_attention(g, nn::dropout(f.states, config_.dropout, dropout_rng), attention_);
  f.attention = att.weights;
  f.user_embedding = att.context;
  f.logit = nn::add(nn::matmul(nn::dropout(f.user_embedding, config_.dropout, dropout_rng), g.param(*out_w_)),
                    g.param(*out_b_));
  return f;
}

double BiLstmAtt::logit(std::span<const int> ids) const {
  nn::Graph g;
  return forward(g, ids).logit.scalar();
}

double BiLstmAtt::probability(std::span<const int> ids) const {
  const double z = logit(ids);
  return sigmoid(z);
}

std::vector<double> BiLstmAtt::attention_weights(std::span<const int> ids) const {
  nn::Graph g;
  const auto& w = forward(g, ids).attention.value();
  return std::vector<double>(w.data(), w.data() + w.size());
}

double BiLstmAtt::train_epoch(const std::vector<Example>& examples, std::size_t batch_size, nn::Adam& optimizer,
                              Rng& rng, const std::function<double()>& lr_scale) {
  if (batch_size == 0) throw Error("batch size must be positive", "config");
  double total = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    nn::GradStore grads;
    for (std::size_t i = start; i < end; ++i) {
      nn::Graph g;
      auto f = forward(g, examples[i].ids, &rng);
      nn::Var loss = nn::bce_with_logits(f.logit, examples[i].label);
      if (!std::isfinite(loss.scalar())) throw Error("non-finite training loss", "numeric");
      total += loss.scalar();
      g.backward(loss, &grads);
    }
    grads.scale(1.0 / static_cast<double>(end - start));
    optimizer.step(params_, grads, lr_scale ? lr_scale() : 1.0);
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

double BiLstmAtt::mean_loss(const std::vector<Example>& examples) const {
  double total = 0;
  for (const auto& ex : examples) {
    nn::Graph g;
    total += nn::bce_with_logits(forward(g, ex.ids).logit, ex.label).scalar();
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

std::size_t BiLstmAtt::load_pretrained(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pretrained vectors " + path.string(), "io");
  std::string line;
  std::size_t replaced = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) continue;  // word2vec header "count dim"
    if (static_cast<int>(fields.size()) != config_.embed_dim + 1)
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(config_.embed_dim) +
                      " values",
                  "parse");
    const int id = vocab_.id(fields[0]);
    if (id < TokenVocab::kReserved) continue;
    for (int k = 0; k < config_.embed_dim; ++k) embedding_->value(id, k) = std::stod(fields[static_cast<std::size_t>(k) + 1]);
    ++replaced;
  }
  return replaced;
}

InputGradient BiLstmAtt::logit_input_gradient(const std::vector<std::string>& tokens) const {
  const auto ids = vocab_.encode(tokens);
  nn::Graph g;
  auto f = forward(g, ids);
  g.backward(f.logit);
  InputGradient out;
  // prepare() keeps every non-pad id up to max_tokens; word tokens never map to pad
  for (std::size_t i = 0; i < ids.size() && static_cast<int>(out.positions.size()) < config_.max_tokens; ++i)
    if (ids[i] != TokenVocab::kPad) out.positions.push_back(i);
  out.embeddings = f.embeddings.value();
  out.gradients = f.embeddings.grad();
  out.logit = f.logit.scalar();
  return out;
}

Checkpoint BiLstmAtt::to_checkpoint() const {
  Checkpoint c;
  c.kind = "bilstm-att";
  c.config = config_.to_json();
  c.vocab = vocab_.to_json();
  c.vocab_hash = vocab_.hash();
  c.params = params_.to_json();
  return c;
}

BiLstmAtt BiLstmAtt::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "bilstm-att") throw Error("checkpoint kind " + ckpt.kind + " is not bilstm-att", "config");
  auto vocab = TokenVocab::from_json(ckpt.vocab);
  if (vocab.hash() != ckpt.vocab_hash) throw Error("checkpoint vocabulary hash mismatch", "vocab_mismatch");
  BiLstmAtt m(BiLstmAttConfig::from_json(ckpt.config), std::move(vocab), 0);
  m.params_.load_json(ckpt.params);
  return m;
}

}  // namespace civic_lens
