#include "civic_lens/hiernet.hpp"

#include <cmath>
#include <map>

namespace civic_lens {

// ------------------------------------------------------------------ chunking

std::vector<int> ChunkSequence::content() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    const auto& ch = chunks[c];
    const auto& m = masks[c];
    // position 0 is [CLS]; the last unmasked position is [SEP]
    std::size_t end = 0;
    while (end < m.size() && m[end]) ++end;
    for (std::size_t k = 1; k + 1 < end; ++k) out.push_back(ch[k]);
  }
  return out;
}

ChunkSequence chunk_tokens(std::span<const int> ids, std::size_t content_capacity, std::size_t overlap,
                           std::size_t max_chunks) {
  if (ids.empty()) throw Error("cannot chunk an empty token sequence", "empty_history");
  if (content_capacity < 1) throw Error("chunk capacity must be at least 1", "config");
  if (overlap >= content_capacity) throw Error("chunk overlap must be smaller than the capacity", "config");
  ChunkSequence cs;
  cs.content_capacity = content_capacity;
  const std::size_t L = ids.size();
  for (std::size_t start = 0;; start += content_capacity - overlap) {
    const std::size_t end = std::min(L, start + content_capacity);
    std::vector<int> chunk;
    std::vector<int> mask;
    chunk.reserve(content_capacity + 2);
    chunk.push_back(TokenVocab::kCls);
    chunk.insert(chunk.end(), ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
    chunk.push_back(TokenVocab::kSep);
    mask.assign(chunk.size(), 1);
    chunk.resize(content_capacity + 2, TokenVocab::kPad);
    mask.resize(content_capacity + 2, 0);
    cs.chunks.push_back(std::move(chunk));
    cs.masks.push_back(std::move(mask));
    cs.offsets.push_back(start);
    if (end >= L) break;
    if (max_chunks > 0 && cs.chunks.size() == max_chunks) break;
  }
  return cs;
}

std::vector<int> truncate_head(std::span<const int> ids, std::size_t capacity) {
  if (capacity < 1) throw Error("truncation capacity must be at least 1", "config");
  return std::vector<int>(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), capacity)));
}

std::string_view to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::MaxPool: return "max";
    case FusionKind::MeanPool: return "mean";
    case FusionKind::LstmAttention: return "lstm";
  }
  return "?";
}

FusionKind parse_fusion(std::string_view text) {
  if (text == "max") return FusionKind::MaxPool;
  if (text == "mean") return FusionKind::MeanPool;
  if (text == "lstm") return FusionKind::LstmAttention;
  throw Error("unknown fusion '" + std::string(text) + "' (expected max, mean or lstm)", "config");
}

// ------------------------------------------------------------------- encoder

void ChunkEncoderConfig::validate() const {
  if (layers < 1 || heads < 1 || embed_dim < 1) throw Error("encoder sizes must be positive", "config");
  if (embed_dim % heads != 0) throw Error("encoder embed_dim must be divisible by heads", "config");
  if (content_capacity < 1) throw Error("encoder content capacity must be positive", "config");
  if (max_positions < chunk_length()) throw Error("encoder max_positions is smaller than the chunk length", "config");
  if (window && *window < 2) throw Error("attention window must be at least 2", "config");
  if (dropout < 0 || dropout >= 1) throw Error("dropout must lie in [0, 1)", "config");
}

nlohmann::json ChunkEncoderConfig::to_json() const {
  nlohmann::json j = {{"kind", kind == EncoderKind::TinyReference ? "tiny" : "pretrained"},
                      {"layers", layers},
                      {"heads", heads},
                      {"embed_dim", embed_dim},
                      {"content_capacity", content_capacity},
                      {"max_positions", max_positions},
                      {"dropout", dropout},
                      {"vocab_size", vocab_size}};
  j["window"] = window ? nlohmann::json(*window) : nlohmann::json();
  return j;
}

ChunkEncoderConfig ChunkEncoderConfig::from_json(const nlohmann::json& j) {
  ChunkEncoderConfig c;
  const auto kind = j.value("kind", std::string("tiny"));
  if (kind == "tiny") c.kind = EncoderKind::TinyReference;
  else if (kind == "pretrained") c.kind = EncoderKind::PretrainedPlugin;
  else throw Error("unknown encoder kind '" + kind + "'", "config");
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.content_capacity = j.value("content_capacity", c.content_capacity);
  c.max_positions = j.value("max_positions", c.content_capacity + 2);
  c.dropout = j.value("dropout", c.dropout);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  if (j.contains("window") && !j["window"].is_null()) c.window = j["window"].get<int>();
  return c;
}

TinyEncoder::TinyEncoder(const ChunkEncoderConfig& config, nn::ParameterSet& ps, const std::string& prefix, Rng& rng)
    : config_(config) {
  config_.validate();
  if (config_.vocab_size <= TokenVocab::kReserved - 1) throw Error("encoder vocabulary is empty", "config");
  const Eigen::Index d = config_.embed_dim;
  token_embedding_ = &ps.add(prefix + "token_embedding", nn::uniform(config_.vocab_size, d, 0.1, rng));
  position_embedding_ = &ps.add(prefix + "position_embedding", nn::uniform(config_.max_positions, d, 0.02, rng));
  auto ones = [&] { return nn::Matrix::Ones(1, d); };
  auto zeros = [&](Eigen::Index n) { return nn::Matrix::Zero(1, n); };
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    Layer L{};
    L.ln1_g = &ps.add(p + "ln1.gain", ones());
    L.ln1_b = &ps.add(p + "ln1.bias", zeros(d));
    L.wq = &ps.add(p + "attn.wq", nn::xavier_uniform(d, d, rng));
    L.bq = &ps.add(p + "attn.bq", zeros(d));
    L.wk = &ps.add(p + "attn.wk", nn::xavier_uniform(d, d, rng));
    L.bk = &ps.add(p + "attn.bk", zeros(d));
    L.wv = &ps.add(p + "attn.wv", nn::xavier_uniform(d, d, rng));
    L.bv = &ps.add(p + "attn.bv", zeros(d));
    L.wo = &ps.add(p + "attn.wo", nn::xavier_uniform(d, d, rng));
    L.bo = &ps.add(p + "attn.bo", zeros(d));
    L.ln2_g = &ps.add(p + "ln2.gain", ones());
    L.ln2_b = &ps.add(p + "ln2.bias", zeros(d));
    L.w1 = &ps.add(p + "ffn.w1", nn::xavier_uniform(d, 4 * d, rng));
    L.b1 = &ps.add(p + "ffn.b1", zeros(4 * d));
    L.w2 = &ps.add(p + "ffn.w2", nn::xavier_uniform(4 * d, d, rng));
    L.b2 = &ps.add(p + "ffn.b2", zeros(d));
    layers_.push_back(L);
  }
  final_g_ = &ps.add(prefix + "final_ln.gain", ones());
  final_b_ = &ps.add(prefix + "final_ln.bias", zeros(d));
}

ChunkEncoder::Output TinyEncoder::encode(nn::Graph& g, std::span<const int> chunk, std::span<const int> mask,
                                         Rng* dropout_rng) const {
  const auto T = static_cast<Eigen::Index>(chunk.size());
  if (chunk.size() > max_positions())
    throw Error("chunk of length " + std::to_string(chunk.size()) + " exceeds encoder max_positions " +
                    std::to_string(max_positions()),
                "config");
  if (mask.size() != chunk.size()) throw Error("chunk mask length differs from chunk length", "config");
  if (chunk.empty() || mask[0] == 0) throw Error("chunk must start with an unmasked token", "config");

  // key mask, plus the sliding window when configured ([CLS] attends and is attended globally)
  nn::Matrix allowed(T, T);
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = 0; j < T; ++j) {
      bool ok = mask[static_cast<std::size_t>(j)] != 0;
      if (ok && config_.window && i != 0 && j != 0) ok = std::abs(i - j) <= *config_.window / 2;
      allowed(i, j) = ok ? 1.0 : 0.0;
    }
  std::vector<int> positions(chunk.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

  Output out;
  out.token_embeddings = g.embedding(*token_embedding_, chunk);
  nn::Var x = nn::add(out.token_embeddings, g.embedding(*position_embedding_, positions));
  x = nn::dropout(x, config_.dropout, dropout_rng);
  const Eigen::Index dk = config_.embed_dim / config_.heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  for (const auto& L : layers_) {
    nn::Var h = nn::layer_norm(x, g.param(*L.ln1_g), g.param(*L.ln1_b));
    nn::Var q = nn::add_row(nn::matmul(h, g.param(*L.wq)), g.param(*L.bq));
    nn::Var k = nn::add_row(nn::matmul(h, g.param(*L.wk)), g.param(*L.bk));
    nn::Var v = nn::add_row(nn::matmul(h, g.param(*L.wv)), g.param(*L.bv));
    std::vector<nn::Var> heads;
    for (int hd = 0; hd < config_.heads; ++hd) {
      nn::Var qs = nn::slice_cols(q, hd * dk, dk);
      nn::Var ks = nn::slice_cols(k, hd * dk, dk);
      nn::Var vs = nn::slice_cols(v, hd * dk, dk);
      nn::Var a = nn::softmax_rows(nn::scale(nn::matmul_nt(qs, ks), inv), &allowed);
      heads.push_back(nn::matmul(a, vs));
    }
    nn::Var attn = nn::add_row(nn::matmul(config_.heads == 1 ? heads[0] : nn::concat_cols(heads), g.param(*L.wo)),
                               g.param(*L.bo));
    x = nn::add(x, nn::dropout(attn, config_.dropout, dropout_rng));
    nn::Var h2 = nn::layer_norm(x, g.param(*L.ln2_g), g.param(*L.ln2_b));
    nn::Var f = nn::gelu(nn::add_row(nn::matmul(h2, g.param(*L.w1)), g.param(*L.b1)));
    f = nn::add_row(nn::matmul(f, g.param(*L.w2)), g.param(*L.b2));
    x = nn::add(x, nn::dropout(f, config_.dropout, dropout_rng));
  }
  nn::Var final = nn::layer_norm(x, g.param(*final_g_), g.param(*final_b_));
  out.cls = nn::slice_rows(final, 0, 1);
  return out;
}

namespace {
PretrainedEncoderFactory& pretrained_factory() {
  static PretrainedEncoderFactory factory;
  return factory;
}
}  // namespace

void register_pretrained_encoder(PretrainedEncoderFactory factory) { pretrained_factory() = std::move(factory); }

std::unique_ptr<ChunkEncoder> make_encoder(const ChunkEncoderConfig& config, nn::ParameterSet& params, Rng& rng) {
  if (config.kind == EncoderKind::TinyReference) return std::make_unique<TinyEncoder>(config, params, "encoder.", rng);
  if (!pretrained_factory()) throw Error("no pretrained encoder plugin is registered", "config");
  return pretrained_factory()(config, params, rng);
}

// -------------------------------------------------------------------- fusion

FusionParams FusionParams::create(nn::ParameterSet& ps, FusionKind kind, Eigen::Index in_dim, Eigen::Index hidden,
                                  Rng& rng) {
  FusionParams f;
  f.kind = kind;
  f.out_dim = in_dim;
  if (kind == FusionKind::LstmAttention) {
    f.lstm = nn::LstmParams::create(ps, "fusion.lstm", in_dim, hidden, rng);
    f.attention = nn::AttentionParams::create(ps, "fusion.attention", hidden, hidden, rng);
    f.out_dim = hidden;
  }
  return f;
}

FusionOutput fuse(nn::Graph& g, nn::Var chunk_embeddings, const FusionParams& params) {
  if (chunk_embeddings.rows() == 0) throw Error("cannot fuse zero chunks", "config");
  switch (params.kind) {
    case FusionKind::MaxPool: return {nn::max_rows(chunk_embeddings), std::nullopt};
    case FusionKind::MeanPool: return {nn::mean_rows(chunk_embeddings), std::nullopt};
    case FusionKind::LstmAttention: {
      nn::Var states = nn::lstm(g, chunk_embeddings, params.lstm);
      auto att = nn::additive_attention(g, states, params.attention);
      return {att.context, att.weights};
    }
  }
  throw Error("unknown fusion kind", "config");
}

Eigen::RowVectorXd fuse(const nn::Matrix& chunk_embeddings, const FusionParams& params,
                        Eigen::RowVectorXd* attention_weights) {
  nn::Graph g;
  auto out = fuse(g, g.constant(chunk_embeddings), params);
  if (attention_weights && out.weights) *attention_weights = out.weights->value().row(0);
  return out.embedding.value().row(0);
}

// --------------------------------------------------------------------- model

nlohmann::json HierConfig::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"fusion", std::string(to_string(fusion))},
          {"fusion_hidden", fusion_hidden},
          {"head_hidden", head_hidden},
          {"overlap", overlap},
          {"max_chunks", max_chunks},
          {"truncated", truncated}};
}

HierConfig HierConfig::from_json(const nlohmann::json& j) {
  HierConfig c;
  if (j.contains("encoder")) c.encoder = ChunkEncoderConfig::from_json(j["encoder"]);
  c.fusion = parse_fusion(j.value("fusion", std::string("lstm")));
  c.fusion_hidden = j.value("fusion_hidden", 0);
  c.head_hidden = j.value("head_hidden", 0);
  c.overlap = j.value("overlap", std::size_t{0});
  c.max_chunks = j.value("max_chunks", std::size_t{64});
  c.truncated = j.value("truncated", false);
  return c;
}

HierModel::HierModel(HierConfig config, TokenVocab vocab, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.encoder.vocab_size = static_cast<int>(vocab_.size());
  if (config_.fusion_hidden <= 0) config_.fusion_hidden = config_.encoder.embed_dim;
  if (config_.head_hidden <= 0) config_.head_hidden = std::max(1, config_.encoder.embed_dim / 2);
  Rng rng(seed);
  encoder_ = make_encoder(config_.encoder, params_, rng);
  const Eigen::Index d = encoder_->dim();
  chunk_w_ = &params_.add("chunk_head.w", nn::xavier_uniform(d, 1, rng));
  chunk_b_ = &params_.add("chunk_head.b", nn::Matrix::Zero(1, 1));
  encoder_param_count_ = params_.all().size();
  fusion_ = FusionParams::create(params_, config_.fusion, d, config_.fusion_hidden, rng);
  fc1_w_ = &params_.add("head.fc1.w", nn::xavier_uniform(fusion_.out_dim, config_.head_hidden, rng));
  fc1_b_ = &params_.add("head.fc1.b", nn::Matrix::Zero(1, config_.head_hidden));
  fc2_w_ = &params_.add("head.fc2.w", nn::xavier_uniform(config_.head_hidden, 1, rng));
  fc2_b_ = &params_.add("head.fc2.b", nn::Matrix::Zero(1, 1));
}

std::vector<nn::Parameter*> HierModel::encoder_parameters() {
  auto all = params_.all();
  return std::vector<nn::Parameter*>(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(encoder_param_count_));
}

std::vector<nn::Parameter*> HierModel::head_parameters() {
  auto all = params_.all();
  return std::vector<nn::Parameter*>(all.begin() + static_cast<std::ptrdiff_t>(encoder_param_count_), all.end());
}

ChunkSequence HierModel::chunk(std::span<const int> ids) const {
  const auto cap = static_cast<std::size_t>(config_.encoder.content_capacity);
  if (config_.truncated) {
    const auto head = truncate_head(ids, cap);
    return chunk_tokens(head, cap, 0, 1);
  }
  return chunk_tokens(ids, cap, config_.overlap, config_.max_chunks);
}

nn::Var HierModel::encode_chunks(nn::Graph& g, const ChunkSequence& cs, Rng* dropout_rng,
                                 std::vector<nn::Var>* token_embeddings) const {
  std::vector<nn::Var> rows;
  for (std::size_t c = 0; c < cs.n_chunks(); ++c) {
    auto out = encoder_->encode(g, cs.chunks[c], cs.masks[c], dropout_rng);
    rows.push_back(out.cls);
    if (token_embeddings) token_embeddings->push_back(out.token_embeddings);
  }
  if (rows.empty()) throw Error("no chunks to encode", "config");
  return rows.size() == 1 ? rows[0] : nn::concat_rows(rows);
}

nn::Matrix HierModel::encode_chunks(const ChunkSequence& cs) const {
  nn::Matrix out(static_cast<Eigen::Index>(cs.n_chunks()), encoder_->dim());
  for (std::size_t c = 0; c < cs.n_chunks(); ++c) {
    nn::Graph g;
    out.row(static_cast<Eigen::Index>(c)) = encoder_->encode(g, cs.chunks[c], cs.masks[c], nullptr).cls.value().row(0);
  }
  return out;
}

nn::Var HierModel::head_logit(nn::Graph& g, nn::Var chunk_embeddings, Rng* dropout_rng, FusionOutput* fused) const {
  auto f = fuse(g, chunk_embeddings, fusion_);
  nn::Var h = nn::relu(nn::add_row(nn::matmul(f.embedding, g.param(*fc1_w_)), g.param(*fc1_b_)));
  h = nn::dropout(h, config_.encoder.dropout, dropout_rng);
  nn::Var logit = nn::add(nn::matmul(h, g.param(*fc2_w_)), g.param(*fc2_b_));
  if (fused) *fused = f;
  return logit;
}

nn::Var HierModel::chunk_logit(nn::Graph& g, nn::Var cls) const {
  return nn::add(nn::matmul(cls, g.param(*chunk_w_)), g.param(*chunk_b_));
}

HierModel::Forward HierModel::forward(nn::Graph& g, std::span<const int> ids, Rng* dropout_rng) const {
  Forward f;
  f.chunks = chunk(ids);
  f.chunk_embeddings = encode_chunks(g, f.chunks, dropout_rng, &f.token_embeddings);
  f.logit = head_logit(g, f.chunk_embeddings, dropout_rng, &f.fused);
  return f;
}

double HierModel::logit(std::span<const int> ids) const {
  const auto cs = chunk(ids);
  nn::Graph g;
  return head_logit(g, g.constant(encode_chunks(cs)), nullptr).scalar();
}

double HierModel::probability(std::span<const int> ids) const {
  const double z = logit(ids);
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

namespace {

template <class Item, class LossFn>
double run_epoch(const std::vector<Item>& items, std::size_t batch_size, nn::Adam& optimizer,
                 const std::vector<nn::Parameter*>& params, const std::function<double()>& lr_scale, LossFn loss_fn) {
  if (batch_size == 0) throw Error("batch size must be positive", "config");
  double total = 0;
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    const std::size_t end = std::min(items.size(), start + batch_size);
    nn::GradStore grads;
    for (std::size_t i = start; i < end; ++i) {
      nn::Graph g;
      nn::Var loss = loss_fn(g, items[i]);
      if (!std::isfinite(loss.scalar())) throw Error("non-finite training loss", "numeric");
      total += loss.scalar();
      g.backward(loss, &grads);
    }
    grads.scale(1.0 / static_cast<double>(end - start));
    optimizer.step(params, grads, lr_scale ? lr_scale() : 1.0);
  }
  return items.empty() ? 0.0 : total / static_cast<double>(items.size());
}

}  // namespace

double HierModel::train_chunk_epoch(const std::vector<ChunkExample>& examples, std::size_t batch_size,
                                    nn::Adam& optimizer, Rng& rng, const std::function<double()>& lr_scale) {
  return run_epoch(examples, batch_size, optimizer, encoder_parameters(), lr_scale,
                   [&](nn::Graph& g, const ChunkExample& ex) {
                     auto out = encoder_->encode(g, ex.chunk, ex.mask, &rng);
                     return nn::bce_with_logits(chunk_logit(g, out.cls), ex.label);
                   });
}

double HierModel::chunk_loss(const std::vector<ChunkExample>& examples) const {
  double total = 0;
  for (const auto& ex : examples) {
    nn::Graph g;
    auto out = encoder_->encode(g, ex.chunk, ex.mask, nullptr);
    total += nn::bce_with_logits(chunk_logit(g, out.cls), ex.label).scalar();
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

double HierModel::train_head_epoch(const std::vector<CachedUser>& users, std::size_t batch_size, nn::Adam& optimizer,
                                   Rng& rng, const std::function<double()>& lr_scale) {
  return run_epoch(users, batch_size, optimizer, head_parameters(), lr_scale, [&](nn::Graph& g, const CachedUser& u) {
    return nn::bce_with_logits(head_logit(g, g.constant(u.chunk_embeddings), &rng), u.label);
  });
}

double HierModel::head_loss(const std::vector<CachedUser>& users) const {
  double total = 0;
  for (const auto& u : users) {
    nn::Graph g;
    total += nn::bce_with_logits(head_logit(g, g.constant(u.chunk_embeddings), nullptr), u.label).scalar();
  }
  return users.empty() ? 0.0 : total / static_cast<double>(users.size());
}

double HierModel::train_joint_epoch(const std::vector<std::pair<std::vector<int>, int>>& users, std::size_t batch_size,
                                    nn::Adam& optimizer, Rng& rng, const std::function<double()>& lr_scale) {
  return run_epoch(users, batch_size, optimizer, params_.all(), lr_scale,
                   [&](nn::Graph& g, const std::pair<std::vector<int>, int>& u) {
                     return nn::bce_with_logits(forward(g, u.first, &rng).logit, u.second);
                   });
}

double HierModel::joint_loss(const std::vector<std::pair<std::vector<int>, int>>& users) const {
  double total = 0;
  for (const auto& [ids, label] : users) {
    nn::Graph g;
    total += nn::bce_with_logits(g.constant(nn::Matrix::Constant(1, 1, logit(ids))), label).scalar();
  }
  return users.empty() ? 0.0 : total / static_cast<double>(users.size());
}

InputGradient HierModel::logit_input_gradient(const std::vector<std::string>& tokens) const {
  const auto ids = vocab_.encode(tokens);
  nn::Graph g;
  auto f = forward(g, ids);
  g.backward(f.logit);
  // overlapping chunks see the same input position twice; its gradient is the sum
  std::map<std::size_t, std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd>> rows;
  for (std::size_t c = 0; c < f.chunks.n_chunks(); ++c) {
    const auto& mask = f.chunks.masks[c];
    std::size_t end = 0;
    while (end < mask.size() && mask[end]) ++end;
    const auto& x = f.token_embeddings[c].value();
    const auto& gx = f.token_embeddings[c].grad();
    for (std::size_t k = 1; k + 1 < end; ++k) {
      const std::size_t pos = f.chunks.offsets[c] + k - 1;
      const auto r = static_cast<Eigen::Index>(k);
      auto it = rows.find(pos);
      if (it == rows.end()) rows.emplace(pos, std::make_pair(Eigen::RowVectorXd(x.row(r)), Eigen::RowVectorXd(gx.row(r))));
      else it->second.second += gx.row(r);
    }
  }
  InputGradient out;
  out.logit = f.logit.scalar();
  out.embeddings.resize(static_cast<Eigen::Index>(rows.size()), encoder_->dim());
  out.gradients.resize(static_cast<Eigen::Index>(rows.size()), encoder_->dim());
  Eigen::Index i = 0;
  for (const auto& [pos, xg] : rows) {
    out.positions.push_back(pos);
    out.embeddings.row(i) = xg.first;
    out.gradients.row(i) = xg.second;
    ++i;
  }
  return out;
}

Checkpoint HierModel::to_checkpoint() const {
  Checkpoint c;
  c.kind = config_.truncated ? "hier-truncated" : "hier";
  c.config = config_.to_json();
  c.vocab = vocab_.to_json();
  c.vocab_hash = vocab_.hash();
  c.params = params_.to_json();
  return c;
}

HierModel HierModel::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "hier" && ckpt.kind != "hier-truncated")
    throw Error("checkpoint kind " + ckpt.kind + " is not a hierarchical model", "config");
  auto vocab = TokenVocab::from_json(ckpt.vocab);
  if (vocab.hash() != ckpt.vocab_hash) throw Error("checkpoint vocabulary hash mismatch", "vocab_mismatch");
  HierModel m(HierConfig::from_json(ckpt.config), std::move(vocab), 0);
  m.params_.load_json(ckpt.params);
  return m;
}

}  // namespace civic_lens
