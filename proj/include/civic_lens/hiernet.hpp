#pragma once

// Hierarchical user classifier: the token stream is cut into fixed-capacity
// chunks, each chunk is encoded to its [CLS] vector, the chunk vectors are
// fused (max pool, mean pool or LSTM with attention) and a two-layer head
// produces the probability of the POSTER class.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "civic_lens/checkpoint.hpp"
#include "civic_lens/nn.hpp"
#include "civic_lens/text_model.hpp"
#include "civic_lens/token_vocab.hpp"

namespace civic_lens {

struct ChunkSequence {
  std::vector<std::vector<int>> chunks;  // each content_capacity + 2 long
  std::vector<std::vector<int>> masks;   // 1 for real tokens and specials
  std::vector<std::size_t> offsets;      // input index of each chunk's first content token
  std::size_t content_capacity = 0;

  std::size_t n_chunks() const { return chunks.size(); }
  /// Unmasked content tokens of every chunk, concatenated.
  std::vector<int> content() const;
};

/// [CLS] content [SEP] [PAD]... per chunk. `overlap` content tokens are
/// repeated between neighbours; `max_chunks` (0 = unlimited) keeps the head.
ChunkSequence chunk_tokens(std::span<const int> ids, std::size_t content_capacity = 510, std::size_t overlap = 0,
                           std::size_t max_chunks = 0);

std::vector<int> truncate_head(std::span<const int> ids, std::size_t capacity);

enum class EncoderKind { TinyReference, PretrainedPlugin };
enum class FusionKind { MaxPool, MeanPool, LstmAttention };

std::string_view to_string(FusionKind kind);
FusionKind parse_fusion(std::string_view text);

struct ChunkEncoderConfig {
  EncoderKind kind = EncoderKind::TinyReference;
  int layers = 2;
  int heads = 2;
  int embed_dim = 32;
  int content_capacity = 64;
  int max_positions = 66;
  /// Sliding-window attention span; the [CLS] position stays global.
  std::optional<int> window;
  double dropout = 0.1;
  int vocab_size = 0;

  int chunk_length() const { return content_capacity + 2; }
  void validate() const;
  nlohmann::json to_json() const;
  static ChunkEncoderConfig from_json(const nlohmann::json& j);
};

/// Pluggable chunk encoder. Parameters live in the owning model's set.
class ChunkEncoder {
 public:
  struct Output {
    nn::Var cls;               // 1 x d
    nn::Var token_embeddings;  // T x d input embeddings (before positions)
  };

  virtual ~ChunkEncoder() = default;
  virtual Eigen::Index dim() const = 0;
  virtual std::size_t max_positions() const = 0;
  virtual Output encode(nn::Graph& g, std::span<const int> chunk, std::span<const int> mask, Rng* dropout_rng) const = 0;
};

/// Pre-LN transformer encoder with learned positions and GELU feed-forward.
class TinyEncoder : public ChunkEncoder {
 public:
  TinyEncoder(const ChunkEncoderConfig& config, nn::ParameterSet& params, const std::string& prefix, Rng& rng);

  Eigen::Index dim() const override { return config_.embed_dim; }
  std::size_t max_positions() const override { return static_cast<std::size_t>(config_.max_positions); }
  Output encode(nn::Graph& g, std::span<const int> chunk, std::span<const int> mask, Rng* dropout_rng) const override;

 private:
  struct Layer {
    nn::Parameter *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    nn::Parameter *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
  };
  ChunkEncoderConfig config_;
  nn::Parameter* token_embedding_ = nullptr;
  nn::Parameter* position_embedding_ = nullptr;
  std::vector<Layer> layers_;
  nn::Parameter* final_g_ = nullptr;
  nn::Parameter* final_b_ = nullptr;
};

/// Constructs an encoder for a pretrained checkpoint; none is bundled.
using PretrainedEncoderFactory =
    std::function<std::unique_ptr<ChunkEncoder>(const ChunkEncoderConfig&, nn::ParameterSet&, Rng&)>;
void register_pretrained_encoder(PretrainedEncoderFactory factory);

std::unique_ptr<ChunkEncoder> make_encoder(const ChunkEncoderConfig& config, nn::ParameterSet& params, Rng& rng);

struct FusionParams {
  FusionKind kind = FusionKind::MaxPool;
  nn::LstmParams lstm;
  nn::AttentionParams attention;
  Eigen::Index out_dim = 0;

  static FusionParams create(nn::ParameterSet& ps, FusionKind kind, Eigen::Index in_dim, Eigen::Index hidden, Rng& rng);
};

struct FusionOutput {
  nn::Var embedding;                // 1 x out_dim
  std::optional<nn::Var> weights;  // 1 x N, LSTM attention only
};

FusionOutput fuse(nn::Graph& g, nn::Var chunk_embeddings, const FusionParams& params);
/// Convenience evaluation on a plain matrix.
Eigen::RowVectorXd fuse(const nn::Matrix& chunk_embeddings, const FusionParams& params,
                        Eigen::RowVectorXd* attention_weights = nullptr);

struct HierConfig {
  ChunkEncoderConfig encoder;
  FusionKind fusion = FusionKind::LstmAttention;
  int fusion_hidden = 0;  // 0: encoder embed_dim
  int head_hidden = 0;    // 0: embed_dim / 2
  std::size_t overlap = 0;
  std::size_t max_chunks = 64;
  /// Single head chunk of encoder capacity instead of the full stream.
  bool truncated = false;

  nlohmann::json to_json() const;
  static HierConfig from_json(const nlohmann::json& j);
};

class HierModel : public DifferentiableTextModel {
 public:
  HierModel(HierConfig config, TokenVocab vocab, std::uint64_t seed);

  struct Forward {
    ChunkSequence chunks;
    std::vector<nn::Var> token_embeddings;  // per chunk
    nn::Var chunk_embeddings;               // N x d
    FusionOutput fused;
    nn::Var logit;
  };

  ChunkSequence chunk(std::span<const int> ids) const;
  /// [CLS] vectors of every chunk, inference mode.
  nn::Matrix encode_chunks(const ChunkSequence& cs) const;
  nn::Var encode_chunks(nn::Graph& g, const ChunkSequence& cs, Rng* dropout_rng,
                        std::vector<nn::Var>* token_embeddings = nullptr) const;
  /// Fusion followed by the two-layer head.
  nn::Var head_logit(nn::Graph& g, nn::Var chunk_embeddings, Rng* dropout_rng, FusionOutput* fused = nullptr) const;
  /// Stage-one classifier on a single [CLS] vector.
  nn::Var chunk_logit(nn::Graph& g, nn::Var cls) const;

  Forward forward(nn::Graph& g, std::span<const int> ids, Rng* dropout_rng = nullptr) const;
  double logit(std::span<const int> ids) const;
  double probability(std::span<const int> ids) const;

  struct ChunkExample {
    std::vector<int> chunk;
    std::vector<int> mask;
    int label = 0;
  };
  struct CachedUser {
    nn::Matrix chunk_embeddings;
    int label = 0;
  };

  /// Stage one: fine-tune encoder + chunk classifier on labelled chunks.
  double train_chunk_epoch(const std::vector<ChunkExample>& examples, std::size_t batch_size, nn::Adam& optimizer,
                           Rng& rng, const std::function<double()>& lr_scale);
  double chunk_loss(const std::vector<ChunkExample>& examples) const;
  /// Stage two: fusion + head on frozen chunk embeddings.
  double train_head_epoch(const std::vector<CachedUser>& users, std::size_t batch_size, nn::Adam& optimizer, Rng& rng,
                          const std::function<double()>& lr_scale);
  double head_loss(const std::vector<CachedUser>& users) const;
  /// End-to-end update of every parameter.
  double train_joint_epoch(const std::vector<std::pair<std::vector<int>, int>>& users, std::size_t batch_size,
                           nn::Adam& optimizer, Rng& rng, const std::function<double()>& lr_scale);
  double joint_loss(const std::vector<std::pair<std::vector<int>, int>>& users) const;

  std::vector<nn::Parameter*> encoder_parameters();
  std::vector<nn::Parameter*> head_parameters();

  const HierConfig& config() const { return config_; }
  const TokenVocab& vocab() const override { return vocab_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const FusionParams& fusion() const { return fusion_; }
  InputGradient logit_input_gradient(const std::vector<std::string>& tokens) const override;

  Checkpoint to_checkpoint() const;
  static HierModel from_checkpoint(const Checkpoint& ckpt);

 private:
  HierConfig config_;
  TokenVocab vocab_;
  nn::ParameterSet params_;
  std::unique_ptr<ChunkEncoder> encoder_;
  std::size_t encoder_param_count_ = 0;
  nn::Parameter* chunk_w_ = nullptr;
  nn::Parameter* chunk_b_ = nullptr;
  FusionParams fusion_;
  nn::Parameter *fc1_w_ = nullptr, *fc1_b_ = nullptr, *fc2_w_ = nullptr, *fc2_b_ = nullptr;
};

}  // namespace civic_lens
