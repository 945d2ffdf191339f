#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "civic_lens/checkpoint.hpp"
#include "civic_lens/features.hpp"
#include "civic_lens/nn.hpp"
#include "civic_lens/text_model.hpp"
#include "civic_lens/token_vocab.hpp"

namespace civic_lens {

// ------------------------------------------------------- logistic regression

struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double reg_strength = 1e-4;
  std::vector<std::string> feature_names;  // optional, aligned to weights
};

struct LogRegOptions {
  int max_iterations = 1000;
  /// Stop once the gradient norm of the objective falls below this.
  double tolerance = 1e-6;
  int history = 10;
};

struct LogRegTrace {
  std::vector<double> losses;  // objective after each accepted step, starting at w = 0
  int iterations = 0;
  bool converged = false;
  double gradient_norm = 0.0;
};

/// Minimizes mean log-loss + alpha/2 * ||w||^2 (bias unpenalized) with L-BFGS.
LinearModel train_logreg(const SparseRows& X, std::span<const int> y, double alpha = 1e-4,
                         const LogRegOptions& options = {}, LogRegTrace* trace = nullptr);
LinearModel train_logreg(const FeatureMatrix& X, std::span<const int> y, double alpha = 1e-4,
                         const LogRegOptions& options = {}, LogRegTrace* trace = nullptr);

double logreg_objective(const LinearModel& model, const SparseRows& X, std::span<const int> y);
/// Mean log-loss without the penalty.
double logreg_logloss(const LinearModel& model, const SparseRows& X, std::span<const int> y);

Eigen::VectorXd predict_proba(const LinearModel& model, const SparseRows& X);
Eigen::VectorXd predict_proba(const LinearModel& model, const FeatureMatrix& X);

Checkpoint to_checkpoint(const LinearModel& model, const std::string& kind, const std::string& vocab_hash);
LinearModel linear_model_from_checkpoint(const Checkpoint& ckpt);

// ----------------------------------------------------------------- BiLSTM-ATT

struct BiLstmAttConfig {
  int embed_dim = 100;
  int hidden_units = 150;
  double dropout = 0.5;
  int vocab_size = 0;  // filled from the vocabulary
  int max_tokens = 10000;
  double embed_init = 0.05;

  nlohmann::json to_json() const;
  static BiLstmAttConfig from_json(const nlohmann::json& j);
};

/// Labelled token-id sequence.
struct Example {
  std::vector<int> ids;
  int label = 0;
};

/// Embeddings -> BiLSTM -> additive self-attention -> linear -> sigmoid.
class BiLstmAtt : public DifferentiableTextModel {
 public:
  BiLstmAtt(BiLstmAttConfig config, TokenVocab vocab, std::uint64_t seed);

  struct Forward {
    nn::Var embeddings;      // L x E
    nn::Var states;          // L x 2H
    nn::Var attention;       // 1 x L
    nn::Var user_embedding;  // 1 x 2H
    nn::Var logit;           // 1 x 1
  };

  /// Truncates to max_tokens and drops padding ids.
  std::vector<int> prepare(std::span<const int> ids) const;
  Forward forward(nn::Graph& g, std::span<const int> ids, Rng* dropout_rng = nullptr) const;
  double logit(std::span<const int> ids) const;
  double probability(std::span<const int> ids) const;
  std::vector<double> attention_weights(std::span<const int> ids) const;

  /// One pass over `examples` in the given order with mini-batch updates.
  double train_epoch(const std::vector<Example>& examples, std::size_t batch_size, nn::Adam& optimizer, Rng& rng,
                     const std::function<double()>& lr_scale);
  double mean_loss(const std::vector<Example>& examples) const;

  /// Replaces rows of known tokens from a whitespace "token v1 .. vd" file;
  /// returns the number of rows replaced.
  std::size_t load_pretrained(const std::filesystem::path& path);

  const BiLstmAttConfig& config() const { return config_; }
  const TokenVocab& vocab() const override { return vocab_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  InputGradient logit_input_gradient(const std::vector<std::string>& tokens) const override;

  Checkpoint to_checkpoint() const;
  static BiLstmAtt from_checkpoint(const Checkpoint& ckpt);

 private:
  BiLstmAttConfig config_;
  TokenVocab vocab_;
  nn::ParameterSet params_;
  nn::Parameter* embedding_ = nullptr;
  nn::LstmParams forward_lstm_;
  nn::LstmParams backward_lstm_;
  nn::AttentionParams attention_;
  nn::Parameter* out_w_ = nullptr;
  nn::Parameter* out_b_ = nullptr;
};

}  // namespace civic_lens
