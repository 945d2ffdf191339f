#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices,
// plus parameters, initializers and an Adam optimizer. Every neural model in
// the pipeline (BiLSTM-ATT, the chunk encoder, fusion and heads) is written
// against this layer, which also exposes input-embedding gradients for
// attribution.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "civic_lens/common.hpp"

namespace civic_lens::nn {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
};

/// Owns named parameters with stable addresses, in insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter& add(std::string name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

  nlohmann::json to_json() const;
  /// Loads values by name; shapes must match exactly.
  void load_json(const nlohmann::json& params);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> by_name_;
};

/// Gradient accumulator keyed by parameter.
class GradStore {
 public:
  Matrix& at(const Parameter& p);
  const Matrix* find(const Parameter& p) const;
  void add(const GradStore& other);
  void scale(double factor);
  double squared_norm() const;
  void clear() { grads_.clear(); }

 private:
  std::unordered_map<const Parameter*, Matrix> grads_;
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

/// One forward pass. Nodes are appended in evaluation order, so reverse
/// creation order is a valid topological order for backward().
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  /// Leaf whose gradient is kept (inputs of gradient checks, attribution).
  Var input(Matrix value);
  Var param(const Parameter& p);
  /// Rows of `table` selected by `ids`; gradients scatter back into the table.
  Var embedding(const Parameter& table, std::span<const int> ids);

  /// Runs reverse mode from a 1x1 root. Parameter gradients are added to
  /// `store` when given.
  void backward(Var root, GradStore* store = nullptr);

  Var push(Matrix value, std::vector<int> parents, Backward backward);
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Adds `delta` to the gradient of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& delta);
  GradStore* store() const { return store_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  GradStore* store_ = nullptr;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var gelu(Var a);
/// Row-wise softmax. Entries where `mask` is 0 get probability exactly 0; a
/// fully masked row is all zeros.
Var softmax_rows(Var a, const Matrix* mask = nullptr);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var transpose(Var a);
/// Column-wise max over rows (1 x n); ties go to the first row.
Var max_rows(Var a);
Var mean_rows(Var a);
Var sum(Var a);
/// Inverted dropout; identity when p == 0 or rng is null.
Var dropout(Var a, double p, Rng* rng);
/// Mean binary cross-entropy of 1x1 logit against a 0/1 target.
Var bce_with_logits(Var logit, double target);

Matrix xavier_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);
Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

/// LSTM with gates packed as [input, forget, cell, output].
struct LstmParams {
  Parameter* w_input = nullptr;   // in x 4h
  Parameter* w_hidden = nullptr;  // h x 4h
  Parameter* bias = nullptr;      // 1 x 4h
  Eigen::Index hidden = 0;

  static LstmParams create(ParameterSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden, Rng& rng);
};

/// Runs the LSTM over the rows of `x` (L x in) and returns the L x h hidden
/// states in input order; `reverse` scans from the last row.
Var lstm(Graph& g, Var x, const LstmParams& p, bool reverse = false);

/// Additive self-attention: score_i = v . tanh(W h_i + b), softmax over rows.
struct AttentionParams {
  Parameter* w = nullptr;  // d x a
  Parameter* b = nullptr;  // 1 x a
  Parameter* v = nullptr;  // a x 1

  static AttentionParams create(ParameterSet& ps, const std::string& prefix, Eigen::Index in, Eigen::Index dim, Rng& rng);
};

struct AttentionOutput {
  Var context;  // 1 x d
  Var weights;  // 1 x L
};

AttentionOutput additive_attention(Graph& g, Var states, const AttentionParams& p);

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled weight decay, applied to matrices with more than one row.
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
};

class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}
  /// Applies one update with learning rate options.learning_rate * lr_scale.
  void step(ParameterSet& params, GradStore& grads, double lr_scale = 1.0);
  void step(const std::vector<Parameter*>& params, GradStore& grads, double lr_scale = 1.0);
  std::int64_t steps() const { return t_; }

 private:
  AdamOptions options_;
  std::int64_t t_ = 0;
  std::unordered_map<const Parameter*, std::pair<Matrix, Matrix>> moments_;
};

/// Linear warmup over the first `warmup_steps`, then linear decay to zero at
/// `total_steps`.
double linear_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps);

}  // namespace civic_lens::nn
