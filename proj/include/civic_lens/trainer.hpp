#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "civic_lens/baselines.hpp"
#include "civic_lens/checkpoint.hpp"
#include "civic_lens/features.hpp"
#include "civic_lens/hiernet.hpp"
#include "civic_lens/preprocess.hpp"

namespace civic_lens {

// ------------------------------------------------------------------- metrics

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t support = 0;
};

struct MacroMetrics {
  double precision = 0, recall = 0, f1 = 0;
  ClassMetrics poster, active_citizen;
  /// confusion[gold][pred], index 0 = POSTER, 1 = ACTIVE_CITIZEN.
  std::array<std::array<std::int64_t, 2>, 2> confusion{};

  nlohmann::json to_json() const;
};

/// Per-class P/R/F1 from the confusion matrix, averaged with equal weight.
/// A metric with a zero denominator is 0.
MacroMetrics evaluate_macro(std::span<const Label> predictions, std::span<const Label> gold);

// ------------------------------------------------------------ early stopping

/// Tracks the best validation loss; stop() turns true once `patience`
/// consecutive epochs fail to improve (patience 0: the first failure).
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience);
  /// Records an epoch; returns true when it is the new best.
  bool update(double valid_loss);
  bool should_stop() const { return bad_epochs_ > 0 && bad_epochs_ >= patience_; }
  int best_epoch() const { return best_epoch_; }  // 1-based
  double best_loss() const { return best_; }
  int epochs() const { return epochs_; }

 private:
  int patience_;
  int epochs_ = 0;
  int best_epoch_ = 0;
  int bad_epochs_ = 0;
  double best_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
};

struct EarlyStoppingResult {
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_valid_loss = 0;
  bool stopped_early = false;
};

/// Generic loop: `train_epoch(epoch)` returns the training loss, `valid_loss()`
/// the validation loss; `save_best` is called on every improvement and
/// `restore_best` once at the end.
EarlyStoppingResult run_early_stopping(int max_epochs, int patience, const std::function<double(int)>& train_epoch,
                                       const std::function<double()>& valid_loss, const std::function<void()>& save_best,
                                       const std::function<void()>& restore_best);

// --------------------------------------------------------------- aggregation

struct RunReport {
  std::string model;
  std::string config_hash;
  std::uint64_t seed = 0;
  MacroMetrics metrics;
  double wall_seconds = 0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

struct MeanStd {
  double mean = 0, std = 0;
};

struct AggregateReport {
  std::string model;
  std::string config_hash;
  std::vector<RunReport> runs;
  MeanStd precision, recall, f1;

  nlohmann::json to_json() const;
};

/// Mean and population standard deviation over at least two runs sharing a
/// model and config hash.
AggregateReport aggregate_runs(const std::vector<RunReport>& runs);

struct TTestResult {
  double t = 0;
  double p = 1;
  double df = 0;
  /// Either side has fewer than five values; p is fragile.
  bool small_sample = false;
};

/// Two-sided Welch t-test.
TTestResult significance_test(std::span<const double> a, std::span<const double> b);

// ------------------------------------------------------------------ training

enum class ModelKind { LrBow, LrLexicon, BiLstmAtt, Hier, HierTruncated };
std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct TrainConfig {
  ModelKind kind = ModelKind::LrBow;
  std::size_t batch_size = 16;
  int max_epochs = 10;
  int patience = 3;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double warmup_fraction = 0.1;
  double weight_decay = 0.01;

  // logistic regression
  double alpha = 1e-4;
  VocabularyOptions vocabulary;
  /// Lexicon TSV for LR-LEXICON; empty selects the bundled stand-in.
  std::string lexicon_path;

  // BiLSTM-ATT
  BiLstmAttConfig bilstm;
  double bilstm_learning_rate = 1e-3;

  // hierarchical
  HierConfig hier;
  /// "frozen" (two stages) or "joint".
  std::string hier_mode = "frozen";
  /// Encoder fine-tuning rate (stage one, or joint training).
  double learning_rate = 1e-3;
  /// Fusion + head rate in stage two.
  double head_learning_rate = 3e-3;
  /// Stage two trains a small head on cached vectors, so it gets its own budget.
  int head_max_epochs = 30;
  /// Stage-one inputs: "all" chunks labelled with their user's class, or "head" only.
  std::string stage1_chunks = "all";
  std::size_t token_vocab_size = 30000;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// A trained classifier of normalized user histories.
class TrainedModel {
 public:
  virtual ~TrainedModel() = default;
  virtual std::string kind() const = 0;
  /// Probability of POSTER for each history.
  virtual std::vector<double> predict_proba(std::span<const NormalizedHistory> histories) const = 0;
  virtual Checkpoint checkpoint() const = 0;
  /// Non-null when the model supports input-gradient attribution.
  virtual const DifferentiableTextModel* differentiable() const { return nullptr; }
};

std::unique_ptr<TrainedModel> load_trained_model(const Checkpoint& ckpt);

struct TrainOutcome {
  std::unique_ptr<TrainedModel> model;
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  nlohmann::json meta = nlohmann::json::object();
};

/// Trains one model for one seed with early stopping on `valid`.
TrainOutcome train_model(const TrainConfig& config, std::span<const NormalizedHistory> train,
                         std::span<const NormalizedHistory> valid, std::uint64_t seed);

std::vector<Label> predict_labels(const TrainedModel& model, std::span<const NormalizedHistory> histories);
std::vector<Label> gold_labels(std::span<const NormalizedHistory> histories);

void write_curves_csv(const std::vector<EpochRecord>& curve, std::ostream& out);

}  // namespace civic_lens
