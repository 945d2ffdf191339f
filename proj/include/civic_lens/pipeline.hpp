#pragma once

// File-based stage orchestration behind the command-line tool. Data stages
// live under <runs>/data/<data-hash>/, model runs under <runs>/<config-hash>/.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "civic_lens/corpus.hpp"
#include "civic_lens/preprocess.hpp"
#include "civic_lens/trainer.hpp"

namespace civic_lens {

/// Replaces ${NAME} and ${NAME:-default} in every string value.
nlohmann::json interpolate_env(const nlohmann::json& j);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;
  std::optional<std::string> fusion;
  std::optional<std::filesystem::path> out;
};

struct PipelineConfig {
  nlohmann::json raw;  // effective config after interpolation and overrides

  std::filesystem::path data_path;
  std::filesystem::path lexicon_path;
  std::filesystem::path dual_role_path;
  std::filesystem::path runs_dir;
  Platform platform = Platform::TwitterStyle;

  FilterOptions filter;
  SplitSpec split;
  SyntheticSpec synthetic;
  VocabularyOptions features;
  TrainConfig train;

  struct Explain {
    std::size_t top_k = 10;
    std::string merge = "sum";
    std::size_t max_users = 0;  // 0: every test user
  } explain;

  struct Analysis {
    int ngram_max = 1;
    std::int64_t min_count = 5;
    double alpha = 0.001;
    std::size_t top_k = 10;
    std::size_t wordcloud_k = 100;
    bool bonferroni = false;
    std::size_t permutations = 0;
  } analysis;

  /// Relative paths resolve against `base_dir`.
  static PipelineConfig from_json(const nlohmann::json& j, const Overrides& overrides = {},
                                  const std::filesystem::path& base_dir = {});
  static PipelineConfig load(const std::filesystem::path& path, const Overrides& overrides = {});

  /// Hash of the sections that shape the dataset, split and preprocessing.
  std::string data_hash() const;
  /// Hash of everything that shapes a model run (seeds and runs dir excluded).
  std::string config_hash() const;

  std::filesystem::path data_dir() const { return runs_dir / "data" / data_hash(); }
  std::filesystem::path model_dir() const { return runs_dir / config_hash(); }
};

nlohmann::json history_to_json(const NormalizedHistory& h);
NormalizedHistory history_from_json(const nlohmann::json& j);
void save_histories(const std::vector<NormalizedHistory>& hs, const std::filesystem::path& path);
std::vector<NormalizedHistory> load_histories(const std::filesystem::path& path);

/// Content hash of a file (FNV-1a 64, hex).
std::string file_hash(const std::filesystem::path& path);

struct StageResult {
  std::string stage;
  bool skipped = false;  // outputs were current
  std::vector<std::filesystem::path> outputs;
  nlohmann::json summary = nlohmann::json::object();
};

class Pipeline {
 public:
  Pipeline(PipelineConfig config, bool force = false);

  static const std::vector<std::string>& stages();
  StageResult run(const std::string& stage);

  const PipelineConfig& config() const { return config_; }

 private:
  StageResult ingest();
  StageResult synth();
  StageResult summarize();
  StageResult preprocess();
  StageResult featurize();
  StageResult train();
  StageResult evaluate();
  StageResult explain();
  StageResult analyze();
  StageResult report();

  PipelineConfig config_;
  bool force_;
};

/// Markdown tables: model comparison (mean +/- std, Welch p of each model's
/// per-seed F1 against the best) and per-class feature rankings as written by
/// `analyze` ({"ngrams": {"poster": [...], ...}, "lexicon": {...}}).
void render_report(const std::vector<AggregateReport>& models, const nlohmann::json& rankings, std::ostream& out);

/// Process exit code for an error kind.
int exit_code_for(const std::string& kind);

}  // namespace civic_lens
