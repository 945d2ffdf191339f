#pragma once

// Univariate Pearson correlation of per-user feature use with the class label.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "civic_lens/common.hpp"
#include "civic_lens/features.hpp"

namespace civic_lens {

struct CorrelationResult {
  std::string feature;
  double r = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  /// POSTER for r > 0 (labels coded POSTER = 1), ACTIVE_CITIZEN for r < 0.
  Label class_direction = Label::Poster;
};

struct CorrelationOptions {
  /// Multiply p by the number of tested features (capped at 1).
  bool bonferroni = false;
  /// 0: exact t transform; otherwise a label-permutation p with this many draws.
  std::size_t permutations = 0;
  std::uint64_t seed = 0;
};

struct CorrelationReport {
  std::vector<CorrelationResult> results;  // column order, tested features only
  std::vector<std::string> skipped;        // zero-variance columns
};

/// y holds 0/1 labels aligned with the rows of X.
CorrelationReport pearson_feature_correlation(const FeatureMatrix& X, std::span<const int> y,
                                              const CorrelationOptions& options = {});

/// Features with p < alpha associated with `label`, strongest first, ties by
/// feature name.
std::vector<CorrelationResult> top_features(const std::vector<CorrelationResult>& results, Label label, std::size_t k,
                                            double alpha = 0.001);

/// {"class": ..., "entries": [{"token", "weight"}]} with weight = |r| / max |r|
/// over the selected features.
nlohmann::json wordcloud_export(const std::vector<CorrelationResult>& results, Label label, std::size_t k = 100,
                                double alpha = 0.001);

/// `class,rank,feature,r,p,n` with the top k of each class.
void write_rankings_csv(const std::vector<CorrelationResult>& results, std::size_t k, double alpha, std::ostream& out);

/// Vocabulary settings for correlation runs: no document-frequency ceiling, so
/// strongly class-bound terms are kept.
VocabularyOptions analysis_vocabulary_options(int ngram_max = 1, std::int64_t min_count = 5);

}  // namespace civic_lens
