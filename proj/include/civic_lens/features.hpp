#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "civic_lens/preprocess.hpp"

namespace civic_lens {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class Normalization { L2, RelativeFreq, None };
std::string_view to_string(Normalization n);

enum class CountMode { Corpus, Document };

struct VocabularyOptions {
  int ngram_max = 1;
  /// A term survives only if its count strictly exceeds this.
  std::int64_t min_count = 5;
  CountMode min_count_mode = CountMode::Corpus;
  double max_df_ratio = 0.40;
  std::size_t max_size = 10000;
};

/// Space-joined n-grams (1..n_max) of a history; n-grams never cross a post
/// boundary.
std::vector<std::string> extract_ngrams(const NormalizedHistory& history, int n_max);

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> terms, std::vector<std::int64_t> doc_freq,
             std::vector<std::int64_t> total_freq, std::size_t n_docs, int ngram_max);

  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<std::int64_t>& doc_freq() const { return doc_freq_; }
  const std::vector<std::int64_t>& total_freq() const { return total_freq_; }
  std::size_t n_docs() const { return n_docs_; }
  int ngram_max() const { return ngram_max_; }
  std::size_t size() const { return terms_.size(); }
  std::optional<std::size_t> find(const std::string& term) const;
  std::uint64_t hash() const;

 private:
  std::vector<std::string> terms_;
  std::vector<std::int64_t> doc_freq_;
  std::vector<std::int64_t> total_freq_;
  std::size_t n_docs_ = 0;
  int ngram_max_ = 1;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Keeps n-grams with count > min_count and df/n_users <= max_df_ratio, the
/// max_size most frequent, ordered by total frequency desc then term asc.
Vocabulary build_vocabulary(std::span<const NormalizedHistory> histories, const VocabularyOptions& options = {});

struct FeatureMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> feature_names;
  SparseRows values;
  Normalization normalization = Normalization::None;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
};

/// tf(u,t) * (ln((1+N)/(1+df(t))) + 1) with raw-count tf and N, df taken
/// from the vocabulary's fitting corpus; rows L2-normalized.
FeatureMatrix tfidf_vectorize(std::span<const NormalizedHistory> histories, const Vocabulary& vocab);

/// Raw n-gram counts per user, optionally row-normalized to relative
/// frequencies (rows sum to 1).
FeatureMatrix count_vectorize(std::span<const NormalizedHistory> histories, const Vocabulary& vocab,
                              Normalization normalization = Normalization::RelativeFreq);

/// LIWC-style dictionary: category -> words, where a trailing '*' marks a
/// prefix pattern.
class Lexicon {
 public:
  using Categories = std::vector<std::pair<std::string, std::vector<std::string>>>;

  explicit Lexicon(Categories categories);
  /// `category<TAB>pattern1 pattern2 ...`
  static Lexicon load(const std::filesystem::path& tsv);
  static Lexicon bundled();

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Categories& categories() const { return categories_; }
  /// Indices of every category with a pattern matching `token`.
  std::vector<std::size_t> match(std::string_view token) const;

 private:
  Categories categories_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::vector<std::size_t>> exact_;
  std::vector<std::pair<std::string, std::size_t>> prefixes_;
};

/// cell(u,c) = tokens of u matching category c / total tokens of u.
FeatureMatrix lexicon_vectorize(std::span<const NormalizedHistory> histories, const Lexicon& lexicon);

/// Writes `user_id,feature,value` triplets (non-zeros only) plus an index file
/// of feature names, one per line in column order.
void write_triplets(const FeatureMatrix& m, std::ostream& triplets, std::ostream& index);
/// Rebuilds a matrix from a triplet export; `row_ids` fixes row order and keeps
/// all-zero rows.
FeatureMatrix read_triplets(std::istream& triplets, std::istream& index, std::vector<std::string> row_ids,
                            Normalization normalization);

}  // namespace civic_lens
