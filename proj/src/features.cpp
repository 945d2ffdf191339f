#include "civic_lens/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace civic_lens {

std::string_view to_string(Normalization n) {
  switch (n) {
    case Normalization::L2: return "l2";
    case Normalization::RelativeFreq: return "relative_freq";
    case Normalization::None: return "none";
  }
  return "none";
}

std::vector<std::string> extract_ngrams(const NormalizedHistory& history, int n_max) {
  if (n_max < 1 || n_max > 3) throw Error("ngram order must be in [1, 3]", "config");
  std::vector<std::string> out;
  out.reserve(history.tokens.size() * static_cast<std::size_t>(n_max));
  const auto& tokens = history.tokens;
  std::vector<std::size_t> bounds = history.post_boundaries;
  if (bounds.empty() || bounds.front() != 0) bounds.insert(bounds.begin(), 0);
  bounds.push_back(tokens.size());
  for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
    const std::size_t begin = bounds[b], end = bounds[b + 1];
    for (std::size_t i = begin; i < end; ++i) {
      std::string gram = tokens[i];
      out.push_back(gram);
      for (int n = 2; n <= n_max && i + static_cast<std::size_t>(n) <= end; ++n) {
        gram += ' ';
        gram += tokens[i + static_cast<std::size_t>(n) - 1];
        out.push_back(gram);
      }
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> terms, std::vector<std::int64_t> doc_freq,
                       std::vector<std::int64_t> total_freq, std::size_t n_docs, int ngram_max)
    : terms_(std::move(terms)),
      doc_freq_(std::move(doc_freq)),
      total_freq_(std::move(total_freq)),
      n_docs_(n_docs),
      ngram_max_(ngram_max) {
  if (doc_freq_.size() != terms_.size() || total_freq_.size() != terms_.size()) {
    throw Error("vocabulary columns must align", "config");
  }
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    if (!index_.emplace(terms_[i], i).second) throw Error("duplicate vocabulary term '" + terms_[i] + "'", "config");
  }
}

std::optional<std::size_t> Vocabulary::find(const std::string& term) const {
  auto it = index_.find(term);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a64("vocab:" + std::to_string(ngram_max_) + ":" + std::to_string(n_docs_));
  for (std::size_t i = 0; i < terms_.size(); ++i) {
    h = fnv1a64(terms_[i], h);
    h = fnv1a64("\x1f" + std::to_string(doc_freq_[i]) + "\x1e", h);
  }
  return h;
}

Vocabulary build_vocabulary(std::span<const NormalizedHistory> histories, const VocabularyOptions& options) {
  if (histories.size() < 2) throw Error("need at least 2 histories to build a vocabulary", "too_small");
  if (options.max_df_ratio <= 0 || options.max_df_ratio > 1) throw Error("max_df_ratio must lie in (0, 1]", "config");

  struct Counts {
    std::int64_t total = 0;
    std::int64_t docs = 0;
  };
  std::unordered_map<std::string, Counts> counts;
  for (const auto& h : histories) {
    std::unordered_set<std::string> seen;
    for (auto& g : extract_ngrams(h, options.ngram_max)) {
      auto& c = counts[g];
      ++c.total;
      if (seen.insert(std::move(g)).second) ++c.docs;
    }
  }

  const double n = static_cast<double>(histories.size());
  std::vector<std::pair<std::string, Counts>> kept;
  for (auto& [term, c] : counts) {
    const std::int64_t freq = options.min_count_mode == CountMode::Corpus ? c.total : c.docs;
    if (freq <= options.min_count) continue;
    if (static_cast<double>(c.docs) / n > options.max_df_ratio) continue;
    kept.emplace_back(term, c);
  }
  if (kept.empty()) throw Error("empty vocabulary", "empty_vocabulary");
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second.total != b.second.total) return a.second.total > b.second.total;
    return a.first < b.first;
  });
  if (kept.size() > options.max_size) kept.resize(options.max_size);

  std::vector<std::string> terms;
  std::vector<std::int64_t> df, tf;
  for (auto& [term, c] : kept) {
    terms.push_back(term);
    df.push_back(c.docs);
    tf.push_back(c.total);
  }
  return Vocabulary(std::move(terms), std::move(df), std::move(tf), histories.size(), options.ngram_max);
}

namespace {

FeatureMatrix empty_matrix(std::span<const NormalizedHistory> histories, std::vector<std::string> names,
                           Normalization normalization) {
  FeatureMatrix m;
  for (const auto& h : histories) m.row_ids.push_back(h.user_id);
  m.feature_names = std::move(names);
  m.normalization = normalization;
  m.values.resize(static_cast<Eigen::Index>(histories.size()), static_cast<Eigen::Index>(m.feature_names.size()));
  return m;
}

std::vector<std::map<std::size_t, double>> count_rows(std::span<const NormalizedHistory> histories,
                                                      const Vocabulary& vocab) {
  std::vector<std::map<std::size_t, double>> rows(histories.size());
  for (std::size_t u = 0; u < histories.size(); ++u) {
    for (const auto& g : extract_ngrams(histories[u], vocab.ngram_max())) {
      if (auto col = vocab.find(g)) rows[u][*col] += 1.0;
    }
  }
  return rows;
}

void fill(FeatureMatrix& m, const std::vector<std::map<std::size_t, double>>& rows) {
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t u = 0; u < rows.size(); ++u) {
    for (const auto& [c, v] : rows[u]) {
      if (v != 0.0) trips.emplace_back(static_cast<int>(u), static_cast<int>(c), v);
    }
  }
  m.values.setFromTriplets(trips.begin(), trips.end());
  m.values.makeCompressed();
}

}  // namespace

FeatureMatrix tfidf_vectorize(std::span<const NormalizedHistory> histories, const Vocabulary& vocab) {
  auto m = empty_matrix(histories, vocab.terms(), Normalization::L2);
  const double n = static_cast<double>(vocab.n_docs());
  std::vector<double> idf(vocab.size());
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    idf[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(vocab.doc_freq()[t]))) + 1.0;
  }
  auto rows = count_rows(histories, vocab);
  for (auto& row : rows) {
    double norm = 0.0;
    for (auto& [c, v] : row) {
      v *= idf[c];
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (auto& [c, v] : row) v /= norm;
    }
  }
  fill(m, rows);
  return m;
}

FeatureMatrix count_vectorize(std::span<const NormalizedHistory> histories, const Vocabulary& vocab,
                              Normalization normalization) {
  auto m = empty_matrix(histories, vocab.terms(), normalization);
  auto rows = count_rows(histories, vocab);
  for (auto& row : rows) {
    double denom = 0.0;
    for (auto& [c, v] : row) denom += normalization == Normalization::L2 ? v * v : v;
    if (normalization == Normalization::L2) denom = std::sqrt(denom);
    if (normalization != Normalization::None && denom > 0) {
      for (auto& [c, v] : row) v /= denom;
    }
  }
  fill(m, rows);
  return m;
}

Lexicon::Lexicon(Categories categories) : categories_(categories) {
  if (categories.empty()) throw Error("lexicon has no categories", "lexicon");
  std::unordered_set<std::string> seen;
  for (auto& [name, patterns] : categories) {
    if (name.empty()) throw Error("lexicon category name is empty", "lexicon");
    if (!seen.insert(name).second) throw Error("duplicate lexicon category '" + name + "'", "lexicon");
    if (patterns.empty()) throw Error("lexicon category '" + name + "' has no patterns", "lexicon");
    const std::size_t idx = names_.size();
    names_.push_back(name);
    std::unordered_set<std::string> own;
    for (const auto& p : patterns) {
      if (p.empty() || p == "*") throw Error("empty pattern in lexicon category '" + name + "'", "lexicon");
      if (!own.insert(p).second) continue;
      if (p.back() == '*') {
        prefixes_.emplace_back(p.substr(0, p.size() - 1), idx);
      } else {
        exact_[p].push_back(idx);
      }
    }
  }
}

Lexicon Lexicon::load(const std::filesystem::path& tsv) {
  std::ifstream in(tsv);
  if (!in) throw Error("cannot open lexicon " + tsv.string(), "io");
  std::vector<std::pair<std::string, std::vector<std::string>>> cats;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error("lexicon line without a tab: " + line, "parse");
    cats.emplace_back(trim(line.substr(0, tab)), split_whitespace(line.substr(tab + 1)));
  }
  return Lexicon(std::move(cats));
}

Lexicon Lexicon::bundled() { return load(resource_dir() / "lexicon.tsv"); }

std::vector<std::size_t> Lexicon::match(std::string_view token) const {
  std::vector<std::size_t> hits;
  if (auto it = exact_.find(std::string(token)); it != exact_.end()) hits = it->second;
  for (const auto& [prefix, idx] : prefixes_) {
    if (token.substr(0, prefix.size()) == prefix) hits.push_back(idx);
  }
  std::sort(hits.begin(), hits.end());
  hits.erase(std::unique(hits.begin(), hits.end()), hits.end());
  return hits;
}

FeatureMatrix lexicon_vectorize(std::span<const NormalizedHistory> histories, const Lexicon& lexicon) {
  auto m = empty_matrix(histories, lexicon.names(), Normalization::None);
  std::vector<std::map<std::size_t, double>> rows(histories.size());
  std::unordered_map<std::string, std::vector<std::size_t>> cache;
  for (std::size_t u = 0; u < histories.size(); ++u) {
    const auto& tokens = histories[u].tokens;
    if (tokens.empty()) continue;
    for (const auto& t : tokens) {
      auto it = cache.find(t);
      if (it == cache.end()) it = cache.emplace(t, lexicon.match(t)).first;
      for (auto c : it->second) rows[u][c] += 1.0;
    }
    const double total = static_cast<double>(tokens.size());
    for (auto& [c, v] : rows[u]) v /= total;
  }
  fill(m, rows);
  return m;
}

void write_triplets(const FeatureMatrix& m, std::ostream& triplets, std::ostream& index) {
  triplets << "user_id,feature,value\n";
  char buf[64];
  for (Eigen::Index r = 0; r < m.values.outerSize(); ++r) {
    for (SparseRows::InnerIterator it(m.values, r); it; ++it) {
      std::snprintf(buf, sizeof buf, "%.17g", it.value());
      triplets << m.row_ids[static_cast<std::size_t>(r)] << ',' << it.col() << ',' << buf << '\n';
    }
  }
  for (const auto& name : m.feature_names) index << name << '\n';
}

FeatureMatrix read_triplets(std::istream& triplets, std::istream& index, std::vector<std::string> row_ids,
                            Normalization normalization) {
  FeatureMatrix m;
  m.normalization = normalization;
  m.row_ids = std::move(row_ids);
  std::string line;
  while (std::getline(index, line)) m.feature_names.push_back(line);
  std::unordered_map<std::string, std::size_t> rows;
  for (std::size_t i = 0; i < m.row_ids.size(); ++i) rows.emplace(m.row_ids[i], i);
  std::vector<Eigen::Triplet<double>> trips;
  std::getline(triplets, line);  // header
  while (std::getline(triplets, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw Error("malformed triplet line: " + line, "parse");
    const std::string id = line.substr(0, a);
    auto it = rows.find(id);
    if (it == rows.end()) throw Error("triplet for unknown user '" + id + "'", "parse");
    trips.emplace_back(static_cast<int>(it->second), std::stoi(line.substr(a + 1, b - a - 1)),
                       std::stod(line.substr(b + 1)));
  }
  m.values.resize(static_cast<Eigen::Index>(m.row_ids.size()), static_cast<Eigen::Index>(m.feature_names.size()));
  m.values.setFromTriplets(trips.begin(), trips.end());
  m.values.makeCompressed();
  return m;
}

}  // namespace civic_lens
