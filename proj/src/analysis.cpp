#include "civic_lens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include <boost/math/distributions/students_t.hpp>

namespace civic_lens {

namespace {

struct Column {
  std::vector<std::pair<std::size_t, double>> nz;  // row, value
};

std::vector<Column> columns_of(const FeatureMatrix& X) {
  std::vector<Column> cols(X.cols());
  for (Eigen::Index r = 0; r < X.values.outerSize(); ++r)
    for (SparseRows::InnerIterator it(X.values, r); it; ++it)
      if (it.value() != 0.0) cols[static_cast<std::size_t>(it.col())].nz.emplace_back(static_cast<std::size_t>(r), it.value());
  return cols;
}

bool constant_column(const Column& c, std::size_t n) {
  if (c.nz.empty()) return true;
  if (c.nz.size() < n) return false;  // stored values are non-zero, the rest are zeros
  const double first = c.nz.front().second;
  for (const auto& [row, v] : c.nz)
    if (v != first) return false;
  return true;
}

// Two-pass centred sums; implicit zeros contribute through the mean only.
double correlation(const Column& c, std::span<const double> yc, double syy, std::size_t n) {
  double mean = 0;
  for (const auto& [row, v] : c.nz) mean += v;
  mean /= static_cast<double>(n);
  double sxx = static_cast<double>(n - c.nz.size()) * mean * mean;
  double sxy = 0, ynz = 0;
  for (const auto& [row, v] : c.nz) {
    const double d = v - mean;
    sxx += d * d;
    sxy += d * yc[row];
    ynz += yc[row];
  }
  // zero rows: sum of (-mean) * yc over them, and those yc sum to -ynz
  sxy += mean * ynz;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double t_pvalue(double r, std::size_t n) {
  if (n < 3) return 1.0;
  if (std::fabs(r) >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = r * std::sqrt(df / (1 - r * r));
  boost::math::students_t_distribution<double> dist(df);
  return std::min(1.0, 2 * boost::math::cdf(boost::math::complement(dist, std::fabs(t))));
}

}  // namespace

CorrelationReport pearson_feature_correlation(const FeatureMatrix& X, std::span<const int> y,
                                              const CorrelationOptions& options) {
  const std::size_t n = X.rows();
  if (y.size() != n) throw Error("label count differs from feature rows", "input");
  if (n < 3) throw Error("correlation needs at least three users", "input");
  double ymean = 0;
  for (int v : y) {
    if (v != 0 && v != 1) throw Error("labels must be 0 or 1", "input");
    ymean += v;
  }
  ymean /= static_cast<double>(n);
  std::vector<double> yc(n);
  double syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    yc[i] = y[i] - ymean;
    syy += yc[i] * yc[i];
  }
  if (syy == 0) throw Error("labels are constant; correlation is undefined", "single_class");

  // permutation draws share one sequence of shuffled label vectors
  std::vector<std::vector<double>> perms;
  if (options.permutations > 0) {
    Rng rng(options.seed);
    std::vector<double> shuffled = yc;
    for (std::size_t b = 0; b < options.permutations; ++b) {
      rng.shuffle(shuffled);
      perms.push_back(shuffled);
    }
  }

  CorrelationReport rep;
  const auto cols = columns_of(X);
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const std::string& name = j < X.feature_names.size() ? X.feature_names[j] : std::to_string(j);
    if (constant_column(cols[j], n)) {
      rep.skipped.push_back(name);
      continue;
    }
    CorrelationResult res;
    res.feature = name;
    res.n = n;
    res.r = correlation(cols[j], yc, syy, n);
    res.class_direction = res.r >= 0 ? Label::Poster : Label::ActiveCitizen;
    if (perms.empty()) {
      res.p_value = t_pvalue(res.r, n);
    } else {
      std::size_t extreme = 0;
      for (const auto& p : perms)
        if (std::fabs(correlation(cols[j], p, syy, n)) >= std::fabs(res.r) - 1e-12) ++extreme;
      res.p_value = static_cast<double>(1 + extreme) / static_cast<double>(1 + perms.size());
    }
    rep.results.push_back(std::move(res));
  }
  if (options.bonferroni)
    for (auto& r : rep.results) r.p_value = std::min(1.0, r.p_value * static_cast<double>(rep.results.size()));
  return rep;
}

std::vector<CorrelationResult> top_features(const std::vector<CorrelationResult>& results, Label label, std::size_t k,
                                            double alpha) {
  std::vector<CorrelationResult> out;
  for (const auto& r : results) {
    const bool toward = label == Label::Poster ? r.r > 0 : r.r < 0;
    if (toward && r.p_value < alpha) out.push_back(r);
  }
  std::sort(out.begin(), out.end(), [](const CorrelationResult& a, const CorrelationResult& b) {
    if (std::fabs(a.r) != std::fabs(b.r)) return std::fabs(a.r) > std::fabs(b.r);
    return a.feature < b.feature;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

nlohmann::json wordcloud_export(const std::vector<CorrelationResult>& results, Label label, std::size_t k,
                                double alpha) {
  const auto top = top_features(results, label, k, alpha);
  nlohmann::json entries = nlohmann::json::array();
  const double max_r = top.empty() ? 1.0 : std::fabs(top.front().r);
  for (const auto& r : top) entries.push_back({{"token", r.feature}, {"weight", std::fabs(r.r) / max_r}});
  return {{"class", to_string(label)}, {"entries", entries}};
}

void write_rankings_csv(const std::vector<CorrelationResult>& results, std::size_t k, double alpha, std::ostream& out) {
  out << "class,rank,feature,r,p,n\n";
  char buf[96];
  for (Label label : {Label::Poster, Label::ActiveCitizen}) {
    std::size_t rank = 0;
    for (const auto& r : top_features(results, label, k, alpha)) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6g,%zu", r.r, r.p_value, r.n);
      out << to_string(label) << ',' << ++rank << ',' << csv_field(r.feature) << ',' << buf << '\n';
    }
  }
}

VocabularyOptions analysis_vocabulary_options(int ngram_max, std::int64_t min_count) {
  VocabularyOptions o;
  o.ngram_max = ngram_max;
  o.min_count = min_count;
  o.max_df_ratio = 1.0;
  return o;
}

}  // namespace civic_lens
