#include "civic_lens/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>

#include "civic_lens/trainer.hpp"

namespace civic_lens {

RawAttribution input_x_grad(const DifferentiableTextModel& model, const std::vector<std::string>& tokens,
                            AttributionTarget target) {
  if (tokens.empty()) throw Error("cannot attribute an empty token list", "input");
  const InputGradient ig = model.logit_input_gradient(tokens);
  RawAttribution r;
  r.tokens = tokens;
  r.logit = ig.logit;
  r.predicted_class = ig.logit >= 0 ? Label::Poster : Label::ActiveCitizen;
  const double sign = target == AttributionTarget::PredictedClass && r.predicted_class == Label::ActiveCitizen ? -1.0 : 1.0;
  r.values = nn::Matrix::Zero(static_cast<Eigen::Index>(tokens.size()), ig.embeddings.cols());
  for (std::size_t i = 0; i < ig.positions.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    r.values.row(static_cast<Eigen::Index>(ig.positions[i])) =
        sign * ig.embeddings.row(row).cwiseProduct(ig.gradients.row(row));
  }
  return r;
}

std::vector<double> l2_aggregate(const nn::Matrix& raw) {
  std::vector<double> out(static_cast<std::size_t>(raw.rows()));
  for (Eigen::Index i = 0; i < raw.rows(); ++i) out[static_cast<std::size_t>(i)] = raw.row(i).norm();
  return out;
}

MergeRule parse_merge_rule(std::string_view text) {
  if (text == "sum") return MergeRule::Sum;
  if (text == "max") return MergeRule::Max;
  if (text == "mean") return MergeRule::Mean;
  throw Error("unknown merge rule '" + std::string(text) + "'", "config");
}

Attribution merge_subwords(const std::vector<std::string>& tokens, std::span<const double> scores, MergeRule rule) {
  if (tokens.size() != scores.size()) throw Error("tokens and scores differ in length", "input");
  Attribution a;
  std::vector<std::size_t> pieces;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool continuation = tokens[i].size() > 2 && tokens[i].compare(0, 2, "##") == 0;
    if (continuation && !a.tokens.empty()) {
      a.tokens.back() += tokens[i].substr(2);
      double& s = a.scores.back();
      s = rule == MergeRule::Max ? std::max(s, scores[i]) : s + scores[i];
      ++pieces.back();
      continue;
    }
    if (continuation) a.orphan_pieces.push_back(a.tokens.size());
    a.tokens.push_back(tokens[i]);
    a.scores.push_back(scores[i]);
    pieces.push_back(1);
  }
  if (rule == MergeRule::Mean)
    for (std::size_t i = 0; i < a.scores.size(); ++i) a.scores[i] /= static_cast<double>(pieces[i]);
  return a;
}

std::vector<std::pair<std::string, double>> rank_tokens(const Attribution& attr, std::size_t k) {
  if (k < 1) throw Error("k must be at least 1", "input");
  std::vector<std::size_t> order(attr.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return attr.scores[a] > attr.scores[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i : order) out.emplace_back(attr.tokens[i], attr.scores[i]);
  return out;
}

const DifferentiableTextModel& differentiable_or_throw(const TrainedModel& model) {
  const auto* d = model.differentiable();
  if (!d)
    throw Error("model '" + model.kind() + "' has no differentiable embedding input; attribution needs a neural model",
                "not_differentiable");
  return *d;
}

Attribution explain_tokens(const DifferentiableTextModel& model, const std::vector<std::string>& tokens,
                           const std::string& model_ref, MergeRule rule) {
  const auto raw = input_x_grad(model, tokens);
  auto a = merge_subwords(raw.tokens, l2_aggregate(raw.values), rule);
  a.predicted_class = raw.predicted_class;
  a.model_ref = model_ref;
  return a;
}

nlohmann::json attribution_to_json(const Attribution& attr, const std::string& user_id) {
  nlohmann::json j = {{"user_id", user_id},
                      {"predicted_class", to_string(attr.predicted_class)},
                      {"model_ref", attr.model_ref},
                      {"tokens", attr.tokens},
                      {"scores", attr.scores}};
  if (!attr.orphan_pieces.empty()) j["orphan_pieces"] = attr.orphan_pieces;
  return j;
}

std::vector<TokenImportance> summarize_importance(const std::vector<Attribution>& attributions, std::size_t k) {
  std::map<std::pair<Label, std::string>, std::pair<double, std::size_t>> pool;
  for (const auto& a : attributions)
    for (const auto& [token, score] : rank_tokens(a, k)) {
      auto& [sum, n] = pool[{a.predicted_class, token}];
      sum += score;
      ++n;
    }
  std::vector<TokenImportance> rows;
  for (const auto& [key, v] : pool) rows.push_back({key.first, key.second, v.first / static_cast<double>(v.second), v.second});
  std::sort(rows.begin(), rows.end(), [](const TokenImportance& a, const TokenImportance& b) {
    if (a.label != b.label) return a.label < b.label;
    if (a.support != b.support) return a.support > b.support;
    if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
    return a.token < b.token;
  });
  return rows;
}

void write_importance_csv(const std::vector<TokenImportance>& rows, std::ostream& out) {
  out << "class,token,mean_score,support\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.10g", r.mean_score);
    out << to_string(r.label) << ',' << csv_field(r.token) << ',' << buf << ',' << r.support << '\n';
  }
}

}  // namespace civic_lens
