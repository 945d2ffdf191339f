#pragma once

// Token attribution by input x gradient, aggregated per position by the L2
// norm over embedding dimensions.

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "civic_lens/common.hpp"
#include "civic_lens/text_model.hpp"

namespace civic_lens {

enum class AttributionTarget {
  /// Logit of the predicted class: z when POSTER is predicted, -z otherwise.
  PredictedClass,
  /// The POSTER logit z regardless of the prediction.
  PosterLogit,
};

struct RawAttribution {
  std::vector<std::string> tokens;
  /// tokens.size() x d; rows of positions the model never saw are zero.
  nn::Matrix values;
  Label predicted_class = Label::Poster;
  double logit = 0.0;
};

RawAttribution input_x_grad(const DifferentiableTextModel& model, const std::vector<std::string>& tokens,
                            AttributionTarget target = AttributionTarget::PredictedClass);

std::vector<double> l2_aggregate(const nn::Matrix& raw);

enum class MergeRule { Sum, Max, Mean };
MergeRule parse_merge_rule(std::string_view text);

struct Attribution {
  std::vector<std::string> tokens;
  std::vector<double> scores;
  Label predicted_class = Label::Poster;
  std::string model_ref;
  /// Positions (after merging) that began with a continuation piece.
  std::vector<std::size_t> orphan_pieces;
};

/// Joins "##"-prefixed pieces onto the preceding token.
Attribution merge_subwords(const std::vector<std::string>& tokens, std::span<const double> scores,
                           MergeRule rule = MergeRule::Sum);

/// Top k by score, ties by earlier position.
std::vector<std::pair<std::string, double>> rank_tokens(const Attribution& attr, std::size_t k);

class TrainedModel;
/// Throws kind "not_differentiable" for models without embedding input.
const DifferentiableTextModel& differentiable_or_throw(const TrainedModel& model);

/// input_x_grad -> l2_aggregate -> merge_subwords.
Attribution explain_tokens(const DifferentiableTextModel& model, const std::vector<std::string>& tokens,
                           const std::string& model_ref = {}, MergeRule rule = MergeRule::Sum);

nlohmann::json attribution_to_json(const Attribution& attr, const std::string& user_id);

struct TokenImportance {
  Label label = Label::Poster;
  std::string token;
  double mean_score = 0.0;
  std::size_t support = 0;
};

/// Pools each user's top-k tokens by predicted class: the mean score over
/// every occurrence and the number of occurrences. Sorted by class, support
/// desc, mean desc, token.
std::vector<TokenImportance> summarize_importance(const std::vector<Attribution>& attributions, std::size_t k);
void write_importance_csv(const std::vector<TokenImportance>& rows, std::ostream& out);

}  // namespace civic_lens
