#pragma once

#include <string>
#include <vector>

#include "civic_lens/nn.hpp"
#include "civic_lens/token_vocab.hpp"

namespace civic_lens {

/// Embedding rows actually fed to a model and the gradient of its output
/// logit (POSTER positive) with respect to them.
struct InputGradient {
  std::vector<std::size_t> positions;  // index into the token list given
  nn::Matrix embeddings;               // positions.size() x d
  nn::Matrix gradients;                // same shape
  double logit = 0.0;
};

/// A model whose input is a sequence of token embeddings it can differentiate
/// through.
class DifferentiableTextModel {
 public:
  virtual ~DifferentiableTextModel() = default;
  virtual const TokenVocab& vocab() const = 0;
  virtual InputGradient logit_input_gradient(const std::vector<std::string>& tokens) const = 0;
};

}  // namespace civic_lens
