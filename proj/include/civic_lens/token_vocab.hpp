#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "civic_lens/preprocess.hpp"

namespace civic_lens {

/// Word-level vocabulary for the neural models. Ids 0-3 are reserved.
class TokenVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kReserved = 4;

  TokenVocab();
  /// `terms` excludes the reserved tokens; ids are assigned from 4 in order.
  explicit TokenVocab(std::vector<std::string> terms);

  /// Tokens with count >= min_count, most frequent first, ties by token.
  static TokenVocab build(std::span<const NormalizedHistory> histories, std::size_t max_size = 30000,
                          std::int64_t min_count = 1);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::size_t size() const { return tokens_.size(); }
  std::string hash() const;

  nlohmann::json to_json() const;
  static TokenVocab from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace civic_lens
