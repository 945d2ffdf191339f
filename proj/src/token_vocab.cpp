#include "civic_lens/token_vocab.hpp"

#include <algorithm>
#include <map>

namespace civic_lens {

TokenVocab::TokenVocab() : TokenVocab(std::vector<std::string>{}) {}

TokenVocab::TokenVocab(std::vector<std::string> terms) {
  tokens_ = {"[UNK]", "[PAD]", "[CLS]", "[SEP]"};
  tokens_.insert(tokens_.end(), terms.begin(), terms.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw Error("duplicate vocabulary token '" + tokens_[i] + "'", "config");
  }
}

TokenVocab TokenVocab::build(std::span<const NormalizedHistory> histories, std::size_t max_size, std::int64_t min_count) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& h : histories)
    for (const auto& t : h.tokens) ++counts[t];
  std::vector<std::pair<std::string, std::int64_t>> items;
  for (auto& [t, c] : counts)
    if (c >= min_count && t != "[UNK]" && t != "[PAD]" && t != "[CLS]" && t != "[SEP]") items.emplace_back(t, c);
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (items.size() > max_size) items.resize(max_size);
  std::vector<std::string> terms;
  for (auto& [t, c] : items) terms.push_back(t);
  return TokenVocab(std::move(terms));
}

int TokenVocab::id(const std::string& token) const {
  auto it = index_.find(token);
  // literal "[PAD]" etc. in user text must not alias the structural ids
  if (it == index_.end() || it->second < kReserved) return kUnk;
  return it->second;
}

const std::string& TokenVocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw Error("token id out of range", "config");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> TokenVocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::string TokenVocab::hash() const {
  std::uint64_t h = fnv1a64("token-vocab");
  for (const auto& t : tokens_) h = fnv1a64(t + '\n', h);
  return hex64(h);
}

nlohmann::json TokenVocab::to_json() const {
  return std::vector<std::string>(tokens_.begin() + kReserved, tokens_.end());
}

TokenVocab TokenVocab::from_json(const nlohmann::json& j) { return TokenVocab(j.get<std::vector<std::string>>()); }

}  // namespace civic_lens
