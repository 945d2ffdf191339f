#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "civic_lens/corpus.hpp"

namespace civic_lens {

/// Directory of the bundled TSV resources. Honors CIVIC_LENS_RESOURCES.
std::filesystem::path resource_dir();

/// Emoji sequence -> colon-delimited lowercase name (":grinning_face:").
class EmojiTable {
 public:
  static EmojiTable load(const std::filesystem::path& tsv);
  static const EmojiTable& bundled();

  void add(std::u32string sequence, std::string name);
  /// Longest table entry starting at text[pos]; returns matched length (0 if none).
  std::size_t match(std::u32string_view text, std::size_t pos, std::string* name) const;
  bool is_name(std::string_view token) const { return names_.count(std::string(token)) > 0; }
  std::size_t size() const { return by_sequence_.size(); }

 private:
  std::unordered_map<std::u32string, std::string> by_sequence_;
  std::unordered_set<std::string> names_;
  std::size_t max_len_ = 0;
};

/// Codepoint-level traditional -> simplified Chinese mapping.
class TraditionalToSimplified {
 public:
  static TraditionalToSimplified load(const std::filesystem::path& tsv);
  static const TraditionalToSimplified& bundled();

  char32_t map(char32_t cp) const;
  std::string convert(std::string_view text) const;
  const std::unordered_map<char32_t, char32_t>& table() const { return table_; }

 private:
  std::unordered_map<char32_t, char32_t> table_;
};

/// Word segmenter injection point for Chinese text. Implementations must be
/// safe for concurrent const use.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  /// Splits a run of Han characters into words.
  virtual std::vector<std::string> segment(std::string_view han_run) const = 0;
};

/// Greedy forward longest-match over a word list; unknown characters become
/// single-character words.
class DictionarySegmenter : public Segmenter {
 public:
  static DictionarySegmenter load(const std::filesystem::path& tsv);
  static const DictionarySegmenter& bundled();

  void add_word(std::string_view word);
  std::vector<std::string> segment(std::string_view han_run) const override;

 private:
  std::unordered_set<std::u32string> words_;
  std::size_t max_len_ = 1;
};

inline constexpr std::string_view kUrlToken = "HTTPURL";
inline constexpr std::string_view kUserToken = "@USER";

/// Tweet normalization: lowercases, tokenizes with a tweet-aware tokenizer and
/// replaces URLs with HTTPURL, @-mentions with @USER and each emoji with its
/// colon-delimited name. Hashtags are kept verbatim (lowercased).
class TweetNormalizer {
 public:
  explicit TweetNormalizer(const EmojiTable& emoji = EmojiTable::bundled()) : emoji_(&emoji) {}
  std::vector<std::string> operator()(std::string_view text) const;

 private:
  const EmojiTable* emoji_;
};

/// Weibo normalization: traditional -> simplified mapping, Han runs segmented
/// by the injected segmenter, Latin words lowercased and kept, and the same
/// URL/mention/emoji replacement as tweets.
class WeiboNormalizer {
 public:
  explicit WeiboNormalizer(const Segmenter& segmenter = DictionarySegmenter::bundled(),
                           const TraditionalToSimplified& t2s = TraditionalToSimplified::bundled(),
                           const EmojiTable& emoji = EmojiTable::bundled())
      : segmenter_(&segmenter), t2s_(&t2s), emoji_(&emoji) {}
  std::vector<std::string> operator()(std::string_view text) const;

 private:
  const Segmenter* segmenter_;
  const TraditionalToSimplified* t2s_;
  const EmojiTable* emoji_;
};

std::vector<std::string> normalize_tweet(std::string_view text);
std::vector<std::string> normalize_weibo_post(std::string_view text, const Segmenter& segmenter);

using PostNormalizer = std::function<std::vector<std::string>(std::string_view)>;
PostNormalizer normalizer_for(Platform platform);

struct NormalizedHistory {
  std::string user_id;
  Label label = Label::Poster;
  std::vector<std::string> tokens;
  /// Index of each surviving post's first token; strictly increasing from 0.
  std::vector<std::size_t> post_boundaries;
};

/// Concatenates the normalized posts in stored order. Posts that normalize to
/// nothing are skipped.
NormalizedHistory concatenate_history(const UserRecord& user, const PostNormalizer& normalizer);

}  // namespace civic_lens
