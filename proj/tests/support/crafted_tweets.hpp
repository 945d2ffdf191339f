#pragma once

#include <regex>
#include <string>
#include <vector>

#include "civic_lens/common.hpp"

namespace civic_lens::testing {

/// Deterministic tweets mixing mentions, URLs, emails, hashtags, emoji,
/// emoticons, punctuation and mixed case.
inline std::vector<std::string> crafted_tweets(std::size_t n = 100, std::uint64_t seed = 2024) {
  const std::vector<std::string> fragments = {
      "@John",          "@jane_doe99",        "@POTUS",          "https://x.co",       "http://example.com/a?b=1&c=2",
      "HTTPS://T.CO/AbC123", "www.snopes.com/fact-check", "(see https://politifact.com/x).", "mail me: bob@example.org",
      "#POTUS",         "#Vote2020!",         "\xF0\x9F\x98\x80", "\xF0\x9F\x87\xBA\xF0\x9F\x87\xB8",
      "\xE2\x9D\xA4\xEF\xB8\x8F", "\xF0\x9F\x91\x8D\xF0\x9F\x8F\xBD", ":)",  "<3", "Hello", "WORLD", "don't",
      "well-known",     "3.14",               "...",             "!!!",                "Fact-check this NOW",
      "RT @someone:",   "via@nospace",        "caf\xC3\xA9",        "\xC3\x9C" "BER",     "soros",
      "it's http://a.b/c,and more", "@user.", "email@",         "@",                  "x@y"};
  Rng rng(seed);
  std::vector<std::string> tweets;
  for (std::size_t i = 0; i < n; ++i) {
    std::string t;
    const auto len = 1 + rng.below(8);
    for (std::size_t k = 0; k < len; ++k) {
      if (k) t += rng.bernoulli(0.9) ? " " : "";
      t += fragments[rng.below(fragments.size())];
    }
    tweets.push_back(t);
  }
  return tweets;
}

inline const std::regex& raw_url_pattern() {
  static const std::regex re(R"((https?://|www\.)\S+)", std::regex::icase);
  return re;
}

inline const std::regex& raw_mention_pattern() {
  static const std::regex re(R"((^|[^A-Za-z0-9_])@[A-Za-z0-9_]+)");
  return re;
}

}  // namespace civic_lens::testing
