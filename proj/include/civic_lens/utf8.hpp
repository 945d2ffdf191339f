#pragma once

#include <string>
#include <string_view>

namespace civic_lens::utf8 {

/// Decodes UTF-8; invalid bytes decode to U+FFFD.
std::u32string decode(std::string_view text);
std::string encode(std::u32string_view text);
std::string encode(char32_t cp);

char32_t to_lower(char32_t cp);
bool is_space(char32_t cp);
bool is_han(char32_t cp);
bool is_ascii_word(char32_t cp);
/// Letters, digits and underscore, including non-ASCII letters outside the
/// punctuation, symbol and emoji blocks.
bool is_word(char32_t cp);
bool is_emoji_like(char32_t cp);
bool is_punct(char32_t cp);

}  // namespace civic_lens::utf8
