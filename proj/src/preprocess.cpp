#include "civic_lens/preprocess.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "civic_lens/utf8.hpp"

namespace civic_lens {

std::filesystem::path resource_dir() {
  if (const char* env = std::getenv("CIVIC_LENS_RESOURCES"); env && *env) return env;
  return CIVIC_LENS_RESOURCE_DIR;
}

namespace {

std::ifstream open_resource(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open resource " + path.string(), "io");
  return in;
}

std::string lower(std::u32string_view word) {
  std::u32string out(word);
  for (auto& c : out) c = utf8::to_lower(c);
  return utf8::encode(out);
}

bool starts_with_ci(std::u32string_view text, std::size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > text.size()) return false;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    if (utf8::to_lower(text[pos + k]) != static_cast<char32_t>(prefix[k])) return false;
  }
  return true;
}

std::string unknown_emoji_name(char32_t cp) {
  char buf[24];
  std::snprintf(buf, sizeof buf, ":u%04x:", static_cast<unsigned>(cp));
  return buf;
}

bool is_unknown_emoji_name(std::string_view token) {
  if (token.size() < 7 || token.front() != ':' || token.back() != ':' || token[1] != 'u') return false;
  for (std::size_t k = 2; k + 1 < token.size(); ++k) {
    const char c = token[k];
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return token.size() <= 10;
}

bool is_digit(char32_t c) { return c >= '0' && c <= '9'; }

constexpr std::array<std::string_view, 16> kEmoticons = {
    ":-)", ":)", ":-(", ":(", ";-)", ";)", ":-d", ":d", ":-p", ":p", ":'(", ":/", ":-/", "<3", "=)", ":o"};

/// Shared scanner for both platforms. In Weibo mode Han runs are cut out of
/// words and handed to the segmenter, and only Latin script is lowercased.
class Scanner {
 public:
  Scanner(const EmojiTable& emoji, const Segmenter* segmenter) : emoji_(emoji), segmenter_(segmenter) {}

  std::vector<std::string> run(std::u32string_view s) const {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
      const char32_t c = s[i];
      if (utf8::is_space(c)) {
        ++i;
        continue;
      }
      if (std::size_t j = match_url(s, i)) {
        out.emplace_back(kUrlToken);
        i = j;
        continue;
      }
      if (c == '@' && i + 1 < n && utf8::is_word(s[i + 1])) {
        std::size_t j = i + 1;
        while (j < n && utf8::is_word(s[j])) ++j;
        out.emplace_back(kUserToken);
        i = j;
        continue;
      }
      if (c == ':') {
        if (std::size_t j = match_emoji_name(s, i, &out)) {
          i = j;
          continue;
        }
      }
      if (utf8::is_emoji_like(c) || ((is_digit(c) || c == '#' || c == '*') && i + 1 < n &&
                                     (s[i + 1] == 0xFE0F || s[i + 1] == 0x20E3))) {
        std::string name;
        if (std::size_t len = emoji_.match(s, i, &name)) {
          out.push_back(std::move(name));
          i += len;
          continue;
        }
        if (c == 0xFE0F || c == 0x200D || c == 0x20E3 || (c >= 0xE0020 && c <= 0xE007F)) {
          ++i;  // stray joiner or selector
          continue;
        }
        if (utf8::is_emoji_like(c)) {
          out.push_back(unknown_emoji_name(c));
          ++i;
          continue;
        }
      }
      if (std::size_t j = match_emoticon(s, i)) {
        out.push_back(lower(s.substr(i, j - i)));
        i = j;
        continue;
      }
      if (c == '#' && i + 1 < n && is_word_char(s[i + 1])) {
        std::size_t j = i + 1;
        while (j < n && is_word_char(s[j])) ++j;
        out.push_back(lower(s.substr(i, j - i)));
        i = j;
        continue;
      }
      if (segmenter_ && utf8::is_han(c)) {
        std::size_t j = i;
        while (j < n && utf8::is_han(s[j])) ++j;
        for (auto& w : segmenter_->segment(utf8::encode(s.substr(i, j - i)))) out.push_back(std::move(w));
        i = j;
        continue;
      }
      if (is_word_char(c)) {
        const std::size_t j = scan_word(s, i);
        const auto word = s.substr(i, j - i);
        const std::string raw = utf8::encode(word);
        out.push_back(raw == kUrlToken ? raw : lower(word));
        i = j;
        continue;
      }
      if (utf8::is_punct(c)) {
        std::size_t j = i + 1;
        while (j < n && s[j] == c) ++j;
        out.push_back(utf8::encode(s.substr(i, j - i)));
        i = j;
        continue;
      }
      if (c != 0xFFFD) out.push_back(utf8::encode(c));
      ++i;
    }
    return out;
  }

 private:
  const EmojiTable& emoji_;
  const Segmenter* segmenter_;

  bool is_word_char(char32_t c) const {
    if (segmenter_ && utf8::is_han(c)) return false;
    return utf8::is_word(c);
  }

  static std::size_t match_url(std::u32string_view s, std::size_t i) {
    if (i > 0 && utf8::is_ascii_word(s[i - 1])) return 0;
    if (!starts_with_ci(s, i, "http://") && !starts_with_ci(s, i, "https://") && !starts_with_ci(s, i, "www.")) {
      return 0;
    }
    std::size_t j = i;
    while (j < s.size() && s[j] > 0x20 && s[j] < 0x7F) ++j;
    // Give trailing sentence punctuation back to the tokenizer.
    while (j > i + 4) {
      const char32_t t = s[j - 1];
      if (t == '.' || t == ',' || t == ';' || t == ':' || t == '!' || t == '?' || t == ')' || t == ']' ||
          t == '}' || t == '"' || t == '\'') {
        --j;
      } else {
        break;
      }
    }
    return j;
  }

  std::size_t match_emoji_name(std::u32string_view s, std::size_t i, std::vector<std::string>* out) const {
    std::size_t j = i + 1;
    while (j < s.size() && j - i < 80 && s[j] != ':' && !utf8::is_space(s[j])) ++j;
    if (j >= s.size() || s[j] != ':' || j == i + 1) return 0;
    const std::string candidate = lower(s.substr(i, j + 1 - i));
    if (!emoji_.is_name(candidate) && !is_unknown_emoji_name(candidate)) return 0;
    out->push_back(candidate);
    return j + 1;
  }

  static std::size_t match_emoticon(std::u32string_view s, std::size_t i) {
    for (auto e : kEmoticons) {
      if (!starts_with_ci(s, i, e)) continue;
      const std::size_t j = i + e.size();
      if (j < s.size() && utf8::is_word(s[j])) continue;
      return j;
    }
    return 0;
  }

  std::size_t scan_word(std::u32string_view s, std::size_t i) const {
    const std::size_t n = s.size();
    std::size_t j = i;
    while (j < n) {
      const char32_t c = s[j];
      if (is_word_char(c)) {
        ++j;
        continue;
      }
      const bool next_word = j + 1 < n && is_word_char(s[j + 1]);
      if ((c == '\'' || c == 0x2019 || c == '-') && next_word) {
        ++j;
        continue;
      }
      if ((c == '.' || c == ',') && j + 1 < n && is_digit(s[j + 1]) && is_digit(s[j - 1])) {
        ++j;
        continue;
      }
      if (c == '@' && j + 1 < n && utf8::is_ascii_word(s[j + 1])) {
        // Email address: keep the whole address as one token.
        std::size_t k = j + 1;
        bool dotted = false;
        while (k < n && (utf8::is_ascii_word(s[k]) || s[k] == '.' || s[k] == '-')) {
          if (s[k] == '.' && k + 1 < n && utf8::is_ascii_word(s[k + 1])) dotted = true;
          ++k;
        }
        while (k > j + 1 && (s[k - 1] == '.' || s[k - 1] == '-')) --k;
        if (dotted) j = k;
        break;
      }
      break;
    }
    return j;
  }
};

}  // namespace

EmojiTable EmojiTable::load(const std::filesystem::path& tsv) {
  auto in = open_resource(tsv);
  EmojiTable table;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    auto name = trim(std::string_view(line).substr(tab + 1));
    if (name.size() < 3 || name.front() != ':' || name.back() != ':') continue;
    table.add(utf8::decode(std::string_view(line).substr(0, tab)), std::move(name));
  }
  if (table.size() == 0) throw Error("emoji table " + tsv.string() + " is empty", "io");
  return table;
}

const EmojiTable& EmojiTable::bundled() {
  static const EmojiTable table = load(resource_dir() / "emoji.tsv");
  return table;
}

void EmojiTable::add(std::u32string sequence, std::string name) {
  if (sequence.empty()) return;
  max_len_ = std::max(max_len_, sequence.size());
  names_.insert(name);
  // Also accept the sequence without variation selectors, a common encoding.
  std::u32string bare;
  for (char32_t c : sequence) {
    if (c != 0xFE0F) bare.push_back(c);
  }
  if (!bare.empty() && bare != sequence) by_sequence_.emplace(std::move(bare), name);
  by_sequence_[std::move(sequence)] = std::move(name);
}

std::size_t EmojiTable::match(std::u32string_view text, std::size_t pos, std::string* name) const {
  const std::size_t limit = std::min(max_len_, text.size() - pos);
  for (std::size_t len = limit; len >= 1; --len) {
    auto it = by_sequence_.find(std::u32string(text.substr(pos, len)));
    if (it != by_sequence_.end()) {
      // Swallow a trailing variation selector left over from a bare match.
      std::size_t used = len;
      if (pos + used < text.size() && text[pos + used] == 0xFE0F) ++used;
      if (name) *name = it->second;
      return used;
    }
  }
  return 0;
}

TraditionalToSimplified TraditionalToSimplified::load(const std::filesystem::path& tsv) {
  auto in = open_resource(tsv);
  TraditionalToSimplified t2s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(tsv.string() + ":" + std::to_string(line_no) + ": expected two columns", "parse");
    const auto from = utf8::decode(std::string_view(line).substr(0, tab));
    const auto to = utf8::decode(trim(std::string_view(line).substr(tab + 1)));
    if (from.size() != 1 || to.size() != 1) {
      throw Error(tsv.string() + ":" + std::to_string(line_no) + ": mapping must be codepoint to codepoint", "parse");
    }
    auto [it, inserted] = t2s.table_.emplace(from[0], to[0]);
    if (!inserted && it->second != to[0]) {
      throw Error(tsv.string() + ":" + std::to_string(line_no) + ": conflicting mapping", "parse");
    }
  }
  return t2s;
}

const TraditionalToSimplified& TraditionalToSimplified::bundled() {
  static const TraditionalToSimplified t2s = load(resource_dir() / "t2s.tsv");
  return t2s;
}

char32_t TraditionalToSimplified::map(char32_t cp) const {
  auto it = table_.find(cp);
  return it == table_.end() ? cp : it->second;
}

std::string TraditionalToSimplified::convert(std::string_view text) const {
  auto cps = utf8::decode(text);
  for (auto& c : cps) c = map(c);
  return utf8::encode(cps);
}

DictionarySegmenter DictionarySegmenter::load(const std::filesystem::path& tsv) {
  auto in = open_resource(tsv);
  DictionarySegmenter seg;
  std::string line;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    seg.add_word(std::string_view(line).substr(0, tab));
  }
  return seg;
}

const DictionarySegmenter& DictionarySegmenter::bundled() {
  static const DictionarySegmenter seg = load(resource_dir() / "zh_dict.tsv");
  return seg;
}

void DictionarySegmenter::add_word(std::string_view word) {
  auto cps = utf8::decode(trim(word));
  if (cps.size() < 2 || cps.size() > 8) return;
  for (char32_t c : cps) {
    if (!utf8::is_han(c)) return;
  }
  max_len_ = std::max(max_len_, cps.size());
  words_.insert(std::move(cps));
}

std::vector<std::string> DictionarySegmenter::segment(std::string_view han_run) const {
  const auto text = utf8::decode(han_run);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = std::min(max_len_, text.size() - i);
    for (; len > 1; --len) {
      if (words_.count(text.substr(i, len))) break;
    }
    out.push_back(utf8::encode(std::u32string_view(text).substr(i, len)));
    i += len;
  }
  return out;
}

std::vector<std::string> TweetNormalizer::operator()(std::string_view text) const {
  return Scanner(*emoji_, nullptr).run(utf8::decode(text));
}

std::vector<std::string> WeiboNormalizer::operator()(std::string_view text) const {
  auto cps = utf8::decode(text);
  for (auto& c : cps) c = t2s_->map(c);
  return Scanner(*emoji_, segmenter_).run(cps);
}

std::vector<std::string> normalize_tweet(std::string_view text) { return TweetNormalizer()(text); }

std::vector<std::string> normalize_weibo_post(std::string_view text, const Segmenter& segmenter) {
  return WeiboNormalizer(segmenter)(text);
}

PostNormalizer normalizer_for(Platform platform) {
  if (platform == Platform::WeiboStyle) return WeiboNormalizer();
  return TweetNormalizer();
}

NormalizedHistory concatenate_history(const UserRecord& user, const PostNormalizer& normalizer) {
  NormalizedHistory h;
  h.user_id = user.user_id;
  h.label = user.label;
  for (const auto& post : user.posts) {
    auto tokens = normalizer(post.text);
    if (tokens.empty()) continue;
    h.post_boundaries.push_back(h.tokens.size());
    for (auto& t : tokens) h.tokens.push_back(std::move(t));
  }
  if (h.tokens.empty()) throw Error("user '" + user.user_id + "' has no tokens after normalization", "empty_history");
  return h;
}

}  // namespace civic_lens
