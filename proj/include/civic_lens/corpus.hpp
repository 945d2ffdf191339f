#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "civic_lens/common.hpp"

namespace civic_lens {

struct Post {
  std::string text;
  std::optional<std::string> timestamp;
  std::optional<std::string> lang;
  bool is_original = true;
};

struct UserRecord {
  std::string user_id;
  Label label = Label::Poster;
  Platform platform = Platform::TwitterStyle;
  std::vector<Post> posts;
  std::optional<bool> verified;
};

struct LabeledDataset {
  std::vector<UserRecord> users;
  Platform platform = Platform::TwitterStyle;
  std::string provenance;
};

/// Parses the one-user-per-line JSONL format. Records keep input order; each
/// user's posts are stably sorted by timestamp when every post carries one.
LabeledDataset parse_jsonl(std::istream& in, Platform platform, std::string provenance = {});
LabeledDataset load_jsonl(const std::filesystem::path& path, Platform platform);
void write_jsonl(const LabeledDataset& ds, std::ostream& out);
void save_jsonl(const LabeledDataset& ds, const std::filesystem::path& path);

/// Post cap applied by filter_users when none is given: 2,000 for Weibo and
/// 3,200 for Twitter.
int default_max_posts(Platform platform);

struct FilterOptions {
  int min_posts = 30;
  std::optional<int> max_posts;
  bool drop_dual_role = true;
  std::unordered_set<std::string> dual_role_ids;
};

/// Drops reposts, users below `min_posts` originals and listed dual-role users,
/// then keeps each user's `max_posts` most recent posts. Idempotent.
LabeledDataset filter_users(const LabeledDataset& ds, const FilterOptions& options);

/// One user_id per line; blank lines and '#' comments ignored.
std::unordered_set<std::string> load_id_list(const std::filesystem::path& path);

struct SplitSpec {
  double train_frac = 0.70;
  double valid_frac = 0.10;
  double test_frac = 0.20;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

/// Stratified split: each label's users are shuffled with the seed and cut by
/// the fractions (rounded per class). Users keep dataset order inside a split.
DatasetSplit split_dataset(const LabeledDataset& ds, const SplitSpec& spec);

struct SyntheticSpec {
  int n_users = 200;
  int posts_per_user = 50;
  int tokens_per_post = 10;
  std::map<Label, std::vector<std::string>> planted;
  int noise_vocab_size = 5000;
  double p_plant = 0.3;
  /// Only posts in the final `tail_fraction` of a history may receive a
  /// planted token; 1.0 plants anywhere.
  double tail_fraction = 1.0;
  std::uint64_t seed = 0;
  Platform platform = Platform::TwitterStyle;
};

/// Marker words drawn from the strongest unigram correlates reported for each
/// class on Twitter.
std::map<Label, std::vector<std::string>> default_planted_tokens();

/// Planted-signal corpus: every post is `tokens_per_post` uniform noise words
/// ("w0000".."wNNNN"); with probability p_plant one position of a class-c
/// user's post is replaced by a uniformly chosen planted token of class c.
LabeledDataset generate_synthetic(const SyntheticSpec& spec);

struct LabelSummary {
  Label label;
  std::size_t n_users = 0;
  std::size_t posts_min = 0, posts_max = 0, posts_total = 0;
  double posts_mean = 0.0;
  std::size_t tokens_min = 0, tokens_max = 0;
  double tokens_mean = 0.0, tokens_median = 0.0;
  std::size_t tokens_total = 0;
};

/// Per-label statistics; tokens are whitespace-delimited words of the raw text.
std::vector<LabelSummary> summarize(const LabeledDataset& ds);
void write_summary_csv(const std::vector<LabelSummary>& rows, std::ostream& out);

}  // namespace civic_lens
