#include "civic_lens/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace civic_lens {

using nlohmann::json;

namespace {

Error line_error(std::size_t line_no, const std::string& what) {
  return Error("line " + std::to_string(line_no) + ": " + what, "parse");
}

std::optional<std::string> optional_string(const json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw line_error(line_no, std::string("'") + key + "' must be a string or null");
  return it->get<std::string>();
}

Post parse_post(const json& obj, std::size_t line_no) {
  if (!obj.is_object()) throw line_error(line_no, "post must be an object");
  auto text = obj.find("text");
  if (text == obj.end() || !text->is_string()) throw line_error(line_no, "post missing string 'text'");
  Post post;
  post.text = text->get<std::string>();
  if (trim(post.text).empty()) throw line_error(line_no, "post text is empty");
  post.timestamp = optional_string(obj, "timestamp", line_no);
  post.lang = optional_string(obj, "lang", line_no);
  if (post.lang && trim(*post.lang).empty()) throw line_error(line_no, "post lang is empty");
  if (auto it = obj.find("is_original"); it != obj.end() && !it->is_null()) {
    if (!it->is_boolean()) throw line_error(line_no, "'is_original' must be boolean");
    post.is_original = it->get<bool>();
  }
  return post;
}

void order_by_timestamp(std::vector<Post>& posts) {
  const bool all_stamped = std::all_of(posts.begin(), posts.end(), [](const Post& p) { return p.timestamp.has_value(); });
  if (!all_stamped) return;
  std::stable_sort(posts.begin(), posts.end(),
                   [](const Post& a, const Post& b) { return *a.timestamp < *b.timestamp; });
}

}  // namespace

LabeledDataset parse_jsonl(std::istream& in, Platform platform, std::string provenance) {
  LabeledDataset ds;
  ds.platform = platform;
  ds.provenance = std::move(provenance);
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw line_error(line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!obj.is_object()) throw line_error(line_no, "record must be a JSON object");
    UserRecord user;
    auto id = obj.find("user_id");
    if (id == obj.end() || !id->is_string() || id->get<std::string>().empty()) {
      throw line_error(line_no, "missing string 'user_id'");
    }
    user.user_id = id->get<std::string>();
    auto label = obj.find("label");
    if (label == obj.end() || !label->is_string()) throw line_error(line_no, "missing string 'label'");
    user.label = parse_label(label->get<std::string>());
    user.platform = platform;
    if (auto it = obj.find("platform"); it != obj.end() && !it->is_null()) {
      if (!it->is_string()) throw line_error(line_no, "'platform' must be a string");
      user.platform = parse_platform(it->get<std::string>());
    }
    if (auto it = obj.find("verified"); it != obj.end() && !it->is_null()) {
      if (!it->is_boolean()) throw line_error(line_no, "'verified' must be boolean or null");
      user.verified = it->get<bool>();
    }
    auto posts = obj.find("posts");
    if (posts == obj.end() || !posts->is_array()) throw line_error(line_no, "missing array 'posts'");
    for (const auto& p : *posts) user.posts.push_back(parse_post(p, line_no));
    order_by_timestamp(user.posts);
    if (!seen.insert(user.user_id).second) {
      throw Error("duplicate user_id '" + user.user_id + "' at line " + std::to_string(line_no), "duplicate_id");
    }
    ds.users.push_back(std::move(user));
  }
  if (ds.users.empty()) throw Error("empty dataset", "empty_dataset");
  return ds;
}

LabeledDataset load_jsonl(const std::filesystem::path& path, Platform platform) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string(), "io");
  return parse_jsonl(in, platform, path.string());
}

void write_jsonl(const LabeledDataset& ds, std::ostream& out) {
  for (const auto& user : ds.users) {
    json posts = json::array();
    for (const auto& p : user.posts) {
      posts.push_back({{"text", p.text},
                       {"timestamp", p.timestamp ? json(*p.timestamp) : json(nullptr)},
                       {"lang", p.lang ? json(*p.lang) : json(nullptr)},
                       {"is_original", p.is_original}});
    }
    json obj = {{"user_id", user.user_id},
                {"label", std::string(to_string(user.label))},
                {"platform", std::string(to_string(user.platform))},
                {"verified", user.verified ? json(*user.verified) : json(nullptr)},
                {"posts", std::move(posts)}};
    out << obj.dump() << '\n';
  }
}

void save_jsonl(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string(), "io");
  write_jsonl(ds, out);
}

int default_max_posts(Platform platform) { return platform == Platform::WeiboStyle ? 2000 : 3200; }

LabeledDataset filter_users(const LabeledDataset& ds, const FilterOptions& options) {
  if (options.min_posts < 1) throw Error("min_posts must be >= 1", "config");
  const int max_posts = options.max_posts.value_or(default_max_posts(ds.platform));
  if (max_posts < options.min_posts) throw Error("max_posts must be >= min_posts", "config");

  LabeledDataset out;
  out.platform = ds.platform;
  out.provenance = ds.provenance;
  for (const auto& user : ds.users) {
    if (options.drop_dual_role && options.dual_role_ids.count(user.user_id)) continue;
    UserRecord kept = user;
    kept.posts.clear();
    for (const auto& p : user.posts) {
      if (p.is_original) kept.posts.push_back(p);
    }
    if (static_cast<int>(kept.posts.size()) < options.min_posts) continue;
    if (static_cast<int>(kept.posts.size()) > max_posts) {
      kept.posts.erase(kept.posts.begin(), kept.posts.end() - max_posts);
    }
    out.users.push_back(std::move(kept));
  }
  return out;
}

std::unordered_set<std::string> load_id_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open id list " + path.string(), "io");
  std::unordered_set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    auto id = trim(line);
    if (id.empty() || id[0] == '#') continue;
    ids.insert(std::move(id));
  }
  return ids;
}

DatasetSplit split_dataset(const LabeledDataset& ds, const SplitSpec& spec) {
  const double total = spec.train_frac + spec.valid_frac + spec.test_frac;
  if (std::abs(total - 1.0) > 1e-9) throw Error("split fractions must sum to 1", "config");
  if (spec.train_frac < 0 || spec.valid_frac < 0 || spec.test_frac < 0) {
    throw Error("split fractions must be non-negative", "config");
  }
  if (ds.users.size() < 10) throw Error("need at least 10 users to split", "too_small");

  std::vector<std::size_t> by_label[2];
  for (std::size_t i = 0; i < ds.users.size(); ++i) by_label[label_to_int(ds.users[i].label)].push_back(i);
  for (const auto& group : by_label) {
    if (group.size() < 3) throw Error("each label needs at least 3 users to stratify", "stratify");
  }

  // 0 = train, 1 = valid, 2 = test
  std::vector<int> assignment(ds.users.size(), 0);
  Rng rng(spec.seed);
  for (auto& group : by_label) {
    auto order = group;
    rng.shuffle(order);
    const auto n = static_cast<double>(order.size());
    const auto n_train = static_cast<std::size_t>(std::llround(n * spec.train_frac));
    const auto n_valid = std::min(order.size() - n_train, static_cast<std::size_t>(std::llround(n * spec.valid_frac)));
    for (std::size_t k = 0; k < order.size(); ++k) {
      assignment[order[k]] = k < n_train ? 0 : (k < n_train + n_valid ? 1 : 2);
    }
  }

  DatasetSplit out;
  for (auto* part : {&out.train, &out.valid, &out.test}) {
    part->platform = ds.platform;
    part->provenance = ds.provenance;
  }
  LabeledDataset* parts[3] = {&out.train, &out.valid, &out.test};
  for (std::size_t i = 0; i < ds.users.size(); ++i) parts[assignment[i]]->users.push_back(ds.users[i]);
  return out;
}

std::map<Label, std::vector<std::string>> default_planted_tokens() {
  return {
      {Label::Poster,
       // the two regional-indicator letters are standalone emoji and normalize to single tokens
       {"illegals", "msm", "\xF0\x9F\x87\xBA", "\xF0\x9F\x87\xB8", "soros", "brennan", "communist", "schumer", "leftist",
        "rino"}},
      {Label::ActiveCitizen,
       {"slightly", "empathy", "theories", "generally", "equivalent", "necessarily", "confusing", "fewer", "quotes",
        "actively"}},
  };
}

LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_users <= 0 || spec.n_users % 2 != 0) throw Error("n_users must be positive and even", "config");
  if (spec.posts_per_user <= 0 || spec.tokens_per_post <= 0 || spec.noise_vocab_size <= 0) {
    throw Error("posts_per_user, tokens_per_post and noise_vocab_size must be positive", "config");
  }
  if (spec.p_plant < 0 || spec.p_plant > 1) throw Error("p_plant must lie in [0, 1]", "config");
  if (spec.tail_fraction <= 0 || spec.tail_fraction > 1) throw Error("tail_fraction must lie in (0, 1]", "config");
  const auto& planted = spec.planted.empty() ? default_planted_tokens() : spec.planted;
  std::unordered_set<std::string> seen;
  for (const auto& [label, tokens] : planted) {
    for (const auto& t : tokens) {
      if (!seen.insert(t).second) throw Error("planted token '" + t + "' is shared between labels", "config");
    }
  }
  for (Label label : {Label::Poster, Label::ActiveCitizen}) {
    auto it = planted.find(label);
    if (spec.p_plant > 0 && (it == planted.end() || it->second.empty())) {
      throw Error("planted token list missing for label " + std::string(to_string(label)), "config");
    }
  }

  const int width = static_cast<int>(std::to_string(spec.noise_vocab_size - 1).size());
  std::vector<std::string> noise(static_cast<std::size_t>(spec.noise_vocab_size));
  for (int i = 0; i < spec.noise_vocab_size; ++i) {
    std::string digits = std::to_string(i);
    noise[static_cast<std::size_t>(i)] = "w" + std::string(static_cast<std::size_t>(std::max(width, 4)) - std::min(digits.size(), static_cast<std::size_t>(std::max(width, 4))), '0') + digits;
    if (seen.count(noise[static_cast<std::size_t>(i)])) throw Error("planted token collides with noise vocabulary", "config");
  }

  const int first_plantable =
      static_cast<int>(std::floor(spec.posts_per_user * (1.0 - spec.tail_fraction) + 1e-9));
  Rng rng(spec.seed);
  LabeledDataset ds;
  ds.platform = spec.platform;
  ds.provenance = "synthetic(seed=" + std::to_string(spec.seed) + ")";
  for (int u = 0; u < spec.n_users; ++u) {
    UserRecord user;
    char id[32];
    std::snprintf(id, sizeof id, "syn%05d", u);
    user.user_id = id;
    user.label = u % 2 == 0 ? Label::Poster : Label::ActiveCitizen;
    user.platform = spec.platform;
    user.verified = false;
    const auto& markers = planted.count(user.label) ? planted.at(user.label) : std::vector<std::string>{};
    for (int p = 0; p < spec.posts_per_user; ++p) {
      std::vector<std::string> words(static_cast<std::size_t>(spec.tokens_per_post));
      for (auto& w : words) w = noise[rng.below(noise.size())];
      const bool plant = rng.bernoulli(spec.p_plant);
      if (plant && p >= first_plantable && !markers.empty()) {
        words[rng.below(words.size())] = markers[rng.below(markers.size())];
      }
      std::string text;
      for (std::size_t k = 0; k < words.size(); ++k) {
        if (k) text.push_back(' ');
        text += words[k];
      }
      char ts[32];
      std::snprintf(ts, sizeof ts, "2020-01-01T%02d:%02d:%02dZ", (p / 3600) % 24, (p / 60) % 60, p % 60);
      Post post;
      post.text = std::move(text);
      post.timestamp = std::string(ts);
      post.lang = spec.platform == Platform::WeiboStyle ? "zh" : "en";
      user.posts.push_back(std::move(post));
    }
    ds.users.push_back(std::move(user));
  }
  return ds;
}

std::vector<LabelSummary> summarize(const LabeledDataset& ds) {
  if (ds.users.empty()) throw Error("cannot summarize an empty dataset", "empty_dataset");
  std::vector<LabelSummary> rows;
  for (Label label : {Label::Poster, Label::ActiveCitizen}) {
    std::vector<std::size_t> posts, tokens;
    for (const auto& u : ds.users) {
      if (u.label != label) continue;
      posts.push_back(u.posts.size());
      std::size_t n = 0;
      for (const auto& p : u.posts) n += split_whitespace(p.text).size();
      tokens.push_back(n);
    }
    if (posts.empty()) continue;
    LabelSummary s;
    s.label = label;
    s.n_users = posts.size();
    s.posts_min = *std::min_element(posts.begin(), posts.end());
    s.posts_max = *std::max_element(posts.begin(), posts.end());
    for (auto p : posts) s.posts_total += p;
    s.posts_mean = static_cast<double>(s.posts_total) / static_cast<double>(s.n_users);
    s.tokens_min = *std::min_element(tokens.begin(), tokens.end());
    s.tokens_max = *std::max_element(tokens.begin(), tokens.end());
    for (auto t : tokens) s.tokens_total += t;
    s.tokens_mean = static_cast<double>(s.tokens_total) / static_cast<double>(s.n_users);
    std::sort(tokens.begin(), tokens.end());
    const std::size_t mid = tokens.size() / 2;
    s.tokens_median = tokens.size() % 2 ? static_cast<double>(tokens[mid])
                                        : 0.5 * static_cast<double>(tokens[mid - 1] + tokens[mid]);
    rows.push_back(s);
  }
  return rows;
}

void write_summary_csv(const std::vector<LabelSummary>& rows, std::ostream& out) {
  out << "label,n_users,posts_min,posts_max,posts_mean,posts_total,tokens_min,tokens_max,tokens_mean,tokens_median\n";
  for (const auto& s : rows) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.4f,%zu,%zu,%zu,%.4f,%.1f\n", std::string(to_string(s.label)).c_str(),
                  s.n_users, s.posts_min, s.posts_max, s.posts_mean, s.posts_total, s.tokens_min, s.tokens_max,
                  s.tokens_mean, s.tokens_median);
    out << buf;
  }
}

}  // namespace civic_lens
