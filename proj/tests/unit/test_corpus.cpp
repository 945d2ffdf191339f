#include <doctest.h>

#include <set>
#include <sstream>

#include "civic_lens/corpus.hpp"

using namespace civic_lens;

namespace {

LabeledDataset parse(const std::string& text, Platform platform = Platform::TwitterStyle) {
  std::istringstream in(text);
  return parse_jsonl(in, platform);
}

UserRecord user_with_posts(const std::string& id, Label label, int n_original, int n_reposts = 0) {
  UserRecord u;
  u.user_id = id;
  u.label = label;
  for (int i = 0; i < n_original + n_reposts; ++i) {
    Post p;
    p.text = "post " + std::to_string(i);
    char ts[32];
    std::snprintf(ts, sizeof ts, "2021-01-01T%02d:%02d:%02dZ", i / 3600, (i / 60) % 60, i % 60);
    p.timestamp = ts;
    p.is_original = i >= n_reposts;
    u.posts.push_back(p);
  }
  return u;
}

LabeledDataset balanced(int n, Platform platform = Platform::TwitterStyle) {
  LabeledDataset ds;
  ds.platform = platform;
  for (int i = 0; i < n; ++i) {
    ds.users.push_back(user_with_posts("u" + std::to_string(i), i % 2 ? Label::ActiveCitizen : Label::Poster, 1));
  }
  return ds;
}

}  // namespace

TEST_CASE("load_jsonl parses a single record") {
  auto ds = parse(R"({"user_id":"u1","label":"poster","posts":[{"text":"hi"}]})");
  REQUIRE(ds.users.size() == 1);
  CHECK(ds.users[0].user_id == "u1");
  CHECK(ds.users[0].label == Label::Poster);
  REQUIRE(ds.users[0].posts.size() == 1);
  CHECK(ds.users[0].posts[0].text == "hi");
  CHECK(ds.users[0].posts[0].is_original);
}

TEST_CASE("load_jsonl error paths") {
  SUBCASE("empty file") {
    try {
      parse("");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()) == "empty dataset");
    }
  }
  SUBCASE("duplicate id names the id") {
    try {
      parse("{\"user_id\":\"u1\",\"label\":\"poster\",\"posts\":[{\"text\":\"a\"}]}\n"
            "{\"user_id\":\"u1\",\"label\":\"active_citizen\",\"posts\":[{\"text\":\"b\"}]}\n");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == "duplicate_id");
      CHECK(std::string(e.what()).find("u1") != std::string::npos);
    }
  }
  SUBCASE("malformed line reports its number") {
    try {
      parse("{\"user_id\":\"u1\",\"label\":\"poster\",\"posts\":[{\"text\":\"a\"}]}\n{not json\n");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).rfind("line 2", 0) == 0);
    }
  }
  SUBCASE("unknown label") {
    CHECK_THROWS_AS(parse(R"({"user_id":"u1","label":"troll","posts":[{"text":"a"}]})"), Error);
  }
  SUBCASE("blank post text") {
    CHECK_THROWS_AS(parse(R"({"user_id":"u1","label":"poster","posts":[{"text":"  "}]})"), Error);
  }
}

TEST_CASE("load_jsonl orders posts by timestamp and round-trips") {
  auto ds = parse(
      R"({"user_id":"u1","label":"active_citizen","platform":"weibo","verified":true,"posts":[)"
      R"({"text":"late","timestamp":"2021-02-01T00:00:00Z","lang":"zh","is_original":true},)"
      R"({"text":"early","timestamp":"2021-01-01T00:00:00Z","lang":null,"is_original":false}]})",
      Platform::WeiboStyle);
  const auto& u = ds.users[0];
  CHECK(u.posts[0].text == "early");
  CHECK_FALSE(u.posts[0].is_original);
  CHECK(u.verified == std::optional<bool>(true));
  CHECK(u.platform == Platform::WeiboStyle);

  std::ostringstream out;
  write_jsonl(ds, out);
  auto again = parse(out.str(), Platform::WeiboStyle);
  std::ostringstream out2;
  write_jsonl(again, out2);
  CHECK(out.str() == out2.str());
}

TEST_CASE("filter_users applies the post-count boundary") {
  LabeledDataset ds;
  ds.users.push_back(user_with_posts("below", Label::Poster, 29));
  ds.users.push_back(user_with_posts("at", Label::Poster, 30));
  ds.users.push_back(user_with_posts("reposts", Label::ActiveCitizen, 29, 10));
  auto out = filter_users(ds, {});
  REQUIRE(out.users.size() == 1);
  CHECK(out.users[0].user_id == "at");
}

TEST_CASE("filter_users truncates to the most recent posts") {
  LabeledDataset ds;
  ds.platform = Platform::WeiboStyle;
  ds.users.push_back(user_with_posts("big", Label::Poster, 2500));
  auto out = filter_users(ds, {});
  REQUIRE(out.users[0].posts.size() == 2000);
  CHECK(out.users[0].posts.front().text == "post 500");
  CHECK(out.users[0].posts.back().text == "post 2499");

  ds.platform = Platform::TwitterStyle;
  ds.users[0] = user_with_posts("big", Label::Poster, 4000);
  CHECK(filter_users(ds, {}).users[0].posts.size() == 3200);
}

TEST_CASE("filter_users drops dual-role ids, rejects bad config, is idempotent") {
  LabeledDataset ds;
  for (int i = 0; i < 6; ++i) ds.users.push_back(user_with_posts("u" + std::to_string(i), Label::Poster, 25 + 3 * i, i));
  FilterOptions opt;
  opt.dual_role_ids = {"u5"};
  auto once = filter_users(ds, opt);
  for (const auto& u : once.users) CHECK(u.user_id != "u5");
  auto twice = filter_users(once, opt);
  std::ostringstream a, b;
  write_jsonl(once, a);
  write_jsonl(twice, b);
  CHECK(a.str() == b.str());

  opt.drop_dual_role = false;
  CHECK(filter_users(ds, opt).users.size() == once.users.size() + 1);

  FilterOptions bad;
  bad.min_posts = 0;
  CHECK_THROWS_AS(filter_users(ds, bad), Error);
}

TEST_CASE("split_dataset is stratified, disjoint and deterministic") {
  auto ds = balanced(100);
  SplitSpec spec;
  spec.seed = 7;
  auto split = split_dataset(ds, spec);
  CHECK(split.train.users.size() == 70);
  CHECK(split.valid.users.size() == 10);
  CHECK(split.test.users.size() == 20);

  std::set<std::string> ids;
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    int posters = 0;
    for (const auto& u : part->users) {
      CHECK(ids.insert(u.user_id).second);
      posters += u.label == Label::Poster;
    }
    const double share = static_cast<double>(posters) / static_cast<double>(part->users.size());
    CHECK(std::abs(share - 0.5) <= 0.02);
  }
  CHECK(ids.size() == 100);

  auto again = split_dataset(ds, spec);
  for (std::size_t i = 0; i < split.test.users.size(); ++i) {
    CHECK(split.test.users[i].user_id == again.test.users[i].user_id);
  }
  spec.seed = 8;
  auto other = split_dataset(ds, spec);
  bool differs = false;
  for (std::size_t i = 0; i < split.test.users.size(); ++i) {
    differs |= split.test.users[i].user_id != other.test.users[i].user_id;
  }
  CHECK(differs);
}

TEST_CASE("split_dataset property: partition for many sizes and seeds") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 10 + static_cast<int>(rng.below(200));
    LabeledDataset ds;
    for (int i = 0; i < n; ++i) {
      ds.users.push_back(user_with_posts("u" + std::to_string(i), i < 3 || rng.bernoulli(0.4) ? Label::Poster : Label::ActiveCitizen, 1));
    }
    int posters = 0;
    for (auto& u : ds.users) posters += u.label == Label::Poster;
    if (posters < 3 || n - posters < 3) continue;
    SplitSpec spec;
    spec.seed = rng.next();
    auto s = split_dataset(ds, spec);
    CHECK(s.train.users.size() + s.valid.users.size() + s.test.users.size() == ds.users.size());
    std::set<std::string> ids;
    for (const auto* part : {&s.train, &s.valid, &s.test})
      for (const auto& u : part->users) ids.insert(u.user_id);
    CHECK(ids.size() == ds.users.size());
  }
}

TEST_CASE("split_dataset rejects degenerate inputs") {
  LabeledDataset single;
  for (int i = 0; i < 20; ++i) single.users.push_back(user_with_posts("u" + std::to_string(i), Label::Poster, 1));
  CHECK_THROWS_AS(split_dataset(single, {}), Error);
  CHECK_THROWS_AS(split_dataset(balanced(8), {}), Error);
  SplitSpec bad;
  bad.test_frac = 0.3;
  CHECK_THROWS_AS(split_dataset(balanced(20), bad), Error);
}

TEST_CASE("generate_synthetic plants class-exclusive markers deterministically") {
  SyntheticSpec spec;
  spec.n_users = 200;
  spec.posts_per_user = 50;
  spec.planted = {{Label::Poster, {"soros"}}, {Label::ActiveCitizen, {"slightly"}}};
  spec.seed = 3;
  auto ds = generate_synthetic(spec);
  REQUIRE(ds.users.size() == 200);
  int poster_df = 0, other_df = 0;
  for (const auto& u : ds.users) {
    bool has = false;
    for (const auto& p : u.posts) has |= p.text.find("soros") != std::string::npos;
    (u.label == Label::Poster ? poster_df : other_df) += has;
  }
  CHECK(poster_df > 0);
  CHECK(other_df == 0);

  std::ostringstream a, b;
  write_jsonl(ds, a);
  write_jsonl(generate_synthetic(spec), b);
  CHECK(a.str() == b.str());
}

TEST_CASE("generate_synthetic without planting has no markers and tail planting respects the tail") {
  SyntheticSpec spec;
  spec.n_users = 20;
  spec.p_plant = 0.0;
  auto ds = generate_synthetic(spec);
  for (const auto& u : ds.users)
    for (const auto& p : u.posts) CHECK(p.text.find("soros") == std::string::npos);

  spec.p_plant = 1.0;
  spec.tail_fraction = 0.2;
  ds = generate_synthetic(spec);
  const auto markers = default_planted_tokens();
  for (const auto& u : ds.users) {
    for (std::size_t p = 0; p < u.posts.size(); ++p) {
      bool has = false;
      for (const auto& [label, words] : markers)
        for (const auto& w : words)
          for (const auto& tok : split_whitespace(u.posts[p].text)) has |= tok == w;
      CHECK(has == (p >= 40));
    }
  }
}

TEST_CASE("generate_synthetic rejects overlapping planted lists") {
  SyntheticSpec spec;
  spec.planted = {{Label::Poster, {"x"}}, {Label::ActiveCitizen, {"x"}}};
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
  spec.planted = {};
  spec.n_users = 3;
  CHECK_THROWS_AS(generate_synthetic(spec), Error);
}

TEST_CASE("summarize reports per-label arithmetic") {
  LabeledDataset ds;
  ds.users.push_back(user_with_posts("a", Label::Poster, 3));
  ds.users.push_back(user_with_posts("b", Label::Poster, 5));
  auto rows = summarize(ds);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].posts_mean == doctest::Approx(4.0));
  CHECK(rows[0].posts_total == 8);
  CHECK(rows[0].tokens_total == 16);
  CHECK(rows[0].tokens_median == doctest::Approx(8.0));

  LabeledDataset one;
  one.users.push_back(user_with_posts("a", Label::ActiveCitizen, 4));
  auto r = summarize(one)[0];
  CHECK(r.posts_min == 4);
  CHECK(r.posts_max == 4);
  CHECK(r.posts_mean == 4.0);
  CHECK(r.tokens_min == r.tokens_max);

  std::ostringstream csv;
  write_summary_csv(rows, csv);
  CHECK(csv.str().rfind("label,n_users,posts_min,posts_max,posts_mean,posts_total,tokens_min,tokens_max,tokens_mean,tokens_median\n", 0) == 0);
}

TEST_CASE("summarize totals equal per-user sums on synthetic data") {
  SyntheticSpec spec;
  spec.n_users = 30;
  spec.posts_per_user = 7;
  spec.tokens_per_post = 4;
  auto ds = generate_synthetic(spec);
  std::size_t posts = 0, tokens = 0;
  for (auto& s : summarize(ds)) {
    posts += s.posts_total;
    tokens += s.tokens_total;
  }
  CHECK(posts == 30 * 7);
  CHECK(tokens == 30 * 7 * 4);
}
