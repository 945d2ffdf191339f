#include "civic_lens/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include "civic_lens/analysis.hpp"
#include "civic_lens/explain.hpp"
#include "civic_lens/features.hpp"

namespace civic_lens {

namespace fs = std::filesystem;
using nlohmann::json;

// -------------------------------------------------------------------- config

namespace {

std::string interpolate_string(const std::string& s) {
  std::string out;
  std::size_t i = 0;
  while (i < s.size()) {
    if (s.compare(i, 2, "${") != 0) {
      out += s[i++];
      continue;
    }
    const auto close = s.find('}', i + 2);
    if (close == std::string::npos) throw Error("unterminated ${ in config value '" + s + "'", "config");
    std::string name = s.substr(i + 2, close - i - 2);
    std::optional<std::string> fallback;
    if (auto dash = name.find(":-"); dash != std::string::npos) {
      fallback = name.substr(dash + 2);
      name = name.substr(0, dash);
    }
    const char* value = std::getenv(name.c_str());
    if (value && *value)
      out += value;
    else if (fallback)
      out += *fallback;
    else
      throw Error("environment variable " + name + " is not set (referenced in config)", "config");
    i = close + 1;
  }
  return out;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string hash_json(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace

json interpolate_env(const json& j) {
  if (j.is_string()) return interpolate_string(j.get<std::string>());
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = interpolate_env(it.value());
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(interpolate_env(v));
    return out;
  }
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& input, const Overrides& overrides, const fs::path& base_dir) {
  if (!input.is_object()) throw Error("config must be a JSON object", "config");
  PipelineConfig c;
  c.raw = interpolate_env(input);
  json& raw = c.raw;
  try {
    if (overrides.model) raw["train"]["model"] = *overrides.model;
    if (overrides.fusion) raw["train"]["hier"]["fusion"] = *overrides.fusion;
    if (overrides.seed) raw["train"]["seeds"] = json::array({*overrides.seed});

    const json paths = raw.value("paths", json::object());
    c.platform = parse_platform(get_or<std::string>(paths, "platform", "twitter"));
    c.data_path = resolve(base_dir, get_or<std::string>(paths, "data", ""));
    c.lexicon_path = resolve(base_dir, get_or<std::string>(paths, "lexicon", ""));
    c.dual_role_path = resolve(base_dir, get_or<std::string>(paths, "dual_role_ids", ""));
    if (overrides.out)
      c.runs_dir = *overrides.out;
    else if (const char* env = std::getenv("CIVIC_LENS_RUNS"); env && *env)
      c.runs_dir = env;
    else
      c.runs_dir = resolve(base_dir, get_or<std::string>(paths, "runs", "runs"));
    for (const auto& p : {c.lexicon_path, c.dual_role_path})
      if (!p.empty() && !fs::exists(p)) throw Error("config path does not exist: " + p.string(), "missing_artifact");

    const json corpus = raw.value("corpus", json::object());
    c.filter.min_posts = get_or(corpus, "min_posts", c.filter.min_posts);
    if (corpus.contains("max_posts") && !corpus.at("max_posts").is_null())
      c.filter.max_posts = corpus.at("max_posts").get<int>();
    c.filter.drop_dual_role = get_or(corpus, "drop_dual_role", c.filter.drop_dual_role);
    const json split = corpus.value("split", json::object());
    c.split.train_frac = get_or(split, "train", c.split.train_frac);
    c.split.valid_frac = get_or(split, "valid", c.split.valid_frac);
    c.split.test_frac = get_or(split, "test", c.split.test_frac);
    c.split.seed = get_or<std::uint64_t>(split, "seed", c.split.seed);

    const json syn = raw.value("synthetic", json::object());
    c.synthetic.n_users = get_or(syn, "n_users", c.synthetic.n_users);
    c.synthetic.posts_per_user = get_or(syn, "posts_per_user", c.synthetic.posts_per_user);
    c.synthetic.tokens_per_post = get_or(syn, "tokens_per_post", c.synthetic.tokens_per_post);
    c.synthetic.noise_vocab_size = get_or(syn, "noise_vocab_size", c.synthetic.noise_vocab_size);
    c.synthetic.p_plant = get_or(syn, "p_plant", c.synthetic.p_plant);
    c.synthetic.tail_fraction = get_or(syn, "tail_fraction", c.synthetic.tail_fraction);
    c.synthetic.seed = get_or<std::uint64_t>(syn, "seed", c.synthetic.seed);
    c.synthetic.platform = c.platform;
    if (syn.contains("planted")) {
      for (auto it = syn.at("planted").begin(); it != syn.at("planted").end(); ++it)
        c.synthetic.planted[parse_label(it.key())] = it.value().get<std::vector<std::string>>();
    } else {
      c.synthetic.planted = default_planted_tokens();
    }

    json train = raw.value("train", json::object());
    if (raw.contains("features")) train["vocabulary"] = raw.at("features");
    train["lexicon_path"] = c.lexicon_path.string();
    c.train = TrainConfig::from_json(train);
    c.features = c.train.vocabulary;
    c.train.validate();

    const json ex = raw.value("explain", json::object());
    c.explain.top_k = get_or(ex, "top_k", c.explain.top_k);
    c.explain.merge = get_or(ex, "merge", c.explain.merge);
    c.explain.max_users = get_or(ex, "max_users", c.explain.max_users);
    parse_merge_rule(c.explain.merge);

    const json an = raw.value("analysis", json::object());
    c.analysis.ngram_max = get_or(an, "ngram_max", c.analysis.ngram_max);
    c.analysis.min_count = get_or(an, "min_count", c.analysis.min_count);
    c.analysis.alpha = get_or(an, "alpha", c.analysis.alpha);
    c.analysis.top_k = get_or(an, "top_k", c.analysis.top_k);
    c.analysis.wordcloud_k = get_or(an, "wordcloud_k", c.analysis.wordcloud_k);
    c.analysis.bonferroni = get_or(an, "bonferroni", c.analysis.bonferroni);
    c.analysis.permutations = get_or(an, "permutations", c.analysis.permutations);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed config: ") + e.what(), "config");
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string(), "missing_artifact");
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + " is not valid JSON: " + e.what(), "config");
  }
  return from_json(j, overrides, path.parent_path());
}

std::string PipelineConfig::data_hash() const {
  json planted = json::object();
  for (const auto& [label, tokens] : synthetic.planted) planted[std::string(to_string(label))] = tokens;
  return hash_json({{"data", data_path.string()},
                    {"platform", to_string(platform)},
                    {"dual_role_ids", dual_role_path.string()},
                    {"min_posts", filter.min_posts},
                    {"max_posts", filter.max_posts ? json(*filter.max_posts) : json()},
                    {"drop_dual_role", filter.drop_dual_role},
                    {"split", {split.train_frac, split.valid_frac, split.test_frac, split.seed}},
                    {"synthetic",
                     {{"n_users", synthetic.n_users},
                      {"posts_per_user", synthetic.posts_per_user},
                      {"tokens_per_post", synthetic.tokens_per_post},
                      {"noise_vocab_size", synthetic.noise_vocab_size},
                      {"p_plant", synthetic.p_plant},
                      {"tail_fraction", synthetic.tail_fraction},
                      {"seed", synthetic.seed},
                      {"planted", planted}}}});
}

std::string PipelineConfig::config_hash() const {
  json t = train.to_json();
  t.erase("seeds");
  return hash_json({{"data", data_hash()}, {"train", t}});
}

// --------------------------------------------------------------- histories

json history_to_json(const NormalizedHistory& h) {
  return {{"user_id", h.user_id},
          {"label", to_string(h.label)},
          {"tokens", h.tokens},
          {"post_boundaries", h.post_boundaries}};
}

NormalizedHistory history_from_json(const json& j) {
  NormalizedHistory h;
  h.user_id = j.at("user_id").get<std::string>();
  h.label = parse_label(j.at("label").get<std::string>());
  h.tokens = j.at("tokens").get<std::vector<std::string>>();
  h.post_boundaries = j.at("post_boundaries").get<std::vector<std::size_t>>();
  return h;
}

namespace {

void write_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string(), "io");
    out << content;
    if (!out) throw Error("write failed for " + tmp.string(), "io");
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string(), "missing_artifact");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(path.string() + " is not valid JSON: " + e.what(), "parse");
  }
}

}  // namespace

void save_histories(const std::vector<NormalizedHistory>& hs, const fs::path& path) {
  std::string s;
  for (const auto& h : hs) s += history_to_json(h).dump() + "\n";
  write_atomic(path, s);
}

std::vector<NormalizedHistory> load_histories(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string(), "missing_artifact");
  std::vector<NormalizedHistory> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(history_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what(), "parse");
    }
  }
  return out;
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(read_file(path))); }

// ----------------------------------------------------------------- manifests

namespace {

constexpr const char* kVersion = "0.1.0";

fs::path manifest_path(const fs::path& dir, const std::string& stage) { return dir / ("manifest." + stage + ".json"); }

// Outputs are current when the manifest matches the hash and inputs and every
// recorded output still has its recorded content.
bool is_current(const fs::path& dir, const std::string& stage, const std::string& hash,
                const std::vector<fs::path>& inputs) {
  const auto mp = manifest_path(dir, stage);
  if (!fs::exists(mp)) return false;
  json m;
  try {
    m = json::parse(read_file(mp));
  } catch (const json::exception&) {
    return false;
  }
  if (m.value("config_hash", "") != hash) return false;
  const json recorded_inputs = m.value("inputs", json::object());
  if (recorded_inputs.size() != inputs.size()) return false;
  for (const auto& p : inputs)
    if (!recorded_inputs.contains(p.string()) || !fs::exists(p) || recorded_inputs[p.string()] != file_hash(p))
      return false;
  for (auto it = m["outputs"].begin(); it != m["outputs"].end(); ++it) {
    const fs::path out(it.key());
    if (!fs::exists(out) || file_hash(out) != it.value()) return false;
  }
  return true;
}

void write_manifest(const fs::path& dir, const std::string& stage, const std::string& hash,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  json in = json::object(), out = json::object();
  for (const auto& p : inputs) in[p.string()] = file_hash(p);
  for (const auto& p : outputs) out[p.string()] = file_hash(p);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  write_atomic(manifest_path(dir, stage), json{{"stage", stage},
                                               {"config_hash", hash},
                                               {"version", kVersion},
                                               {"created", ts.str()},
                                               {"inputs", in},
                                               {"outputs", out}}
                                              .dump(2));
}

// The upstream stage must have run for this hash and its outputs must be unchanged.
void require_stage(const fs::path& dir, const std::string& stage, const std::string& hash) {
  const auto mp = manifest_path(dir, stage);
  if (!fs::exists(mp))
    throw Error("missing artifact from stage '" + stage + "' in " + dir.string() + "; run `" + stage + "` first",
                "missing_artifact");
  const json m = read_json(mp);
  if (m.value("config_hash", "") != hash)
    throw Error("stage '" + stage + "' output was produced under config " + m.value("config_hash", "?") +
                    ", current config is " + hash + "; rerun `" + stage + "`",
                "stale");
  for (auto it = m["outputs"].begin(); it != m["outputs"].end(); ++it) {
    const fs::path out(it.key());
    if (!fs::exists(out))
      throw Error("missing artifact " + out.string() + " from stage '" + stage + "'; run `" + stage + "` again",
                  "missing_artifact");
    if (file_hash(out) != it.value())
      throw Error("artifact " + out.string() + " changed after stage '" + stage + "' ran; rerun `" + stage + "`",
                  "stale");
  }
}

// Advisory lock held for the duration of a stage.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto p = (dir / ".lock").string();
    fd_ = ::open(p.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw Error("cannot open lock file " + p, "io");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error("run directory " + dir.string() + " is locked by another process", "locked");
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

std::string model_label(const TrainConfig& t) {
  std::string s(to_string(t.kind));
  if (t.kind == ModelKind::Hier || t.kind == ModelKind::HierTruncated) s += "/" + std::string(to_string(t.hier.fusion));
  return s;
}

std::string fmt(double v, const char* f = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

// ------------------------------------------------------------------ pipeline

Pipeline::Pipeline(PipelineConfig config, bool force) : config_(std::move(config)), force_(force) {}

const std::vector<std::string>& Pipeline::stages() {
  static const std::vector<std::string> s{"ingest",   "synth", "summarize", "preprocess", "featurize",
                                          "train",    "evaluate", "explain", "analyze",   "report"};
  return s;
}

StageResult Pipeline::run(const std::string& stage) {
  DirLock lock(config_.runs_dir);
  if (stage == "ingest") return ingest();
  if (stage == "synth") return synth();
  if (stage == "summarize") return summarize();
  if (stage == "preprocess") return preprocess();
  if (stage == "featurize") return featurize();
  if (stage == "train") return train();
  if (stage == "evaluate") return evaluate();
  if (stage == "explain") return explain();
  if (stage == "analyze") return analyze();
  if (stage == "report") return report();
  throw Error("unknown stage '" + stage + "'", "config");
}

StageResult Pipeline::ingest() {
  const auto dir = config_.data_dir();
  const auto out = dir / "dataset.jsonl";
  const auto hash = config_.data_hash();
  if (config_.data_path.empty()) throw Error("paths.data is not set; use `synth` for a synthetic corpus", "config");
  if (!fs::exists(config_.data_path))
    throw Error("input data " + config_.data_path.string() + " does not exist", "missing_artifact");
  std::vector<fs::path> inputs{config_.data_path};
  if (!config_.dual_role_path.empty()) inputs.push_back(config_.dual_role_path);
  if (!force_ && is_current(dir, "dataset", hash, inputs)) return {"ingest", true, {out}};

  auto ds = load_jsonl(config_.data_path, config_.platform);
  const std::size_t before = ds.users.size();
  FilterOptions f = config_.filter;
  if (!config_.dual_role_path.empty()) f.dual_role_ids = load_id_list(config_.dual_role_path);
  ds = filter_users(ds, f);
  fs::create_directories(dir);
  save_jsonl(ds, out);
  write_manifest(dir, "dataset", hash, inputs, {out});
  return {"ingest", false, {out}, {{"users_in", before}, {"users_kept", ds.users.size()}, {"data_hash", hash}}};
}

StageResult Pipeline::synth() {
  const auto dir = config_.data_dir();
  const auto out = dir / "dataset.jsonl";
  const auto hash = config_.data_hash();
  if (!force_ && is_current(dir, "dataset", hash, {})) return {"synth", true, {out}};
  const auto ds = generate_synthetic(config_.synthetic);
  fs::create_directories(dir);
  save_jsonl(ds, out);
  write_manifest(dir, "dataset", hash, {}, {out});
  return {"synth", false, {out}, {{"users", ds.users.size()}, {"data_hash", hash}}};
}

StageResult Pipeline::summarize() {
  const auto dir = config_.data_dir();
  const auto hash = config_.data_hash();
  require_stage(dir, "dataset", hash);
  const auto in = dir / "dataset.jsonl";
  const auto out = dir / "summary.csv";
  if (!force_ && is_current(dir, "summarize", hash, {in})) return {"summarize", true, {out}};
  std::ostringstream s;
  write_summary_csv(civic_lens::summarize(load_jsonl(in, config_.platform)), s);
  write_atomic(out, s.str());
  write_manifest(dir, "summarize", hash, {in}, {out});
  return {"summarize", false, {out}};
}

StageResult Pipeline::preprocess() {
  const auto dir = config_.data_dir();
  const auto hash = config_.data_hash();
  require_stage(dir, "dataset", hash);
  const auto in = dir / "dataset.jsonl";
  const std::vector<fs::path> outs{dir / "train.jsonl", dir / "valid.jsonl", dir / "test.jsonl"};
  if (!force_ && is_current(dir, "preprocess", hash, {in})) return {"preprocess", true, outs};
  const auto split = split_dataset(load_jsonl(in, config_.platform), config_.split);
  const auto norm = normalizer_for(config_.platform);
  json counts = json::object();
  const LabeledDataset* parts[] = {&split.train, &split.valid, &split.test};
  const char* names[] = {"train", "valid", "test"};
  for (int i = 0; i < 3; ++i) {
    std::vector<NormalizedHistory> hs;
    for (const auto& u : parts[i]->users) hs.push_back(concatenate_history(u, norm));
    save_histories(hs, outs[static_cast<std::size_t>(i)]);
    counts[names[i]] = hs.size();
  }
  write_manifest(dir, "preprocess", hash, {in}, outs);
  return {"preprocess", false, outs, counts};
}

StageResult Pipeline::featurize() {
  const auto dir = config_.data_dir();
  const auto hash = config_.data_hash();
  require_stage(dir, "preprocess", hash);
  const std::vector<fs::path> inputs{dir / "train.jsonl", dir / "valid.jsonl", dir / "test.jsonl"};
  const auto fdir = dir / "features";
  // the feature settings are not part of the data hash, so they key the manifest
  const auto fhash = hash_json({{"data", hash}, {"features", config_.train.to_json()["vocabulary"]},
                                {"lexicon", config_.lexicon_path.string()}});
  std::vector<fs::path> outs{fdir / "vocabulary.json", fdir / "tfidf_index.txt", fdir / "lexicon_index.txt"};
  for (const char* s : {"train", "valid", "test"}) {
    outs.push_back(fdir / (std::string("tfidf_") + s + ".csv"));
    outs.push_back(fdir / (std::string("lexicon_") + s + ".csv"));
  }
  if (!force_ && is_current(fdir, "featurize", fhash, inputs)) return {"featurize", true, outs};

  const auto train = load_histories(inputs[0]);
  const auto vocab = build_vocabulary(train, config_.features);
  const auto lex = config_.lexicon_path.empty() ? Lexicon::bundled() : Lexicon::load(config_.lexicon_path);
  write_atomic(outs[0], json{{"config_hash", fhash},
                             {"terms", vocab.terms()},
                             {"doc_freq", vocab.doc_freq()},
                             {"total_freq", vocab.total_freq()},
                             {"n_docs", vocab.n_docs()},
                             {"ngram_max", vocab.ngram_max()}}
                            .dump());
  std::size_t k = 3;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto hs = i == 0 ? train : load_histories(inputs[i]);
    std::ostringstream trip, index, ltrip, lindex;
    write_triplets(tfidf_vectorize(hs, vocab), trip, index);
    write_triplets(lexicon_vectorize(hs, lex), ltrip, lindex);
    write_atomic(outs[k++], trip.str());
    write_atomic(outs[k++], ltrip.str());
    if (i == 0) {
      write_atomic(outs[1], index.str());
      write_atomic(outs[2], lindex.str());
    }
  }
  write_manifest(fdir, "featurize", fhash, inputs, outs);
  return {"featurize", false, outs, {{"vocabulary_size", vocab.size()}, {"lexicon_categories", lex.size()}}};
}

StageResult Pipeline::train() {
  const auto ddir = config_.data_dir();
  require_stage(ddir, "preprocess", config_.data_hash());
  const std::vector<fs::path> inputs{ddir / "train.jsonl", ddir / "valid.jsonl"};
  const auto mdir = config_.model_dir();
  const auto hash = config_.config_hash();
  fs::create_directories(mdir);
  const auto cfg_path = mdir / "config.json";
  write_atomic(cfg_path, json{{"config_hash", hash},
                              {"data_hash", config_.data_hash()},
                              {"model", model_label(config_.train)},
                              {"train", config_.train.to_json()}}
                             .dump(2));

  StageResult res{"train", true, {cfg_path}};
  std::optional<std::vector<NormalizedHistory>> train, valid;
  json runs = json::array();
  for (auto seed : config_.train.seeds) {
    const auto sdir = mdir / std::to_string(seed);
    const std::vector<fs::path> outs{sdir / "checkpoint.json", sdir / "curves.csv", sdir / "train.json"};
    res.outputs.insert(res.outputs.end(), outs.begin(), outs.end());
    if (!force_ && is_current(sdir, "train", hash, inputs)) continue;
    res.skipped = false;
    if (!train) {
      train = load_histories(inputs[0]);
      valid = load_histories(inputs[1]);
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto outcome = train_model(config_.train, *train, *valid, seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto ckpt = outcome.model->checkpoint();
    ckpt.meta["config_hash"] = hash;
    ckpt.meta["seed"] = seed;
    ckpt.meta["best_epoch"] = outcome.best_epoch;
    ckpt.meta["train"] = outcome.meta;
    save_checkpoint(ckpt, outs[0]);
    std::ostringstream curves;
    write_curves_csv(outcome.curve, curves);
    write_atomic(outs[1], curves.str());
    write_atomic(outs[2], json{{"config_hash", hash},
                               {"seed", seed},
                               {"model", model_label(config_.train)},
                               {"best_epoch", outcome.best_epoch},
                               {"wall_seconds", secs},
                               {"meta", outcome.meta},
                               {"optimizer",
                                {{"kind", "adamw"},
                                 {"warmup_fraction", config_.train.warmup_fraction},
                                 {"weight_decay", config_.train.weight_decay}}}}
                              .dump(2));
    write_manifest(sdir, "train", hash, inputs, outs);
    runs.push_back({{"seed", seed}, {"best_epoch", outcome.best_epoch}, {"wall_seconds", secs}});
  }
  res.summary = {{"config_hash", hash}, {"model", model_label(config_.train)}, {"trained", runs}};
  return res;
}

StageResult Pipeline::evaluate() {
  const auto ddir = config_.data_dir();
  require_stage(ddir, "preprocess", config_.data_hash());
  const auto test_path = ddir / "test.jsonl";
  const auto mdir = config_.model_dir();
  const auto hash = config_.config_hash();
  std::optional<std::vector<NormalizedHistory>> test;
  std::vector<RunReport> reports;
  StageResult res{"evaluate", true, {}};
  for (auto seed : config_.train.seeds) {
    const auto sdir = mdir / std::to_string(seed);
    require_stage(sdir, "train", hash);
    const auto out = sdir / "report.json";
    const std::vector<fs::path> inputs{test_path, sdir / "checkpoint.json"};
    if (force_ || !is_current(sdir, "evaluate", hash, inputs)) {
      res.skipped = false;
      if (!test) test = load_histories(test_path);
      const auto model = load_trained_model(load_checkpoint(sdir / "checkpoint.json"));
      RunReport r;
      r.model = model_label(config_.train);
      r.config_hash = hash;
      r.seed = seed;
      r.metrics = evaluate_macro(predict_labels(*model, *test), gold_labels(*test));
      r.wall_seconds = read_json(sdir / "train.json").value("wall_seconds", 0.0);
      write_atomic(out, r.to_json().dump(2));
      write_manifest(sdir, "evaluate", hash, inputs, {out});
    }
    res.outputs.push_back(out);
    reports.push_back(RunReport::from_json(read_json(out)));
  }
  json per_seed = json::array();
  for (const auto& r : reports) per_seed.push_back({{"seed", r.seed}, {"f1", r.metrics.f1}});
  res.summary = {{"config_hash", hash}, {"runs", per_seed}};
  if (reports.size() >= 2) {
    auto agg = aggregate_runs(reports);
    json j = agg.to_json();
    j["data_hash"] = config_.data_hash();
    const auto out = mdir / "report.json";
    write_atomic(out, j.dump(2));
    res.outputs.push_back(out);
    res.summary["f1"] = {{"mean", agg.f1.mean}, {"std", agg.f1.std}};
  } else {
    res.summary["note"] = "aggregate report needs at least two seeds";
  }
  return res;
}

StageResult Pipeline::explain() {
  const auto ddir = config_.data_dir();
  require_stage(ddir, "preprocess", config_.data_hash());
  const auto hash = config_.config_hash();
  const auto seed = config_.train.seeds.front();
  const auto sdir = config_.model_dir() / std::to_string(seed);
  require_stage(sdir, "train", hash);
  const std::vector<fs::path> inputs{ddir / "test.jsonl", sdir / "checkpoint.json"};
  const std::vector<fs::path> outs{sdir / "attributions.jsonl", sdir / "importance.csv"};
  const auto ehash = hash_json({{"config", hash},
                                {"top_k", config_.explain.top_k},
                                {"merge", config_.explain.merge},
                                {"max_users", config_.explain.max_users}});
  if (!force_ && is_current(sdir, "explain", ehash, inputs)) return {"explain", true, outs};

  const auto model = load_trained_model(load_checkpoint(inputs[1]));
  const auto& diff = differentiable_or_throw(*model);
  const auto rule = parse_merge_rule(config_.explain.merge);
  auto test = load_histories(inputs[0]);
  if (config_.explain.max_users > 0 && test.size() > config_.explain.max_users) test.resize(config_.explain.max_users);
  std::string lines;
  std::vector<Attribution> attrs;
  for (const auto& h : test) {
    if (h.tokens.empty()) continue;
    attrs.push_back(explain_tokens(diff, h.tokens, hash + "/" + std::to_string(seed), rule));
    json j = attribution_to_json(attrs.back(), h.user_id);
    j["config_hash"] = hash;
    lines += j.dump() + "\n";
  }
  write_atomic(outs[0], lines);
  std::ostringstream csv;
  write_importance_csv(summarize_importance(attrs, config_.explain.top_k), csv);
  write_atomic(outs[1], csv.str());
  write_manifest(sdir, "explain", ehash, inputs, outs);
  return {"explain", false, outs, {{"users", attrs.size()}, {"seed", seed}}};
}

StageResult Pipeline::analyze() {
  const auto ddir = config_.data_dir();
  const auto dhash = config_.data_hash();
  require_stage(ddir, "preprocess", dhash);
  const std::vector<fs::path> inputs{ddir / "train.jsonl", ddir / "valid.jsonl", ddir / "test.jsonl"};
  const auto adir = ddir / "analysis";
  const auto& a = config_.analysis;
  const auto ahash = hash_json({{"data", dhash},
                                {"ngram_max", a.ngram_max},
                                {"min_count", a.min_count},
                                {"alpha", a.alpha},
                                {"top_k", a.top_k},
                                {"wordcloud_k", a.wordcloud_k},
                                {"bonferroni", a.bonferroni},
                                {"permutations", a.permutations},
                                {"lexicon", config_.lexicon_path.string()}});
  const std::vector<fs::path> outs{adir / "rankings_ngrams.csv", adir / "rankings_lexicon.csv",
                                   adir / "rankings.json", adir / "wordcloud_poster.json",
                                   adir / "wordcloud_active_citizen.json"};
  if (!force_ && is_current(adir, "analyze", ahash, inputs)) return {"analyze", true, outs};

  std::vector<NormalizedHistory> all;
  for (const auto& p : inputs) {
    auto hs = load_histories(p);
    all.insert(all.end(), std::make_move_iterator(hs.begin()), std::make_move_iterator(hs.end()));
  }
  std::vector<int> y;
  for (const auto& h : all) y.push_back(label_to_int(h.label));
  const CorrelationOptions opts{a.bonferroni, a.permutations, 0};
  const auto vocab = build_vocabulary(all, analysis_vocabulary_options(a.ngram_max, a.min_count));
  const auto ngrams = pearson_feature_correlation(count_vectorize(all, vocab, Normalization::RelativeFreq), y, opts);
  const auto lex = config_.lexicon_path.empty() ? Lexicon::bundled() : Lexicon::load(config_.lexicon_path);
  const auto lexical = pearson_feature_correlation(lexicon_vectorize(all, lex), y, opts);

  auto ranked = [&](const CorrelationReport& rep) {
    json j = json::object();
    for (Label l : {Label::Poster, Label::ActiveCitizen}) {
      json rows = json::array();
      for (const auto& r : top_features(rep.results, l, a.top_k, a.alpha))
        rows.push_back({{"feature", r.feature}, {"r", r.r}, {"p", r.p_value}, {"n", r.n}});
      j[std::string(to_string(l))] = rows;
    }
    j["skipped_zero_variance"] = rep.skipped.size();
    return j;
  };
  std::ostringstream c1, c2;
  write_rankings_csv(ngrams.results, a.top_k, a.alpha, c1);
  write_rankings_csv(lexical.results, a.top_k, a.alpha, c2);
  write_atomic(outs[0], c1.str());
  write_atomic(outs[1], c2.str());
  write_atomic(outs[2], json{{"config_hash", ahash}, {"ngrams", ranked(ngrams)}, {"lexicon", ranked(lexical)}}.dump(2));
  for (std::size_t i = 0; i < 2; ++i) {
    const Label l = i == 0 ? Label::Poster : Label::ActiveCitizen;
    json wc = wordcloud_export(ngrams.results, l, a.wordcloud_k, a.alpha);
    wc["config_hash"] = ahash;
    write_atomic(outs[3 + i], wc.dump(2));
  }
  write_manifest(adir, "analyze", ahash, inputs, outs);
  return {"analyze", false, outs, {{"users", all.size()}, {"ngram_features", ngrams.results.size()}}};
}

StageResult Pipeline::report() {
  const auto dhash = config_.data_hash();
  std::vector<AggregateReport> models;
  if (fs::exists(config_.runs_dir)) {
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(config_.runs_dir))
      if (e.is_directory() && fs::exists(e.path() / "report.json") && fs::exists(e.path() / "config.json"))
        dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      const json j = read_json(d / "report.json");
      if (j.value("data_hash", "") != dhash) continue;
      std::vector<RunReport> runs;
      for (const auto& r : j.at("runs")) runs.push_back(RunReport::from_json(r));
      models.push_back(aggregate_runs(runs));
    }
  }
  const auto rankings_path = config_.data_dir() / "analysis" / "rankings.json";
  const json rankings = fs::exists(rankings_path) ? read_json(rankings_path) : json::object();
  if (models.empty() && rankings.empty())
    throw Error("nothing to report for data " + dhash + "; run `evaluate` (two or more seeds) or `analyze` first",
                "missing_artifact");
  std::ostringstream md;
  md << "<!-- data_hash=" << dhash << " -->\n";
  render_report(models, rankings, md);
  const auto out = config_.data_dir() / "report.md";
  write_atomic(out, md.str());
  return {"report", false, {out}, {{"models", models.size()}, {"markdown", md.str()}}};
}

// -------------------------------------------------------------------- report

void render_report(const std::vector<AggregateReport>& models, const json& rankings, std::ostream& out) {
  if (!models.empty()) {
    const auto best = std::max_element(models.begin(), models.end(), [](const auto& a, const auto& b) {
      return a.f1.mean < b.f1.mean;
    });
    std::vector<double> best_f1;
    for (const auto& r : best->runs) best_f1.push_back(r.metrics.f1);
    out << "## Model comparison (macro, mean ± std)\n\n";
    out << "| Model | Config | Runs | Precision | Recall | F1 | p vs best |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& m : models) {
      std::string p = "-";
      if (&m != &*best) {
        std::vector<double> f1;
        for (const auto& r : m.runs) f1.push_back(r.metrics.f1);
        const auto t = significance_test(f1, best_f1);
        p = fmt(t.p, "%.3g") + (t.small_sample ? " (n<5)" : "");
      }
      out << "| " << m.model << " | " << m.config_hash << " | " << m.runs.size() << " | "
          << fmt(m.precision.mean) << " ± " << fmt(m.precision.std) << " | " << fmt(m.recall.mean) << " ± "
          << fmt(m.recall.std) << " | " << fmt(m.f1.mean) << " ± " << fmt(m.f1.std) << " | " << p << " |\n";
    }
    out << "\n";
  }
  for (const char* kind : {"ngrams", "lexicon"}) {
    if (!rankings.contains(kind)) continue;
    const json& r = rankings.at(kind);
    const json& pos = r.at("poster");
    const json& act = r.at("active_citizen");
    out << "## Top correlated " << (std::string(kind) == "ngrams" ? "n-grams" : "lexicon categories") << "\n\n";
    out << "| Rank | poster | r | active_citizen | r |\n|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < std::max(pos.size(), act.size()); ++i) {
      out << "| " << i + 1 << " | ";
      if (i < pos.size())
        out << pos[i]["feature"].get<std::string>() << " | " << fmt(pos[i]["r"].get<double>(), "%.3f");
      else
        out << " | ";
      out << " | ";
      if (i < act.size())
        out << act[i]["feature"].get<std::string>() << " | " << fmt(act[i]["r"].get<double>(), "%.3f");
      else
        out << " | ";
      out << " |\n";
    }
    out << "\n";
  }
}

int exit_code_for(const std::string& kind) {
  if (kind == "config" || kind == "usage" || kind == "unknown_platform") return 2;
  if (kind == "missing_artifact") return 3;
  if (kind == "stale" || kind == "vocab_mismatch") return 4;
  if (kind == "locked") return 5;
  return 1;
}

}  // namespace civic_lens
