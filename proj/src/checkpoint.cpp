#include "civic_lens/checkpoint.hpp"

#include <fstream>

#include "civic_lens/common.hpp"

namespace civic_lens {

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  return {{"format", kCheckpointFormat}, {"kind", ckpt.kind},   {"config", ckpt.config}, {"vocab_hash", ckpt.vocab_hash},
          {"vocab", ckpt.vocab},         {"meta", ckpt.meta},   {"params", ckpt.params}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j, const std::optional<std::string>& expected_vocab_hash) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) throw Error("not a checkpoint file", "parse");
  Checkpoint c;
  try {
    c.kind = j.at("kind").get<std::string>();
    c.config = j.at("config");
    c.vocab_hash = j.at("vocab_hash").get<std::string>();
    c.vocab = j.value("vocab", nlohmann::json());
    c.meta = j.value("meta", nlohmann::json::object());
    c.params = j.at("params");
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what(), "parse");
  }
  if (expected_vocab_hash && *expected_vocab_hash != c.vocab_hash)
    throw Error("checkpoint vocabulary hash " + c.vocab_hash + " does not match " + *expected_vocab_hash, "vocab_mismatch");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write " + tmp, "io");
    out << checkpoint_to_json(ckpt).dump();
    if (!out) throw Error("cannot write " + tmp, "io");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_vocab_hash) {
  std::ifstream in(path);
  if (!in) throw Error("checkpoint not found: " + path.string(), "missing_artifact");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("cannot parse checkpoint " + path.string() + ": " + e.what(), "parse");
  }
  return checkpoint_from_json(j, expected_vocab_hash);
}

}  // namespace civic_lens
