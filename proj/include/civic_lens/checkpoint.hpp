#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

namespace civic_lens {

/// Self-describing JSON model container shared by every model kind.
struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  std::string vocab_hash;
  nlohmann::json vocab;  // model-specific vocabulary payload, hashed into vocab_hash
  nlohmann::json meta = nlohmann::json::object();
  nlohmann::json params = nlohmann::json::object();
};

inline constexpr const char* kCheckpointFormat = "civic-lens-checkpoint/1";

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
/// Rejects unknown formats and, when given, a vocabulary hash that differs
/// from `expected_vocab_hash`.
Checkpoint checkpoint_from_json(const nlohmann::json& j, const std::optional<std::string>& expected_vocab_hash = {});

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_vocab_hash = {});

}  // namespace civic_lens
