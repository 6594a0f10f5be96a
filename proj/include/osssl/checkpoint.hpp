#pragma once

#include <filesystem>

#include "json.hpp"

#include "osssl/trainer.hpp"

namespace osssl {

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_to_json(const TrainerState& state);

/// Throws VersionMismatch for an unsupported format_version and
/// CorruptCheckpoint for anything malformed.
TrainerState checkpoint_from_json(const nlohmann::json& j);

/// Writes through a temporary file and a rename, so readers never see a partial file.
void save_checkpoint(const TrainerState& state, const std::filesystem::path& path);
TrainerState load_checkpoint(const std::filesystem::path& path);

}  // namespace osssl
