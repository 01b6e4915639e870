#pragma once

#include "mrsae/sae.hpp"

#include <filesystem>
#include <string>

namespace mrsae {

/// Checkpoint layout (little-endian):
///   8-byte magic "MRSAECKP", u32 format version, u64 preamble length,
///   JSON preamble (config, provenance, loss history, explained variance, alive set),
///   then f64 blocks: W_enc row-major, b_enc, W_dec column-major, b_pre.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainedSae& model, const std::filesystem::path& path, const std::string& provenance_json = {});
TrainedSae load_checkpoint(const std::filesystem::path& path);

/// The JSON preamble only (for reports).
std::string read_checkpoint_preamble(const std::filesystem::path& path);

} // namespace mrsae
