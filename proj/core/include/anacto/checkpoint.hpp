#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "anacto/params.hpp"

namespace anacto {

// Checkpoint layout: a magic line, a one-line JSON manifest (tool version,
// seed, config echo, per-parameter name/shape/offset), then a flat blob of
// little-endian 64-bit floats. Round trips are bitwise exact.
struct CheckpointMeta {
  std::string tool_version;
  std::uint64_t seed = 0;
  std::string config_json;  // serialized model/run config echo
};

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const CheckpointMeta& meta);

// Reads only the manifest.
CheckpointMeta peek_checkpoint(const std::filesystem::path& path);

// Fills `store` (already built with matching names and shapes) from the
// blob. Throws DataError on any name/shape/size mismatch.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, ParamStore& store);

}  // namespace anacto
