#pragma once

#include <string>

#include "holotea/optim.hpp"

namespace holotea {

/// Binary checkpoint: magic "HTFM", u32 format version, u32 record count,
/// then per record: u32 name length, UTF-8 name bytes, u64 rows, u64 cols,
/// rows*cols little-endian 64-bit reals. Round-trips bitwise.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace holotea
