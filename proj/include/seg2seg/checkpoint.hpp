#pragma once

#include <cstdint>
#include <string>

#include "seg2seg/autodiff.hpp"
#include "seg2seg/model.hpp"

namespace seg2seg::checkpoint {

// Layout (little-endian):
//   "S2SG" | u32 version | u32 count | count x record
//   record = u32 name_len | name bytes | u32 rank | rank x u64 dim | fp64 payload
// The model configuration travels as the record named kConfigRecord.
inline constexpr char kMagic[4] = {'S', '2', 'S', 'G'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr const char* kConfigRecord = "__config__";

void write_arrays(const std::string& path, const ad::ParamMap& arrays);
ad::ParamMap read_arrays(const std::string& path);

void save(const std::string& path, const model::Model& m);
model::Model load(const std::string& path);
// Like load(), but rejects a checkpoint whose configuration differs from `expected`.
model::Model load(const std::string& path, const model::ModelConfig& expected);

}  // namespace seg2seg::checkpoint
