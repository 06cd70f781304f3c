#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "patchgeo/model.hpp"

namespace patchgeo {

inline constexpr char kCheckpointMagic[8] = {'U', 'R', 'G', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct AdamState {
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
  std::uint64_t step = 0;
};

struct Checkpoint {
  ModelParams params;
  int patch_h = 0;
  int patch_w = 0;
  std::uint64_t iteration = 0;
  std::string rng_state;  ///< textual engine state
  AdamState adam;
};

/// Little-endian binary: magic, version, architecture, patch size,
/// iteration, rng state, then (name, shape, float64 data) records for the
/// weights followed by the "adam.m/" and "adam.v/" moments.
std::string encode_checkpoint(const Checkpoint& ck);
/// Throws ParseError (with byte offset) on malformed input and
/// ContractError when the tensor names do not match the architecture.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace patchgeo
