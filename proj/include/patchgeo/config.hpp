#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "patchgeo/model.hpp"
#include "patchgeo/patchgrid.hpp"
#include "patchgeo/supervision.hpp"

namespace patchgeo {

struct TrainConfig {
  GridConfig grid;
  double learning_rate = 1e-3;
  std::string lr_schedule = "constant";  ///< "constant" or "cosine" (decays to zero at the last step)
  double weight_decay = 1e-6;
  double clip_norm = 35.0;
  int iterations = 2000;
  std::uint64_t seed = 0;
  LossWeights loss;
  Architecture arch;
  std::string dataset;
  int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  Index token_budget = 0;    ///< inference tokens per forward pass; 0 = unlimited

  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// `key = value` lines in a fixed order; parse(to_text()) round-trips.
  std::string to_text() const;

  /// `key = value` lines, `#` starts a comment, blank lines ignored. Unknown
  /// or malformed keys throw ConfigError with the line number. The result is
  /// validated.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

}  // namespace patchgeo
