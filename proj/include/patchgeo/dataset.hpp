#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "patchgeo/frame.hpp"
#include "patchgeo/synthscene.hpp"

namespace patchgeo {

inline constexpr const char* kManifestName = "manifest.txt";

/// One manifest line; paths are relative to the dataset root.
struct FrameRecord {
  int id = 0;
  std::string split;
  std::string rgb;
  std::string depth;
  std::string normal;
  std::string coarse_depth;
  std::string coarse_normal;
  CameraModel camera;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<FrameRecord> records;

  std::vector<FrameRecord> split(const std::string& name) const;
};

struct Sample {
  int id = 0;
  GeometryFrame gt;
  RefineInput input;
};

struct DatasetParams {
  int scenes = 500;
  ImageExtent extent{96, 96};
  std::uint64_t seed = 0;
  DegradeParams degrade;
};

/// "train" for the first 8n/10 indices, "val" for the next n/10, "test" for the rest.
std::string split_of(int index, int scenes);

/// Scene `index` of a dataset, generated in memory (double precision). Each
/// scene draws from its own stream seeded with (seed, index).
Sample generate_sample(const DatasetParams& params, int index);

/// Writes frames/NNNNNN_{rgb,depth,normal,coarse_depth,coarse_normal}.pfm
/// and the tab-separated manifest. Output is a pure function of `params`.
Manifest make_dataset(const DatasetParams& params, const std::filesystem::path& root);

Manifest read_manifest(const std::filesystem::path& root);
Sample load_sample(const Manifest& manifest, const FrameRecord& record);

}  // namespace patchgeo
