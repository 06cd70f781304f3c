#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "patchgeo/raster.hpp"

namespace patchgeo {

/// Decoded Portable Float Map: rows top-to-bottom, channels interleaved.
struct PfmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  float at(int row, int col, int channel = 0) const {
    return data[static_cast<std::size_t>((row * width + col) * channels + channel)];
  }
};

/// Parses "Pf"/"PF" bytes; the sign of the scale selects endianness.
/// Throws ParseError carrying the byte offset of the first problem.
PfmImage parse_pfm(const std::string& bytes);

/// Little-endian (scale -1.0), rows bottom-to-top.
std::string encode_pfm(const PfmImage& image);

PfmImage read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const PfmImage& image);

// Raster adapters; values are stored as 32-bit floats.
PfmImage to_pfm(const Raster<double>& raster);
PfmImage to_pfm(const Raster3<double>& raster);
Raster<double> to_raster(const PfmImage& image);
Raster3<double> to_raster3(const PfmImage& image);

void write_pfm(const std::filesystem::path& path, const Raster<double>& raster);
void write_pfm(const std::filesystem::path& path, const Raster3<double>& raster);
Raster<double> read_pfm1(const std::filesystem::path& path);
Raster3<double> read_pfm3(const std::filesystem::path& path);

}  // namespace patchgeo
