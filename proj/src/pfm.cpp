#include "patchgeo/pfm.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace patchgeo {

namespace {

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }

  // Whitespace-delimited ASCII token, skipping leading whitespace.
  std::string token(const char* what) {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError(std::string("pfm: missing ") + what, start);
    return bytes_.substr(start, pos_ - start);
  }

  // Exactly one whitespace byte separates the header from the payload.
  void header_end() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw ParseError("pfm: header not terminated", pos_);
    }
    ++pos_;
  }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

int parse_dimension(const std::string& text, std::size_t offset, const char* what) {
  std::size_t used = 0;
  long value = 0;
  try {
    value = std::stol(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || value <= 0 || value > (1L << 24)) {
    throw ParseError(std::string("pfm: bad ") + what + " '" + text + "'", offset);
  }
  return static_cast<int>(value);
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

PfmImage parse_pfm(const std::string& bytes) {
  Cursor cur(bytes);
  PfmImage img;
  const std::string magic = cur.token("magic");
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    throw ParseError("pfm: unknown magic '" + magic + "'", 0);
  }
  std::size_t at = cur.offset();
  img.width = parse_dimension(cur.token("width"), at, "width");
  at = cur.offset();
  img.height = parse_dimension(cur.token("height"), at, "height");
  at = cur.offset();
  const std::string scale_text = cur.token("scale");
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_text, &used);
    if (used != scale_text.size()) scale = 0.0;
  } catch (const std::exception&) {
    scale = 0.0;
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw ParseError("pfm: bad scale '" + scale_text + "'", at);
  cur.header_end();

  const bool little = scale < 0.0;
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  const std::size_t payload = cur.offset();
  if (bytes.size() - payload < count * 4) {
    throw ParseError("pfm: truncated payload, expected " + std::to_string(count * 4) + " bytes", bytes.size());
  }
  const bool swap = little != (std::endian::native == std::endian::little);
  img.data.resize(count);
  const std::size_t row_len = static_cast<std::size_t>(img.width) * img.channels;
  for (int r = 0; r < img.height; ++r) {
    // File rows run bottom-to-top.
    const std::size_t src_row = static_cast<std::size_t>(img.height - 1 - r);
    for (std::size_t k = 0; k < row_len; ++k) {
      std::uint32_t bits = 0;
      std::memcpy(&bits, bytes.data() + payload + (src_row * row_len + k) * 4, 4);
      if (swap) bits = byteswap32(bits);
      img.data[static_cast<std::size_t>(r) * row_len + k] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

std::string encode_pfm(const PfmImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractError("pfm: only 1 or 3 channels");
  const std::size_t row_len = static_cast<std::size_t>(image.width) * image.channels;
  if (image.data.size() != row_len * image.height) throw DimensionError("pfm: data size does not match header");
  std::string out = (image.channels == 1 ? "Pf\n" : "PF\n") + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n-1.0\n";
  const std::size_t header = out.size();
  out.resize(header + image.data.size() * 4);
  for (int r = 0; r < image.height; ++r) {
    const std::size_t dst_row = static_cast<std::size_t>(image.height - 1 - r);
    for (std::size_t k = 0; k < row_len; ++k) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(image.data[static_cast<std::size_t>(r) * row_len + k]);
      if constexpr (std::endian::native != std::endian::little) bits = byteswap32(bits);
      std::memcpy(out.data() + header + (dst_row * row_len + k) * 4, &bits, 4);
    }
  }
  return out;
}

PfmImage read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_pfm(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_pfm(const std::filesystem::path& path, const PfmImage& image) {
  const std::string bytes = encode_pfm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

PfmImage to_pfm(const Raster<double>& raster) {
  PfmImage img{static_cast<int>(raster.cols()), static_cast<int>(raster.rows()), 1, {}};
  img.data.reserve(static_cast<std::size_t>(raster.size()));
  for (Index r = 0; r < raster.rows(); ++r) {
    for (Index c = 0; c < raster.cols(); ++c) img.data.push_back(static_cast<float>(raster(r, c)));
  }
  return img;
}

PfmImage to_pfm(const Raster3<double>& raster) {
  PfmImage img{static_cast<int>(raster.cols()), static_cast<int>(raster.rows()), 3, {}};
  img.data.reserve(static_cast<std::size_t>(raster.rows() * raster.cols() * 3));
  for (Index r = 0; r < raster.rows(); ++r) {
    for (Index c = 0; c < raster.cols(); ++c) {
      for (int k = 0; k < 3; ++k) img.data.push_back(static_cast<float>(raster.ch[k](r, c)));
    }
  }
  return img;
}

Raster<double> to_raster(const PfmImage& image) {
  if (image.channels != 1) throw DimensionError("pfm: expected 1 channel, got " + std::to_string(image.channels));
  Raster<double> out(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) out(r, c) = image.at(r, c);
  }
  return out;
}

Raster3<double> to_raster3(const PfmImage& image) {
  if (image.channels != 3) throw DimensionError("pfm: expected 3 channels, got " + std::to_string(image.channels));
  Raster3<double> out(image.height, image.width);
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      for (int k = 0; k < 3; ++k) out.ch[k](r, c) = image.at(r, c, k);
    }
  }
  return out;
}

void write_pfm(const std::filesystem::path& path, const Raster<double>& raster) { write_pfm(path, to_pfm(raster)); }
void write_pfm(const std::filesystem::path& path, const Raster3<double>& raster) { write_pfm(path, to_pfm(raster)); }
Raster<double> read_pfm1(const std::filesystem::path& path) { return to_raster(read_pfm(path)); }
Raster3<double> read_pfm3(const std::filesystem::path& path) { return to_raster3(read_pfm(path)); }

}  // namespace patchgeo
