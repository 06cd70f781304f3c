#include "patchgeo/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace patchgeo {

namespace {

constexpr const char* kMomentM = "adam.m/";
constexpr const char* kMomentV = "adam.v/";

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, const std::string& name, const Mat& m) {
  put_string(out, name);
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.size(); ++i) put<double>(out, m.data()[i]);
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t start) : bytes_(bytes), pos_(start) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    unsigned char b[sizeof(T)];
    std::memcpy(b, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T value;
    std::memcpy(&value, b, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ck) {
  const Architecture& a = ck.params.arch;
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {a.blocks, a.width, a.heads, a.cell, a.mlp_ratio, static_cast<int>(a.layout), static_cast<int>(a.rope),
                ck.patch_h, ck.patch_w}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  put<std::uint64_t>(out, ck.iteration);
  put_string(out, ck.rng_state);
  put<std::uint64_t>(out, ck.adam.step);
  const std::size_t count = ck.params.weights.size() + ck.adam.m.size() + ck.adam.v.size();
  put<std::uint64_t>(out, count);
  for (const auto& [name, m] : ck.params.weights) put_tensor(out, name, m);
  for (const auto& [name, m] : ck.adam.m) put_tensor(out, kMomentM + name, m);
  for (const auto& [name, m] : ck.adam.v) put_tensor(out, kMomentV + name, m);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw ParseError("not a checkpoint (bad magic)", 0);
  }
  Reader rd(bytes, sizeof kCheckpointMagic);
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), sizeof kCheckpointMagic);
  }
  Checkpoint ck;
  Architecture& a = ck.params.arch;
  a.blocks = static_cast<int>(rd.get<std::uint32_t>("blocks"));
  a.width = static_cast<int>(rd.get<std::uint32_t>("width"));
  a.heads = static_cast<int>(rd.get<std::uint32_t>("heads"));
  a.cell = static_cast<int>(rd.get<std::uint32_t>("cell"));
  a.mlp_ratio = static_cast<int>(rd.get<std::uint32_t>("mlp_ratio"));
  const auto layout = rd.get<std::uint32_t>("layout");
  const auto rope = rd.get<std::uint32_t>("rope");
  if (layout > 1 || rope > 1) throw ParseError("checkpoint has unknown layout/rope code", rd.offset());
  a.layout = static_cast<AttentionLayout>(layout);
  a.rope = static_cast<RopeFrame>(rope);
  ck.patch_h = static_cast<int>(rd.get<std::uint32_t>("patch_h"));
  ck.patch_w = static_cast<int>(rd.get<std::uint32_t>("patch_w"));
  ck.iteration = rd.get<std::uint64_t>("iteration");
  ck.rng_state = rd.get_string("rng state");
  ck.adam.step = rd.get<std::uint64_t>("optimizer step");
  const auto count = rd.get<std::uint64_t>("record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = rd.offset();
    const std::string name = rd.get_string("tensor name");
    const auto ndim = rd.get<std::uint32_t>("tensor rank");
    if (ndim != 2) throw ParseError("tensor '" + name + "' has rank " + std::to_string(ndim) + ", expected 2", at);
    const auto rows = rd.get<std::uint64_t>("tensor shape");
    const auto cols = rd.get<std::uint64_t>("tensor shape");
    if (rows > (1u << 24) || cols > (1u << 24)) throw ParseError("tensor '" + name + "' shape is implausible", at);
    Mat m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index k = 0; k < m.size(); ++k) m.data()[k] = rd.get<double>("tensor data");
    std::map<std::string, Mat>* dest = &ck.params.weights;
    std::string key = name;
    if (name.rfind(kMomentM, 0) == 0) {
      dest = &ck.adam.m;
      key = name.substr(std::strlen(kMomentM));
    } else if (name.rfind(kMomentV, 0) == 0) {
      dest = &ck.adam.v;
      key = name.substr(std::strlen(kMomentV));
    }
    if (!dest->emplace(key, std::move(m)).second) throw ParseError("duplicate tensor '" + name + "'", at);
  }
  if (!rd.done()) throw ParseError("trailing bytes after checkpoint records", rd.offset());

  a.validate();
  Rng scratch;
  const ModelParams expected = ModelParams::initialize(a, scratch);
  for (const auto& [name, m] : expected.weights) {
    const auto it = ck.params.weights.find(name);
    if (it == ck.params.weights.end()) throw ContractError("checkpoint is missing tensor '" + name + "'");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
      throw ContractError("checkpoint tensor '" + name + "' has shape " +
                          shape_string(it->second.rows(), it->second.cols()) + ", expected " +
                          shape_string(m.rows(), m.cols()));
    }
  }
  if (ck.params.weights.size() != expected.weights.size()) {
    throw ContractError("checkpoint has tensors the architecture does not define");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

}  // namespace patchgeo
