#include "patchgeo/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "patchgeo/pfm.hpp"

namespace patchgeo {

namespace {

std::string frame_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", id);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::vector<FrameRecord> Manifest::split(const std::string& name) const {
  std::vector<FrameRecord> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(r);
  }
  return out;
}

std::string split_of(int index, int scenes) {
  const int train = 8 * scenes / 10;
  const int val = scenes / 10;
  if (index < train) return "train";
  if (index < train + val) return "val";
  return "test";
}

Sample generate_sample(const DatasetParams& params, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(params.seed), static_cast<std::uint32_t>(params.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  Rng rng(seq);
  Sample s;
  s.id = index;
  s.gt = render(random_scene(params.extent, rng), params.extent);
  CoarseInputs coarse = degrade(s.gt, params.degrade, rng);
  s.input = {s.gt.rgb, std::move(coarse.depth), std::move(coarse.normal)};
  return s;
}

Manifest make_dataset(const DatasetParams& params, const std::filesystem::path& root) {
  if (params.scenes < 1) throw ConfigError("dataset needs at least one scene");
  params.extent.validate();
  std::error_code ec;
  std::filesystem::create_directories(root / "frames", ec);
  if (ec) throw IoError("cannot create " + (root / "frames").string() + ": " + ec.message());

  Manifest manifest;
  manifest.root = root;
  for (int i = 0; i < params.scenes; ++i) {
    const Sample s = generate_sample(params, i);
    const std::string stem = "frames/" + frame_stem(i);
    FrameRecord rec{i,
                    split_of(i, params.scenes),
                    stem + "_rgb.pfm",
                    stem + "_depth.pfm",
                    stem + "_normal.pfm",
                    stem + "_coarse_depth.pfm",
                    stem + "_coarse_normal.pfm",
                    s.gt.camera};
    write_pfm(root / rec.rgb, s.gt.rgb);
    write_pfm(root / rec.depth, s.gt.depth);
    write_pfm(root / rec.normal, s.gt.normal);
    write_pfm(root / rec.coarse_depth, s.input.coarse_depth);
    write_pfm(root / rec.coarse_normal, s.input.coarse_normal);
    manifest.records.push_back(std::move(rec));
  }

  std::ofstream out(root / kManifestName, std::ios::trunc);
  if (!out) throw IoError("cannot write " + (root / kManifestName).string());
  for (const auto& r : manifest.records) {
    out << frame_stem(r.id) << '\t' << r.split << '\t' << r.rgb << '\t' << r.depth << '\t' << r.normal << '\t'
        << r.coarse_depth << '\t' << r.coarse_normal << '\t' << r.camera.to_string() << '\n';
  }
  if (!out) throw IoError("short write to " + (root / kManifestName).string());
  return manifest;
}

Manifest read_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Manifest m;
  m.root = root;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 8) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 tab-separated fields, got " +
                    std::to_string(f.size()));
    }
    FrameRecord r;
    try {
      r.id = std::stoi(f[0]);
      r.camera = CameraModel::parse(f[7]);
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    r.split = f[1];
    r.rgb = f[2];
    r.depth = f[3];
    r.normal = f[4];
    r.coarse_depth = f[5];
    r.coarse_normal = f[6];
    m.records.push_back(std::move(r));
  }
  return m;
}

Sample load_sample(const Manifest& manifest, const FrameRecord& record) {
  Sample s;
  s.id = record.id;
  s.gt.rgb = read_pfm3(manifest.root / record.rgb);
  s.gt.depth = read_pfm1(manifest.root / record.depth);
  s.gt.normal = read_pfm3(manifest.root / record.normal);
  s.gt.camera = record.camera;
  s.input.rgb = s.gt.rgb;
  s.input.coarse_depth = read_pfm1(manifest.root / record.coarse_depth);
  s.input.coarse_normal = read_pfm3(manifest.root / record.coarse_normal);
  return s;
}

}  // namespace patchgeo
