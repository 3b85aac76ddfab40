#include "impd/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "impd/image_io.hpp"

namespace impd {

namespace {

static_assert(std::endian::native == std::endian::little,
              "IDEP reader/writer assumes a little-endian host");

constexpr char kDepthMagic[4] = {'I', 'D', 'E', 'P'};

std::string frame_name(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", prefix, index, ext);
  return buf;
}

nlohmann::json pose_to_json(const Pose& pose) {
  // 4x4 row-major
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      double v;
      if (r < 3 && c < 3)
        v = pose.rotation(r, c);
      else if (r < 3)
        v = pose.translation[r];
      else
        v = (c == 3) ? 1.0 : 0.0;
      rows.push_back(v);
    }
  }
  return rows;
}

Pose pose_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 16)
    throw FormatError("manifest: pose is not a 16-element array in " + where);
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = j[size_t(r * 4 + c)];
    pose.translation[r] = j[size_t(r * 4 + 3)];
  }
  if (!pose.is_valid())
    throw FormatError("manifest: invalid rotation in " + where);
  return pose;
}

}  // namespace

void write_depth_bin(const std::filesystem::path& path, const DepthMap& depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("depth: cannot open " + path.string());
  out.write(kDepthMagic, 4);
  const uint32_t w = uint32_t(depth.width), h = uint32_t(depth.height);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> payload(depth.values);
  for (size_t i = 0; i < payload.size(); ++i)
    if (!depth.valid[i]) payload[i] = std::numeric_limits<float>::quiet_NaN();
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(float)));
  if (!out) throw FormatError("depth: short write to " + path.string());
}

DepthMap read_depth_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("depth: cannot open " + path.string());
  char magic[4];
  uint32_t w = 0, h = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || std::memcmp(magic, kDepthMagic, 4) != 0)
    throw FormatError("depth: bad magic in " + path.string());
  if (w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16)
    throw FormatError("depth: implausible dimensions in " + path.string());
  DepthMap depth{int(w), int(h)};
  in.read(reinterpret_cast<char*>(depth.values.data()),
          std::streamsize(depth.values.size() * sizeof(float)));
  if (!in) throw FormatError("depth: truncated file " + path.string());
  for (size_t i = 0; i < depth.values.size(); ++i) {
    const float v = depth.values[i];
    if (std::isnan(v)) {
      depth.values[i] = 0.0f;
      continue;
    }
    if (!std::isfinite(v) || v <= 0.0f)
      throw FormatError("depth: non-finite or non-positive value in " +
                        path.string());
    depth.valid[i] = 1;
  }
  return depth;
}

void save_sequence(const Sequence& seq, const std::filesystem::path& directory) {
  seq.validate();
  std::filesystem::create_directories(directory);

  nlohmann::json manifest;
  manifest["format"] = "impd-sequence";
  manifest["version"] = 1;
  manifest["intrinsics"] = {{"fx", seq.intrinsics.fx}, {"fy", seq.intrinsics.fy},
                            {"cx", seq.intrinsics.cx}, {"cy", seq.intrinsics.cy},
                            {"width", seq.intrinsics.width},
                            {"height", seq.intrinsics.height}};
  manifest["frame_count"] = seq.frames.size();
  nlohmann::json frames = nlohmann::json::array();
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    const std::string rgb_name = frame_name("rgb", int(i), "png");
    const std::string depth_name = frame_name("depth", int(i), "bin");
    write_png(directory / rgb_name, f.rgb);
    write_depth_bin(directory / depth_name, f.depth_gt);
    frames.push_back({{"timestamp", f.timestamp},
                      {"rgb", rgb_name},
                      {"depth", depth_name},
                      {"pose", pose_to_json(f.pose)}});
  }
  manifest["frames"] = std::move(frames);

  std::ofstream out(directory / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw FormatError("manifest: cannot write in " + directory.string());
}

Sequence load_sequence(const std::filesystem::path& directory) {
  const std::filesystem::path manifest_path = directory / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("manifest: missing " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest: parse error in " + manifest_path.string() +
                      ": " + e.what());
  }

  Sequence seq;
  try {
    const auto& k = manifest.at("intrinsics");
    seq.intrinsics.fx = k.at("fx");
    seq.intrinsics.fy = k.at("fy");
    seq.intrinsics.cx = k.at("cx");
    seq.intrinsics.cy = k.at("cy");
    seq.intrinsics.width = k.at("width");
    seq.intrinsics.height = k.at("height");
  } catch (const nlohmann::json::exception&) {
    throw FormatError("manifest: missing intrinsics in " + manifest_path.string());
  }

  if (!manifest.contains("frames") || !manifest["frames"].is_array())
    throw FormatError("manifest: missing frame list in " + manifest_path.string());
  const auto& frames = manifest["frames"];
  if (manifest.value("frame_count", size_t(0)) != frames.size())
    throw FormatError("manifest: frame_count does not match frame list in " +
                      manifest_path.string());

  for (const auto& entry : frames) {
    Frame f;
    f.timestamp = entry.value("timestamp", int(seq.frames.size()));
    f.pose = pose_from_json(entry.at("pose"), manifest_path.string());
    const std::filesystem::path rgb_path = directory / entry.at("rgb").get<std::string>();
    const std::filesystem::path depth_path =
        directory / entry.at("depth").get<std::string>();
    f.rgb = read_png(rgb_path);
    if (f.rgb.channels != 3)
      throw FormatError("rgb: expected 3 channels in " + rgb_path.string());
    f.depth_gt = read_depth_bin(depth_path);
    if (f.rgb.width != f.depth_gt.width || f.rgb.height != f.depth_gt.height)
      throw FormatError("frame: rgb/depth dimension mismatch for " +
                        rgb_path.string());
    if (f.rgb.width != seq.intrinsics.width ||
        f.rgb.height != seq.intrinsics.height)
      throw FormatError("frame: image size does not match intrinsics for " +
                        rgb_path.string());
    seq.frames.push_back(std::move(f));
  }
  try {
    seq.validate();
  } catch (const Error& e) {
    throw FormatError("sequence invalid after load from " + directory.string() +
                      ": " + e.what());
  }
  return seq;
}

std::vector<Sequence> load_dataset(const std::filesystem::path& path) {
  std::vector<Sequence> out;
  if (std::filesystem::exists(path / "manifest.json")) {
    out.push_back(load_sequence(path));
    return out;
  }
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::is_directory(path))
    for (const auto& entry : std::filesystem::directory_iterator(path))
      if (entry.is_directory() &&
          std::filesystem::exists(entry.path() / "manifest.json"))
        dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) out.push_back(load_sequence(dir));
  if (out.empty())
    throw FormatError("dataset: no sequences found under " + path.string());
  return out;
}

}  // namespace impd
