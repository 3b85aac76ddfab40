#pragma once

#include <filesystem>
#include <vector>

#include "impd/scene.hpp"

namespace impd {

// "IDEP" binary depth map: magic, u32 width, u32 height, then row-major
// little-endian 32-bit floats. NaN encodes an invalid pixel.
void write_depth_bin(const std::filesystem::path& path, const DepthMap& depth);
DepthMap read_depth_bin(const std::filesystem::path& path);

// Sequence directory layout:
//   manifest.json            intrinsics, per-frame pose + file names
//   rgb_%05d.png             8-bit color
//   depth_%05d.bin           IDEP float32
void save_sequence(const Sequence& seq, const std::filesystem::path& directory);
Sequence load_sequence(const std::filesystem::path& directory);

// A dataset path is either a single sequence directory (has manifest.json)
// or a directory of sequence subdirectories.
std::vector<Sequence> load_dataset(const std::filesystem::path& path);

}  // namespace impd
