#pragma once

#include <filesystem>

#include "impd/image.hpp"

namespace impd {

// 8-bit PNG round trips quantize to 1/255.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

// Grayscale helpers used for masks: value 0 -> virtual shown, 255 -> real.
void write_gray_png(const std::filesystem::path& path,
                    const std::vector<float>& values, int width, int height);

}  // namespace impd
