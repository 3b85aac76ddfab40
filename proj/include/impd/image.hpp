#pragma once

#include <vector>

#include "impd/common.hpp"

namespace impd {

// Interleaved row-major float image, values in [0, 1].
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(size_t(w) * h * c, fill) {}

  size_t index(int x, int y, int c = 0) const {
    return (size_t(y) * width + x) * channels + c;
  }
  float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  float& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  size_t pixel_count() const { return size_t(width) * height; }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

}  // namespace impd
