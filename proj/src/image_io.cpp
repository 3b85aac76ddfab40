#include "impd/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>

namespace impd {

namespace {

uint8_t to_u8(float v) {
  return uint8_t(std::clamp(std::lround(v * 255.0f), 0L, 255L));
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw ShapeError("write_png: expected 1 or 3 channels");
  cv::Mat mat(image.height, image.width,
              image.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.height; ++y) {
    uint8_t* row = mat.ptr<uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      if (image.channels == 3) {
        // OpenCV stores BGR
        row[x * 3 + 0] = to_u8(image.at(x, y, 2));
        row[x * 3 + 1] = to_u8(image.at(x, y, 1));
        row[x * 3 + 2] = to_u8(image.at(x, y, 0));
      } else {
        row[x] = to_u8(image.at(x, y, 0));
      }
    }
  }
  if (!cv::imwrite(path.string(), mat))
    throw FormatError("write_png: failed to write " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty())
    throw FormatError("read_png: failed to read " + path.string());
  if (mat.type() != CV_8UC3 && mat.type() != CV_8UC1)
    throw FormatError("read_png: unsupported pixel format in " + path.string());
  const int channels = mat.channels();
  Image image(mat.cols, mat.rows, channels);
  for (int y = 0; y < mat.rows; ++y) {
    const uint8_t* row = mat.ptr<uint8_t>(y);
    for (int x = 0; x < mat.cols; ++x) {
      if (channels == 3) {
        image.at(x, y, 0) = row[x * 3 + 2] / 255.0f;
        image.at(x, y, 1) = row[x * 3 + 1] / 255.0f;
        image.at(x, y, 2) = row[x * 3 + 0] / 255.0f;
      } else {
        image.at(x, y, 0) = row[x] / 255.0f;
      }
    }
  }
  return image;
}

void write_gray_png(const std::filesystem::path& path,
                    const std::vector<float>& values, int width, int height) {
  if (values.size() != size_t(width) * height)
    throw ShapeError("write_gray_png: size mismatch");
  Image image(width, height, 1);
  image.data = values;
  write_png(path, image);
}

}  // namespace impd
