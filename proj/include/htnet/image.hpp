#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace htnet {

// 8-bit grayscale image, row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t& at(int y, int x) {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
};

// Decodes an 8-bit grayscale PNG or PGM file. DataError on failure.
Image load_image(const std::string& path);

// Writes a binary PGM (P5). DataError on failure.
void save_pgm(const Image& img, const std::string& path);

// Canonical frame filename inside a sample's frame directory:
// <frames_dir>/frame_007.pgm for index 7.
std::string frame_path(const std::string& frames_dir, int index);

}  // namespace htnet
