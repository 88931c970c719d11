#include "htnet/image.hpp"

#include <cstdio>
#include <memory>

#include <opencv2/imgcodecs.hpp>

#include "htnet/error.hpp"

namespace htnet {

Image load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty())
    throw DataError("cannot read image '" + path + "'");
  Image img;
  img.height = m.rows;
  img.width = m.cols;
  img.pixels.resize(static_cast<std::size_t>(m.rows) * m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    std::copy(row, row + m.cols, img.pixels.begin() + static_cast<std::size_t>(y) * m.cols);
  }
  return img;
}

std::string frame_path(const std::string& frames_dir, int index) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%03d.pgm", index);
  return frames_dir + "/" + name;
}

void save_pgm(const Image& img, const std::string& path) {
  if (img.height < 1 || img.width < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.height) * img.width)
    throw DataError("save_pgm: inconsistent image dimensions");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw DataError("cannot open '" + path + "' for writing");
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(f, &std::fclose);
  std::fprintf(f, "P5\n%d %d\n255\n", img.width, img.height);
  if (std::fwrite(img.pixels.data(), 1, img.pixels.size(), f) !=
      img.pixels.size())
    throw DataError("short write to '" + path + "'");
}

}  // namespace htnet
