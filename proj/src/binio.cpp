#include "htnet/binio.hpp"

#include <cstdio>
#include <memory>

namespace htnet::binio {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void Writer::save(const std::string& path) const {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  if (!buf_.empty() &&
      std::fwrite(buf_.data(), 1, buf_.size(), f.get()) != buf_.size())
    throw DataError("short write to '" + path + "'");
}

Reader::Reader(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open '" + path + "' for reading");
  std::fseek(f.get(), 0, SEEK_END);
  const long size = std::ftell(f.get());
  if (size < 0) throw DataError("cannot determine size of '" + path + "'");
  std::fseek(f.get(), 0, SEEK_SET);
  buf_.resize(static_cast<std::size_t>(size));
  if (size > 0 &&
      std::fread(buf_.data(), 1, buf_.size(), f.get()) != buf_.size())
    throw DataError("short read from '" + path + "'");
}

}  // namespace htnet::binio
