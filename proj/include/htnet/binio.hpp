// Little-endian binary file helpers shared by the flow-map and checkpoint
// formats. Readers track a byte offset so format errors can name the exact
// position of the corruption.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "htnet/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace htnet::binio {

class Writer {
 public:
  void magic(const char m[4]) { raw(m, 4); }

  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void f64(double v) { raw(&v, sizeof v); }

  void f64_array(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }

  void bytes(const std::string& s) { raw(s.data(), s.size()); }

  void save(const std::string& path) const;

  const std::vector<char>& buffer() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }

  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& path);
  Reader(std::vector<char> data) : buf_(std::move(data)) {}

  std::size_t offset() const { return pos_; }

  void expect_magic(const char m[4], const char* what) {
    const std::size_t at = pos_;
    char got[4];
    raw(got, 4, what);
    if (std::memcmp(got, m, 4) != 0)
      throw FormatError(std::string(what) + ": bad magic", at);
  }

  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    raw(&v, 1, what);
    return v;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    raw(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f64(const char* what) {
    double v;
    raw(&v, sizeof v, what);
    return v;
  }

  void f64_array(double* dst, std::size_t n, const char* what) {
    raw(dst, n * sizeof(double), what);
  }

  std::string bytes(std::size_t n, const char* what) {
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }

  void expect_eof(const char* what) {
    if (pos_ != buf_.size())
      throw FormatError(std::string(what) + ": " +
                            std::to_string(buf_.size() - pos_) +
                            " unexpected trailing bytes",
                        pos_);
  }

 private:
  void raw(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > buf_.size())
      throw FormatError(std::string(what) + ": truncated (need " +
                            std::to_string(n) + " bytes, have " +
                            std::to_string(buf_.size() - pos_) + ")",
                        pos_);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace htnet::binio
