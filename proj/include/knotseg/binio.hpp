#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "knotseg/common.hpp"
#include "knotseg/crc64.hpp"

namespace knotseg {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u16(std::uint16_t v) { put_raw(&v, 2); }
  void put_u32(std::uint32_t v) { put_raw(&v, 4); }
  void put_u64(std::uint64_t v) { put_raw(&v, 8); }
  void put_f32(float v) { put_raw(&v, 4); }
  void put_bytes(const void* p, std::size_t n) { put_raw(p, n); }
  void put_string(const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    put_raw(s.data(), s.size());
  }

  /// Appends the CRC-64 of everything written so far.
  void put_trailing_crc() { put_u64(crc64(buf_.data(), buf_.size())); }

  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  void put_raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t n, std::string source)
      : data_(data), size_(n), source_(std::move(source)) {}

  std::uint8_t get_u8() { return *take(1); }
  std::uint16_t get_u16() { return read_as<std::uint16_t>(); }
  std::uint32_t get_u32() { return read_as<std::uint32_t>(); }
  std::uint64_t get_u64() { return read_as<std::uint64_t>(); }
  float get_f32() { return read_as<float>(); }
  std::string get_string() {
    const std::uint32_t n = get_u32();
    const unsigned char* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  void get_bytes(void* dst, std::size_t n) { std::memcpy(dst, take(n), n); }

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  template <typename T>
  T read_as() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > size_) {
      fail_runtime(source_, ": truncated (needed ", n, " bytes at offset ",
                   pos_, ", file has ", size_, ")");
    }
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string source_;
};

/// Reads a whole file; verifies the 4-byte magic and the trailing CRC-64,
/// then hands back a reader over the payload between them (magic included,
/// CRC excluded).
std::vector<unsigned char> read_file_checked(const std::filesystem::path& path,
                                             const char magic[4]);

/// Writes buffer contents atomically (temp file in the same directory, then
/// rename).
void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<unsigned char>& bytes);

}  // namespace knotseg
