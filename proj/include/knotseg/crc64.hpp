#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace knotseg {

// CRC-64/XZ (reflected polynomial 0xC96C5795D7870F42, init and xorout all-ones).
// Check value: crc64("123456789") == 0x995DC9BBDF1939FA.
namespace detail {

constexpr std::array<std::uint64_t, 256> make_crc64_table() {
  std::array<std::uint64_t, 256> table{};
  for (std::uint64_t i = 0; i < 256; ++i) {
    std::uint64_t v = i;
    for (int bit = 0; bit < 8; ++bit) {
      v = (v & 1) ? (v >> 1) ^ 0xC96C5795D7870F42ULL : v >> 1;
    }
    table[static_cast<std::size_t>(i)] = v;
  }
  return table;
}

inline constexpr std::array<std::uint64_t, 256> kCrc64Table = make_crc64_table();

}  // namespace detail

class Crc64 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ = detail::kCrc64Table[(state_ ^ p[i]) & 0xFF] ^ (state_ >> 8);
    }
  }

  std::uint64_t value() const { return ~state_; }

 private:
  std::uint64_t state_ = ~0ULL;
};

inline std::uint64_t crc64(const void* data, std::size_t n) {
  Crc64 c;
  c.update(data, n);
  return c.value();
}

}  // namespace knotseg
