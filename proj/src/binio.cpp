#include "knotseg/binio.hpp"

namespace knotseg {

std::vector<unsigned char> read_file_checked(const std::filesystem::path& path,
                                             const char magic[4]) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_runtime(path.string(), ": cannot open for reading");
  std::vector<unsigned char> bytes(
      (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12) {
    fail_runtime(path.string(), ": checksum failure (file too short, ",
                 bytes.size(), " bytes)");
  }
  if (std::memcmp(bytes.data(), magic, 4) != 0) {
    fail_runtime(path.string(), ": bad magic, not a ", magic, " file");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const std::uint64_t actual = crc64(bytes.data(), bytes.size() - 8);
  if (stored != actual) {
    fail_runtime(path.string(),
                 ": checksum failure (file truncated or corrupt)");
  }
  bytes.resize(bytes.size() - 8);
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path,
                       const std::vector<unsigned char>& bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_runtime(tmp.string(), ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail_runtime(tmp.string(), ": write failed");
  }
  fs::rename(tmp, path);
}

}  // namespace knotseg
