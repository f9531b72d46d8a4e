#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace knotseg {

/// Train/eval switch shared by batchnorm, dropout and the model forwards.
enum class Mode { kTrain, kEval };

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
  os << head;
  format_into(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string format_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

/// Invalid arguments, shape mismatches, bad configs.
template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw std::invalid_argument(format_msg(args...));
}

/// I/O and runtime failures (corrupt files, NaN losses, ...).
template <typename... Args>
[[noreturn]] void fail_runtime(const Args&... args) {
  throw std::runtime_error(format_msg(args...));
}

template <typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

}  // namespace knotseg
