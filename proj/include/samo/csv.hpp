// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>

namespace samo {

// Shortest round-trip decimal form; '.' decimal point, locale-free.
inline std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(std::int64_t v) {
  return std::to_string(v);
}

inline std::string format_number(std::uint64_t v) {
  return std::to_string(v);
}

// RFC 4180 style CSV accumulator: header row first, comma separated,
// one record per line. Values never need quoting here (no commas,
// quotes or newlines are ever emitted), so quoting is a passthrough.
class Csv {
 public:
  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((append_cell(cells, first), first = false), ...);
    text_ += '\n';
  }

  const std::string& text() const { return text_; }

 private:
  template <typename T>
  void append_cell(const T& value, bool first) {
    if (!first) text_ += ',';
    if constexpr (std::is_convertible_v<T, std::string_view>) {
      text_ += std::string_view(value);
    } else if constexpr (std::is_floating_point_v<T>) {
      text_ += format_number(static_cast<double>(value));
    } else if constexpr (std::is_signed_v<T>) {
      text_ += format_number(static_cast<std::int64_t>(value));
    } else {
      text_ += format_number(static_cast<std::uint64_t>(value));
    }
  }

  std::string text_;
};

}  // namespace samo
