#pragma once

// Little-endian primitives shared by the SSEM and SSMD file formats.

#include "ink/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>

#include <fmt/format.h>

namespace ink::detail {

template <class T> void put_le(std::string &buf, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

template <class T> T get_le(const char *p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bits |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<T>(bits);
}

/// Sequential reader that reports short reads as TruncatedPayload.
class ByteReader {
public:
  ByteReader(const std::string &buf, std::string where)
      : buf_(buf), where_(std::move(where)) {}

  template <class T> T read() {
    require(pos_ + sizeof(T) <= buf_.size(), ErrorCode::TruncatedPayload,
            fmt::format("'{}': unexpected end of file at byte {}", where_, pos_));
    T v = get_le<T>(buf_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }
  [[nodiscard]] std::size_t remaining() const { return buf_.size() - pos_; }
  [[nodiscard]] std::size_t position() const { return pos_; }
  void skip(std::size_t n) { pos_ += n; }

private:
  const std::string &buf_;
  std::string where_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io,
          fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path &path,
                       const std::string &buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io,
          fmt::format("cannot open '{}' for writing", path.string()));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), ErrorCode::Io,
          fmt::format("write to '{}' failed", path.string()));
}

} // namespace ink::detail
