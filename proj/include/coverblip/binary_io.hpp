#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>

#include "coverblip/types.hpp"

// Little-endian binary containers shared by the dictionary, tree and
// measurement files. Every file starts with an 8-byte magic and a uint32
// version.

namespace coverblip::io {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

using Magic = std::array<char, 8>;

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path);

  template <typename T>
  void write(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void write_bytes(const void* data, std::size_t size) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  }

  void write_header(const Magic& magic, std::uint32_t version);

  /// Flushes and throws if any write failed.
  void finish();

 private:
  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path);

  template <typename T>
  T read() {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    read_bytes(&value, sizeof(T));
    return value;
  }

  void read_bytes(void* data, std::size_t size);

  /// Checks magic and returns the version.
  std::uint32_t read_header(const Magic& magic);

  /// Bytes left until end of file.
  std::uint64_t remaining();

  /// Throws unless `count` elements of `elem_size` bytes remain.
  void require(std::uint64_t count, std::uint64_t elem_size, std::string_view what);

  [[nodiscard]] const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
};

/// Dense complex matrix dump (measurements, images). Layout: header, rows
/// (u64), cols (u64), bytes per complex (u32, 16 or 8), row-major data.
void save_complex_matrix(const ComplexMatrix& m, const std::string& path);
ComplexMatrix load_complex_matrix(const std::string& path);

inline constexpr Magic kMatrixMagic = {'C', 'B', 'M', 'A', 'T', 'R', 'X', '\0'};
inline constexpr std::uint32_t kMatrixVersion = 1;

}  // namespace coverblip::io
