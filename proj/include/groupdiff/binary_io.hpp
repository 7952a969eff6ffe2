#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace groupdiff::io {

/// Little-endian binary writer. Every artifact starts with a 4-byte magic.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path);

  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s);
  /// u32 length prefix followed by raw bytes.
  void str(std::string_view s);
  void f64s(std::span<const double> v);
  void f32s(std::span<const float> v);

  std::uint64_t position() const noexcept { return written_; }
  void close();

 private:
  void raw(const void* p, std::size_t n);

  std::string path_;
  std::ofstream out_;
  std::uint64_t written_ = 0;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path);

  /// Throws IoError unless the next four bytes equal `four_cc`.
  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32();
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  std::string str();
  void f64s(std::span<double> out);
  void f32s(std::span<float> out);
  bool at_end();

 private:
  void raw(void* p, std::size_t n);

  std::string path_;
  std::ifstream in_;
};

}  // namespace groupdiff::io
