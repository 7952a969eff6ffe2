#include "groupdiff/binary_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include "groupdiff/error.hpp"

namespace groupdiff::io {

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
}

constexpr std::uint32_t kMaxString = 1u << 28;

}  // namespace

BinaryWriter::BinaryWriter(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path + " for writing");
}

void BinaryWriter::raw(const void* p, std::size_t n) {
  out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out_) throw IoError("write failed: " + path_);
  written_ += n;
}

void BinaryWriter::magic(std::string_view four_cc) {
  if (four_cc.size() != 4) throw ValidationError("magic must be 4 bytes");
  raw(four_cc.data(), 4);
}

void BinaryWriter::u8(std::uint8_t v) { raw(&v, 1); }
void BinaryWriter::u32(std::uint32_t v) { v = to_little(v); raw(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { v = to_little(v); raw(&v, sizeof v); }
void BinaryWriter::i32(std::int32_t v) { v = to_little(v); raw(&v, sizeof v); }
void BinaryWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void BinaryWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
void BinaryWriter::bytes(std::string_view s) { raw(s.data(), s.size()); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void BinaryWriter::f64s(std::span<const double> v) {
  if constexpr (std::endian::native == std::endian::little) {
    raw(v.data(), v.size_bytes());
  } else {
    for (double x : v) f64(x);
  }
}

void BinaryWriter::f32s(std::span<const float> v) {
  if constexpr (std::endian::native == std::endian::little) {
    raw(v.data(), v.size_bytes());
  } else {
    for (float x : v) f32(x);
  }
}

void BinaryWriter::close() {
  out_.flush();
  if (!out_) throw IoError("flush failed: " + path_);
  out_.close();
}

BinaryReader::BinaryReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path);
}

void BinaryReader::raw(void* p, std::size_t n) {
  in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("unexpected end of file: " + path_);
}

void BinaryReader::expect_magic(std::string_view four_cc) {
  char buf[4];
  raw(buf, 4);
  if (std::string_view(buf, 4) != four_cc) {
    throw IoError(path_ + ": bad magic, expected " + std::string(four_cc));
  }
}

std::uint8_t BinaryReader::u8() { std::uint8_t v; raw(&v, 1); return v; }
std::uint32_t BinaryReader::u32() { std::uint32_t v; raw(&v, sizeof v); return to_little(v); }
std::uint64_t BinaryReader::u64() { std::uint64_t v; raw(&v, sizeof v); return to_little(v); }
std::int32_t BinaryReader::i32() { std::int32_t v; raw(&v, sizeof v); return to_little(v); }
float BinaryReader::f32() { return std::bit_cast<float>(u32()); }
double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::bytes(std::size_t n) {
  std::string s(n, '\0');
  if (n) raw(s.data(), n);
  return s;
}

std::string BinaryReader::str() {
  const auto n = u32();
  if (n > kMaxString) throw IoError(path_ + ": string length " + std::to_string(n) + " is implausible");
  return bytes(n);
}

void BinaryReader::f64s(std::span<double> out) {
  if constexpr (std::endian::native == std::endian::little) {
    raw(out.data(), out.size_bytes());
  } else {
    for (auto& x : out) x = f64();
  }
}

void BinaryReader::f32s(std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    raw(out.data(), out.size_bytes());
  } else {
    for (auto& x : out) x = f32();
  }
}

bool BinaryReader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

}  // namespace groupdiff::io
