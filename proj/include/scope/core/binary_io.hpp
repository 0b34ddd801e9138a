#pragma once

// Little-endian binary encoding shared by every file format in the project.
// Values are serialised byte by byte so files are identical across hosts.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scope::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(std::string_view s);
  // u64 length prefix followed by the raw bytes.
  void string(std::string_view s);
  void f64_array(std::span<const double> v);

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Reads from a byte buffer; running past the end throws TruncationError with
// the offset at which data was missing.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64();
  double f64();
  std::string bytes(std::size_t n);
  std::string string();
  // Reads n doubles into a fresh vector.
  std::vector<double> f64_array(std::size_t n);

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n, std::string_view what) const;

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// 8-byte magic plus u16 version: writes the pair or validates it on read
// (FormatError on a magic mismatch, VersionError on an unsupported version).
void write_header(ByteWriter& w, std::string_view magic, std::uint16_t version);
std::uint16_t read_header(ByteReader& r, std::string_view magic, std::uint16_t max_version);

}  // namespace scope::io
