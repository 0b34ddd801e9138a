#include "scope/core/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scope/core/error.hpp"

namespace scope::io {

void ByteWriter::u16(std::uint16_t v) {
  buf_.push_back(static_cast<std::uint8_t>(v));
  buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

void ByteWriter::string(std::string_view s) {
  u64(s.size());
  bytes(s);
}

void ByteWriter::f64_array(std::span<const double> v) {
  for (double x : v) f64(x);
}

void ByteReader::need(std::size_t n, std::string_view what) const {
  if (data_.size() - pos_ < n)
    throw TruncationError("unexpected end of data while reading " + std::string(what), pos_);
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2, "u16");
  std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() {
  need(8, "f64");
  return std::bit_cast<double>(u64());
}

std::string ByteReader::bytes(std::size_t n) {
  need(n, "byte block");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::string ByteReader::string() {
  const std::uint64_t n = u64();
  return bytes(static_cast<std::size_t>(n));
}

std::vector<double> ByteReader::f64_array(std::size_t n) {
  if (n > remaining() / 8) need(n * 8, "f64 array");
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_header(ByteWriter& w, std::string_view magic, std::uint16_t version) {
  if (magic.size() != 8) throw ContractError("magic must be 8 bytes");
  w.bytes(magic);
  w.u16(version);
}

std::uint16_t read_header(ByteReader& r, std::string_view magic, std::uint16_t max_version) {
  if (r.remaining() < magic.size())
    throw FormatError("file too short for magic \"" + std::string(magic) + "\"");
  const std::string got = r.bytes(magic.size());
  if (got != magic)
    throw FormatError("bad magic: expected \"" + std::string(magic) + "\"");
  const std::uint16_t version = r.u16();
  if (version == 0 || version > max_version)
    throw VersionError("unsupported " + std::string(magic) + " version " +
                       std::to_string(version) + " (this build reads up to " +
                       std::to_string(max_version) + ")");
  return version;
}

}  // namespace scope::io
