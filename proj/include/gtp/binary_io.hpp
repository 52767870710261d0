#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gtp {

// Little-endian serialization helpers shared by the on-disk formats and the
// wire protocol.
class ByteWriter {
 public:
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);  // u32 length + UTF-8 bytes
  void raw(std::string_view bytes);
  void f32_array(std::span<const float> values);
  void f64_array(std::span<const double> values);

  const std::vector<char>& bytes() const noexcept { return buf_; }
  std::vector<char> release() noexcept { return std::move(buf_); }

 private:
  std::vector<char> buf_;
};

// Reads from a borrowed byte range; any read past the end throws
// FormatError(truncated_payload) with the supplied context.
class ByteReader {
 public:
  explicit ByteReader(std::span<const char> data) : data_(data) {}

  std::uint8_t u8(std::string_view what = {});
  std::uint32_t u32(std::string_view what = {});
  std::uint64_t u64(std::string_view what = {});
  double f64(std::string_view what = {});
  std::string str(std::string_view what = {});
  std::string raw(std::size_t n, std::string_view what = {});
  void f32_array(std::span<float> out, std::string_view what = {});
  void f64_array(std::span<double> out, std::string_view what = {});

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n, std::string_view what) const;

  std::span<const char> data_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over path.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace gtp
