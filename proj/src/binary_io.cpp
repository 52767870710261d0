#include "gtp/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "gtp/types.hpp"

namespace gtp {

const char* to_string(FormatErrc code) {
  switch (code) {
    case FormatErrc::io: return "I/O failure";
    case FormatErrc::bad_magic: return "bad magic";
    case FormatErrc::version_mismatch: return "version mismatch";
    case FormatErrc::truncated_payload: return "truncated payload";
    case FormatErrc::shape_inconsistency: return "shape inconsistency";
    case FormatErrc::invariant: return "invariant violation";
  }
  return "unknown format error";
}

namespace {

template <typename U>
void put_le(std::vector<char>& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return v;
}

template <typename T, typename U>
void put_array(std::vector<char>& buf, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto* p = reinterpret_cast<const char*>(values.data());
    buf.insert(buf.end(), p, p + values.size_bytes());
  } else {
    for (T v : values) put_le(buf, std::bit_cast<U>(v));
  }
}

template <typename T, typename U>
void get_array(const char* src, std::span<T> out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), src, out.size_bytes());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::bit_cast<T>(get_le<U>(src + i * sizeof(U)));
    }
  }
}

}  // namespace

void ByteWriter::u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
void ByteWriter::u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(buf_, v); }
void ByteWriter::f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("string too long to serialize");
  }
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteWriter::raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

void ByteWriter::f32_array(std::span<const float> values) {
  put_array<float, std::uint32_t>(buf_, values);
}

void ByteWriter::f64_array(std::span<const double> values) {
  put_array<double, std::uint64_t>(buf_, values);
}

void ByteReader::need(std::size_t n, std::string_view what) const {
  if (remaining() < n) {
    std::string msg = "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos_) +
                      ", have " + std::to_string(remaining());
    if (!what.empty()) msg = std::string(what) + ": " + msg;
    throw FormatError(FormatErrc::truncated_payload, msg);
  }
}

std::uint8_t ByteReader::u8(std::string_view what) {
  need(1, what);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t ByteReader::u32(std::string_view what) {
  need(4, what);
  auto v = get_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64(std::string_view what) {
  need(8, what);
  auto v = get_le<std::uint64_t>(data_.data() + pos_);
  pos_ += 8;
  return v;
}

double ByteReader::f64(std::string_view what) { return std::bit_cast<double>(u64(what)); }

std::string ByteReader::str(std::string_view what) {
  const auto n = u32(what);
  return raw(n, what);
}

std::string ByteReader::raw(std::size_t n, std::string_view what) {
  need(n, what);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::f32_array(std::span<float> out, std::string_view what) {
  need(out.size_bytes(), what);
  get_array<float, std::uint32_t>(data_.data() + pos_, out);
  pos_ += out.size_bytes();
}

void ByteReader::f64_array(std::span<double> out, std::string_view what) {
  need(out.size_bytes(), what);
  get_array<double, std::uint64_t>(data_.data() + pos_, out);
  pos_ += out.size_bytes();
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError(FormatErrc::io, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<char> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw FormatError(FormatErrc::io, "read failed for " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw FormatError(FormatErrc::io, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError(FormatErrc::io, "cannot rename onto " + path.string());
  }
}

}  // namespace gtp
