// Little-endian stream helpers shared by the binary file formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "semgs/errors.hpp"

namespace semgs::detail {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<char> bytes(size);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) throw IoError("cannot read " + path.string());
  return bytes;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

/// Bounds-checked cursor over an in-memory file.
class ByteReader {
public:
  ByteReader(std::span<const char> bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

  void need(std::size_t n, std::string_view what) const {
    if (remaining() < n) {
      throw FormatError(name_ + ": truncated " + std::string(what) + " at byte " + std::to_string(offset_) + " (need " +
                        std::to_string(n) + " bytes, " + std::to_string(remaining()) + " available, missing " +
                        std::to_string(n - remaining()) + ")");
    }
  }

  template <typename T>
  T read(std::string_view what) {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return value;
  }

  template <typename T>
  void read_array(std::span<T> out, std::string_view what) {
    const std::size_t n = out.size_bytes();
    need(n, what);
    if (n > 0) std::memcpy(out.data(), bytes_.data() + offset_, n);
    offset_ += n;
  }

  std::string read_magic(std::size_t n) {
    need(n, "magic");
    std::string m(bytes_.data() + offset_, n);
    offset_ += n;
    return m;
  }

  std::string read_cstring(std::string_view what) {
    const char* begin = bytes_.data() + offset_;
    const void* end = std::memchr(begin, '\0', remaining());
    if (end == nullptr) throw FormatError(name_ + ": unterminated " + std::string(what));
    std::string s(begin, static_cast<const char*>(end));
    offset_ += s.size() + 1;
    return s;
  }

  void skip_to_alignment(std::size_t alignment) {
    const std::size_t pad = (alignment - offset_ % alignment) % alignment;
    need(pad, "padding");
    offset_ += pad;
  }

  void expect_end() const {
    if (remaining() != 0) throw FormatError(name_ + ": " + std::to_string(remaining()) + " trailing bytes");
  }

  const std::string& name() const { return name_; }

private:
  std::span<const char> bytes_;
  std::string name_;
  std::size_t offset_ = 0;
};

class ByteWriter {
public:
  template <typename T>
  void write(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buffer_.insert(buffer_.end(), p, p + sizeof(T));
  }

  template <typename T>
  void write_array(std::span<const T> values) {
    const auto* p = reinterpret_cast<const char*>(values.data());
    buffer_.insert(buffer_.end(), p, p + values.size_bytes());
  }

  void write_bytes(std::string_view s) { buffer_.insert(buffer_.end(), s.begin(), s.end()); }

  void pad_to(std::size_t alignment) {
    while (buffer_.size() % alignment != 0) buffer_.push_back('\0');
  }

  const std::vector<char>& bytes() const { return buffer_; }

  void save(const std::filesystem::path& path) const {
    auto out = open_output(path);
    out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    finish_output(out, path);
  }

private:
  std::vector<char> buffer_;
};

} // namespace semgs::detail
