#pragma once

// Little-endian binary helpers for the EMB1 / DPRD / ADPT formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dimsel::detail {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  template <typename T>
  void pod(T value) {
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buf_.append(raw, sizeof(T));
  }
  void u16(std::uint16_t v) { pod(v); }
  void u32(std::uint32_t v) { pod(v); }
  template <typename T>
  void array(std::span<const T> values) {
    buf_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }
  const std::string& buffer() const { return buf_; }

  // Writes to a temporary sibling and renames, so a failed write never
  // leaves a half-written file under the final name.
  template <typename Error>
  void save(const std::filesystem::path& path) const {
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot open for writing: " + path.string());
      out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw Error("write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::string buf_;
};

template <typename Error>
std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Bounds-checked cursor; every short read raises `Error(eof_message)`.
template <typename Error>
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string eof_message)
      : data_(data), eof_message_(std::move(eof_message)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  template <typename T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::uint16_t u16() { return pod<std::uint16_t>(); }
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  template <typename T>
  void array(std::span<T> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw Error(eof_message_);
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string eof_message_;
};

}  // namespace dimsel::detail
