#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "facefusion/error.hpp"
#include "facefusion/types.hpp"

namespace facefusion::io {

// Container layout shared by shard files and checkpoints:
//
//   <MAGIC> <version>\n
//   <key> <value>\n          (free-form echo, one per line)
//   body_bytes <n>\n
//   crc32 <8 hex digits>\n
//   END\n
//   <n bytes of little-endian binary payload>
//
// Header keys are informational except body_bytes and crc32.
struct Header {
  std::string magic;
  std::uint32_t version = 0;
  std::vector<std::pair<std::string, std::string>> echo;

  std::string get(const std::string& key) const;
};

class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }

  void put_string(const std::string& s);
  void put_doubles(const double* data, std::size_t n);
  void put_matrix(const Matrix& m);
  void put_vector(const Vector& v);
  template <typename T>
  void put_array(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    for (const T& x : v) put<T>(x);
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string();
  void get_doubles(double* out, std::size_t n);
  Matrix get_matrix();
  Vector get_vector();
  template <typename T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    need(n * sizeof(T));
    std::vector<T> v(n);
    for (auto& x : v) x = get<T>();
    return v;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const Header& header,
                     const std::vector<std::uint8_t>& body);

// Validates magic, version, length and checksum before returning the body.
std::pair<Header, ByteReader> read_container(const std::filesystem::path& path,
                                             const std::string& magic,
                                             std::uint32_t version);

}  // namespace facefusion::io
