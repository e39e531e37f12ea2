#pragma once

// Little-endian primitives shared by the on-disk artifact formats
// (BOBE, BOBV, BOBD, BOBC, BOBH, BOBP, BOBZ).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace bob::io {

class Writer {
 public:
  void magic(std::string_view tag);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  void f32s(std::span<const float> v);
  void f64s(std::span<const double> v);
  void bytes(std::span<const std::uint8_t> v);
  // u32 length followed by UTF-8 bytes.
  void str(std::string_view s);
  // u32 header-length followed by the compact JSON dump.
  void json_header(const nlohmann::json& header);

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> data, std::string context = {});
  static Reader open(const std::filesystem::path& path);

  // Throws DataError unless the next four bytes equal `tag`.
  void expect_magic(std::string_view tag);
  std::uint8_t u8();
  std::uint32_t u32();
  float f32();
  double f64();
  std::vector<float> f32s(std::size_t n);
  std::vector<double> f64s(std::size_t n);
  std::vector<std::uint8_t> bytes(std::size_t n);
  std::string str();
  nlohmann::json json_header();

  bool at_end() const { return pos_ == data_.size(); }
  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string context_;
};

// 64-bit FNV-1a, used for provenance hashes in artifact headers.
std::uint64_t fnv1a(std::span<const std::uint8_t> data,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text);
std::string hex64(std::uint64_t v);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace bob::io
