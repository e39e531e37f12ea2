#include "bob/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bob/error.hpp"

namespace bob::io {
namespace {

static_assert(std::endian::native == std::endian::little,
              "artifact writers assume a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  const auto raw = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
  buf.insert(buf.end(), raw.begin(), raw.end());
}

}  // namespace

void Writer::magic(std::string_view tag) {
  buf_.insert(buf_.end(), tag.begin(), tag.end());
}
void Writer::u8(std::uint8_t v) { buf_.push_back(v); }
void Writer::u32(std::uint32_t v) { put(buf_, v); }
void Writer::f32(float v) { put(buf_, v); }
void Writer::f64(double v) { put(buf_, v); }

void Writer::f32s(std::span<const float> v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  buf_.insert(buf_.end(), p, p + v.size_bytes());
}

void Writer::f64s(std::span<const double> v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  buf_.insert(buf_.end(), p, p + v.size_bytes());
}

void Writer::bytes(std::span<const std::uint8_t> v) {
  buf_.insert(buf_.end(), v.begin(), v.end());
}

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::json_header(const nlohmann::json& header) { str(header.dump()); }

void Writer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()),
            static_cast<std::streamsize>(buf_.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Reader::Reader(std::vector<std::uint8_t> data, std::string context)
    : data_(std::move(data)), context_(std::move(context)) {}

Reader Reader::open(const std::filesystem::path& path) {
  return Reader(read_file(path), path.string());
}

void Reader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw DataError("truncated file: " + context_);
}

void Reader::expect_magic(std::string_view tag) {
  need(tag.size());
  if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
    throw DataError("bad magic in " + context_ + ", expected " + std::string(tag));
  }
  pos_ += tag.size();
}

std::uint8_t Reader::u8() {
  need(1);
  return data_[pos_++];
}

#define BOB_READ_SCALAR(T)                 \
  need(sizeof(T));                         \
  T v;                                     \
  std::memcpy(&v, data_.data() + pos_, sizeof(T)); \
  pos_ += sizeof(T);                       \
  return v;

std::uint32_t Reader::u32() { BOB_READ_SCALAR(std::uint32_t) }
float Reader::f32() { BOB_READ_SCALAR(float) }
double Reader::f64() { BOB_READ_SCALAR(double) }

#undef BOB_READ_SCALAR

std::vector<float> Reader::f32s(std::size_t n) {
  need(n * sizeof(float));
  std::vector<float> v(n);
  std::memcpy(v.data(), data_.data() + pos_, n * sizeof(float));
  pos_ += n * sizeof(float);
  return v;
}

std::vector<double> Reader::f64s(std::size_t n) {
  need(n * sizeof(double));
  std::vector<double> v(n);
  std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
  pos_ += n * sizeof(double);
  return v;
}

std::vector<std::uint8_t> Reader::bytes(std::size_t n) {
  need(n);
  std::vector<std::uint8_t> v(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                              data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return v;
}

std::string Reader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

nlohmann::json Reader::json_header() {
  const std::string text = str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON header in " + context_ + ": " + e.what());
  }
}

std::uint64_t fnv1a(std::span<const std::uint8_t> data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(std::string_view text) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace bob::io
