#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bob {

// Row-major 8-bit grayscale raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  bool valid() const;
};

// Binarized page. `mask` is true on ink, after any inversion.
struct BinaryPage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;  // 0 or 1, row-major
  std::string page_id;
  std::string source_path;

  BinaryPage() = default;
  BinaryPage(int w, int h);

  bool at(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { mask[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t foreground_count() const;
};

// Reads 8-bit PGM (P5) or PNG, converting PNG color to gray.
// Throws DataError naming the path on failure.
GrayImage read_image(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
// Encodes a P5 PGM into bytes (used for byte-identical determinism checks).
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);

}  // namespace bob
