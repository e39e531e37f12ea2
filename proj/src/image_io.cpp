#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"
#include "bob/image.hpp"

namespace bob {

GrayImage::GrayImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

bool GrayImage::valid() const {
  return width >= 1 && height >= 1 &&
         data.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
}

BinaryPage::BinaryPage(int w, int h) : width(w), height(h), mask(static_cast<std::size_t>(w) * h, 0) {}

std::size_t BinaryPage::foreground_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

GrayImage parse_pgm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
      if (v > (1L << 30)) throw DataError("PGM dimension overflow: " + path);
    }
    if (!any) throw DataError("malformed PGM header: " + path);
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (w < 1 || h < 1) throw DataError("PGM has empty dimensions: " + path);
  if (maxval != 255) throw DataError("only 8-bit PGM (maxval 255) is supported: " + path);
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < pos + n) throw DataError("truncated PGM raster: " + path);
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), n, img.data.begin());
  return img;
}

GrayImage parse_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw DataError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng init failed: " + path.string());
  }
  GrayImage img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  const auto color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported PNG layout: " + path.string());
  }
  img = GrayImage(w, h);
  rows.resize(static_cast<std::size_t>(h));
  for (int y = 0; y < h; ++y) rows[static_cast<std::size_t>(y)] = img.data.data() + static_cast<std::size_t>(y) * w;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace

GrayImage read_image(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const DataError&) {
    throw DataError("unreadable image: " + path.string());
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return parse_pgm(bytes, path.string());
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return parse_png(path);
  throw DataError("unsupported image format (need PGM P5 or PNG): " + path.string());
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_pgm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace bob
