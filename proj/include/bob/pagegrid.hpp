#pragma once

// Character-anchored patch extraction: Otsu binarization with polarity
// normalization, 8-connected component labeling, area and density filters,
// and fit-and-pad normalization into fixed-size binary patches.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bob/image.hpp"

namespace bob {

struct Pixel {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Component {
  int label = 0;
  std::size_t pixel_count = 0;
  BBox bbox;
  std::vector<Pixel> pixels;  // raster order
};

inline constexpr int kPatchSide = 64;
inline constexpr int kPatchPixels = kPatchSide * kPatchSide;

struct Patch {
  std::array<std::uint8_t, kPatchPixels> data{};  // 0/1, row-major
  int component_label = 0;
  std::string page_id;

  std::size_t foreground_count() const;
  double foreground_fraction() const {
    return static_cast<double>(foreground_count()) / kPatchPixels;
  }
};

enum class NormalizationMode { kPreserved, kStretched };

std::string to_string(NormalizationMode m);
NormalizationMode normalization_mode_from_string(const std::string& s);

struct ExtractionConfig {
  std::size_t area_min = 300;
  std::size_t area_max = 3000;
  int target_side = 60;
  int patch_side = kPatchSide;
  double bbox_white_min = 0.05;
  double patch_white_min = 0.02;
  std::size_t min_components_per_page = 200;
  double invert_threshold = 128.0;
  NormalizationMode normalization_mode = NormalizationMode::kPreserved;

  // Throws ConfigError on violated invariants.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExtractionConfig& c);
void from_json(const nlohmann::json& j, ExtractionConfig& c);

struct Binarization {
  BinaryPage page;
  int threshold = 0;
  bool inverted = false;
  bool degenerate = false;
};

// Otsu threshold over the 256-bin histogram. Pixels > threshold form the
// bright class. When the image mean exceeds `invert_threshold` the dark class
// becomes foreground so ink is always `true`. Ties pick the smallest threshold.
Binarization otsu_binarize(const GrayImage& img, double invert_threshold = 128.0);

// Two-pass union-find labeling with 8-connectivity. Labels run 1..n in
// first-encounter raster order.
std::vector<Component> connected_components(const BinaryPage& page);

// Foreground fraction of the page mask inside `box`.
double bbox_fill(const BinaryPage& page, const BBox& box);

std::vector<Component> filter_by_area(const std::vector<Component>& comps,
                                      const ExtractionConfig& cfg);
std::vector<Component> filter_by_bbox_fill(const std::vector<Component>& comps,
                                           const ExtractionConfig& cfg, const BinaryPage& page);
// Area filter followed by the bbox density filter; order preserved.
std::vector<Component> filter_components(const std::vector<Component>& comps,
                                         const ExtractionConfig& cfg, const BinaryPage& page);

// Crop of the page mask under `box`, resampled nearest-neighbor to
// (out_w, out_h). Exposed for tests.
std::vector<std::uint8_t> resize_nearest(const BinaryPage& page, const BBox& box, int out_w,
                                         int out_h);

// Fit-and-pad (or stretch) a component's bbox crop into a 64x64 patch.
// Returns nullopt-like empty result (ok == false) if the patch fails the
// final density filter.
struct NormalizeResult {
  bool ok = false;
  Patch patch;
};
NormalizeResult normalize_patch(const Component& comp, const BinaryPage& page,
                                const ExtractionConfig& cfg);

struct ExtractionStats {
  std::string page_id;
  std::size_t n_components = 0;
  std::size_t n_after_area = 0;
  std::size_t n_after_bbox_filter = 0;
  std::size_t n_patches = 0;
  bool excluded = false;
  int threshold = 0;
  bool degenerate = false;
};

void to_json(nlohmann::json& j, const ExtractionStats& s);
void from_json(const nlohmann::json& j, ExtractionStats& s);

struct PageExtraction {
  std::vector<Patch> patches;
  bool excluded = false;
  ExtractionStats stats;
};

PageExtraction extract_page(const GrayImage& img, const ExtractionConfig& cfg,
                            const std::string& page_id = {},
                            const std::string& source_path = {});

}  // namespace bob
