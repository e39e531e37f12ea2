#include "bob/pagegrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bob/error.hpp"

namespace bob {

std::size_t Patch::foreground_count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

std::string to_string(NormalizationMode m) {
  return m == NormalizationMode::kPreserved ? "preserved" : "stretched";
}

NormalizationMode normalization_mode_from_string(const std::string& s) {
  if (s == "preserved") return NormalizationMode::kPreserved;
  if (s == "stretched") return NormalizationMode::kStretched;
  throw ConfigError("normalization_mode must be 'preserved' or 'stretched', got '" + s + "'");
}

void ExtractionConfig::validate() const {
  if (area_min == 0 || area_min > area_max)
    throw ConfigError("extraction: require 0 < area_min <= area_max");
  if (target_side <= 0 || target_side > patch_side)
    throw ConfigError("extraction: require 0 < target_side <= patch_side");
  if (patch_side != kPatchSide)
    throw ConfigError("extraction: patch_side must be " + std::to_string(kPatchSide));
  auto frac = [](double f) { return f >= 0.0 && f <= 1.0; };
  if (!frac(bbox_white_min) || !frac(patch_white_min))
    throw ConfigError("extraction: white fractions must lie in [0,1]");
}

void to_json(nlohmann::json& j, const ExtractionConfig& c) {
  j = {{"area_min", c.area_min},
       {"area_max", c.area_max},
       {"target_side", c.target_side},
       {"patch_side", c.patch_side},
       {"bbox_white_min", c.bbox_white_min},
       {"patch_white_min", c.patch_white_min},
       {"min_components_per_page", c.min_components_per_page},
       {"invert_threshold", c.invert_threshold},
       {"normalization_mode", to_string(c.normalization_mode)}};
}

void from_json(const nlohmann::json& j, ExtractionConfig& c) {
  ExtractionConfig d;
  c.area_min = j.value("area_min", d.area_min);
  c.area_max = j.value("area_max", d.area_max);
  c.target_side = j.value("target_side", d.target_side);
  c.patch_side = j.value("patch_side", d.patch_side);
  c.bbox_white_min = j.value("bbox_white_min", d.bbox_white_min);
  c.patch_white_min = j.value("patch_white_min", d.patch_white_min);
  c.min_components_per_page = j.value("min_components_per_page", d.min_components_per_page);
  c.invert_threshold = j.value("invert_threshold", d.invert_threshold);
  c.normalization_mode =
      normalization_mode_from_string(j.value("normalization_mode", to_string(d.normalization_mode)));
}

Binarization otsu_binarize(const GrayImage& img, double invert_threshold) {
  if (!img.valid()) throw DataError("otsu_binarize: empty or inconsistent image");

  std::array<std::uint64_t, 256> hist{};
  for (std::uint8_t v : img.data) ++hist[v];
  const double total = static_cast<double>(img.data.size());
  double sum_all = 0.0;
  for (int v = 0; v < 256; ++v) sum_all += static_cast<double>(v) * static_cast<double>(hist[v]);

  Binarization out;
  out.page = BinaryPage(img.width, img.height);

  const auto distinct = std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; });
  if (distinct <= 1) {
    out.threshold = img.data.front();
    out.degenerate = true;
    return out;
  }

  // Between-class variance w0*w1*(m0-m1)^2 for the split {<= t} | {> t} is
  // proportional to (N*s0 - n0*S)^2 / (n0*n1). Compared exactly in integers
  // (quotient, then remainder) so ties always resolve to the smallest t.
  using u128 = unsigned __int128;
  const std::uint64_t n_all = img.data.size();
  std::uint64_t s_all = 0;
  for (int v = 0; v < 256; ++v) s_all += static_cast<std::uint64_t>(v) * hist[v];
  bool have = false;
  u128 best_q = 0, best_r = 0, best_den = 1;
  int best_t = 0;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += static_cast<std::uint64_t>(t) * hist[t];
    const std::uint64_t n1 = n_all - n0;
    if (n0 == 0 || n1 == 0) continue;
    const u128 a = static_cast<u128>(n_all) * s0;
    const u128 b = static_cast<u128>(n0) * s_all;
    const u128 diff = a > b ? a - b : b - a;
    const u128 num = diff * diff;
    const u128 den = static_cast<u128>(n0) * n1;
    const u128 q = num / den, r = num % den;
    if (!have || q > best_q || (q == best_q && r * best_den > best_r * den)) {
      have = true;
      best_q = q;
      best_r = r;
      best_den = den;
      best_t = t;
    }
  }
  out.threshold = best_t;
  out.inverted = sum_all / total > invert_threshold;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const bool bright = img.data[i] > best_t;
    out.page.mask[i] = (bright != out.inverted) ? 1 : 0;
  }
  return out;
}

namespace {

struct DisjointSet {
  std::vector<int> parent;
  int make() {
    parent.push_back(static_cast<int>(parent.size()));
    return static_cast<int>(parent.size()) - 1;
  }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Smaller provisional label wins so roots track first encounter.
    if (a < b) parent[b] = a;
    else parent[a] = b;
  }
};

}  // namespace

std::vector<Component> connected_components(const BinaryPage& page) {
  const int w = page.width;
  const int h = page.height;
  std::vector<int> prov(static_cast<std::size_t>(w) * h, -1);
  DisjointSet ds;

  // First pass: provisional labels from the already-visited half neighborhood.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!page.at(x, y)) continue;
      int label = -1;
      const int nbr[4][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}};
      for (const auto& d : nbr) {
        const int nx = x + d[0], ny = y + d[1];
        if (nx < 0 || ny < 0 || nx >= w) continue;
        const int l = prov[static_cast<std::size_t>(ny) * w + nx];
        if (l < 0) continue;
        if (label < 0) label = l;
        else ds.unite(label, l);
      }
      if (label < 0) label = ds.make();
      prov[static_cast<std::size_t>(y) * w + x] = label;
    }
  }

  // Second pass: resolve roots, number components by first raster encounter.
  std::vector<int> final_label(ds.parent.size(), 0);
  std::vector<Component> comps;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = prov[static_cast<std::size_t>(y) * w + x];
      if (l < 0) continue;
      const int root = ds.find(l);
      int& fl = final_label[root];
      if (fl == 0) {
        comps.push_back(Component{static_cast<int>(comps.size()) + 1, 0, BBox{x, y, x, y}, {}});
        fl = static_cast<int>(comps.size());
      }
      Component& c = comps[static_cast<std::size_t>(fl) - 1];
      c.pixels.push_back({x, y});
      c.bbox.x0 = std::min(c.bbox.x0, x);
      c.bbox.x1 = std::max(c.bbox.x1, x);
      c.bbox.y1 = std::max(c.bbox.y1, y);
    }
  }
  for (auto& c : comps) c.pixel_count = c.pixels.size();
  return comps;
}

double bbox_fill(const BinaryPage& page, const BBox& box) {
  std::size_t fg = 0;
  for (int y = box.y0; y <= box.y1; ++y)
    for (int x = box.x0; x <= box.x1; ++x) fg += page.at(x, y) ? 1 : 0;
  return static_cast<double>(fg) / (static_cast<double>(box.width()) * box.height());
}

std::vector<Component> filter_by_area(const std::vector<Component>& comps,
                                      const ExtractionConfig& cfg) {
  std::vector<Component> out;
  for (const auto& c : comps)
    if (c.pixel_count >= cfg.area_min && c.pixel_count <= cfg.area_max) out.push_back(c);
  return out;
}

std::vector<Component> filter_by_bbox_fill(const std::vector<Component>& comps,
                                           const ExtractionConfig& cfg, const BinaryPage& page) {
  std::vector<Component> out;
  for (const auto& c : comps)
    if (bbox_fill(page, c.bbox) >= cfg.bbox_white_min) out.push_back(c);
  return out;
}

std::vector<Component> filter_components(const std::vector<Component>& comps,
                                         const ExtractionConfig& cfg, const BinaryPage& page) {
  return filter_by_bbox_fill(filter_by_area(comps, cfg), cfg, page);
}

std::vector<std::uint8_t> resize_nearest(const BinaryPage& page, const BBox& box, int out_w,
                                         int out_h) {
  const int w = box.width();
  const int h = box.height();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_w) * out_h, 0);
  for (int y = 0; y < out_h; ++y) {
    // Sample at the destination pixel center.
    const int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / out_w));
      out[static_cast<std::size_t>(y) * out_w + x] = page.at(box.x0 + sx, box.y0 + sy) ? 1 : 0;
    }
  }
  return out;
}

NormalizeResult normalize_patch(const Component& comp, const BinaryPage& page,
                                const ExtractionConfig& cfg) {
  const int side = cfg.patch_side;
  int out_w = side, out_h = side;
  if (cfg.normalization_mode == NormalizationMode::kPreserved) {
    const int w = comp.bbox.width();
    const int h = comp.bbox.height();
    const int longest = std::max(w, h);
    const double scale = static_cast<double>(cfg.target_side) / longest;
    out_w = w >= h ? cfg.target_side : std::max(1, static_cast<int>(std::lround(w * scale)));
    out_h = h >= w ? cfg.target_side : std::max(1, static_cast<int>(std::lround(h * scale)));
  }
  const auto content = resize_nearest(page, comp.bbox, out_w, out_h);

  NormalizeResult res;
  res.patch.component_label = comp.label;
  res.patch.page_id = page.page_id;
  // Odd padding puts the extra pixel on the right/bottom.
  const int off_x = (side - out_w) / 2;
  const int off_y = (side - out_h) / 2;
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      res.patch.data[static_cast<std::size_t>(y + off_y) * side + (x + off_x)] =
          content[static_cast<std::size_t>(y) * out_w + x];
  res.ok = res.patch.foreground_fraction() >= cfg.patch_white_min;
  return res;
}

void to_json(nlohmann::json& j, const ExtractionStats& s) {
  j = {{"page_id", s.page_id},
       {"n_components", s.n_components},
       {"n_after_area", s.n_after_area},
       {"n_after_bbox_filter", s.n_after_bbox_filter},
       {"n_patches", s.n_patches},
       {"excluded", s.excluded},
       {"threshold", s.threshold},
       {"degenerate", s.degenerate}};
}

void from_json(const nlohmann::json& j, ExtractionStats& s) {
  s.page_id = j.at("page_id").get<std::string>();
  s.n_components = j.at("n_components").get<std::size_t>();
  s.n_after_area = j.at("n_after_area").get<std::size_t>();
  s.n_after_bbox_filter = j.at("n_after_bbox_filter").get<std::size_t>();
  s.n_patches = j.at("n_patches").get<std::size_t>();
  s.excluded = j.at("excluded").get<bool>();
  s.threshold = j.value("threshold", 0);
  s.degenerate = j.value("degenerate", false);
}

PageExtraction extract_page(const GrayImage& img, const ExtractionConfig& cfg,
                            const std::string& page_id, const std::string& source_path) {
  cfg.validate();
  PageExtraction out;
  out.stats.page_id = page_id;

  auto bin = otsu_binarize(img, cfg.invert_threshold);
  bin.page.page_id = page_id;
  bin.page.source_path = source_path;
  out.stats.threshold = bin.threshold;
  out.stats.degenerate = bin.degenerate;

  const auto comps = connected_components(bin.page);
  out.stats.n_components = comps.size();
  const auto by_area = filter_by_area(comps, cfg);
  out.stats.n_after_area = by_area.size();
  const auto kept = filter_by_bbox_fill(by_area, cfg, bin.page);
  out.stats.n_after_bbox_filter = kept.size();

  for (const auto& c : kept) {
    auto r = normalize_patch(c, bin.page, cfg);
    if (r.ok) out.patches.push_back(std::move(r.patch));
  }
  out.stats.n_patches = out.patches.size();
  out.excluded = out.patches.size() < cfg.min_components_per_page;
  out.stats.excluded = out.excluded;
  return out;
}

}  // namespace bob
