#include "bob/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"
#include "bob/parallel.hpp"
#include "bob/rng.hpp"

namespace bob {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::pair<Manifest, JoinLabels> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open manifest");
  Manifest m;
  m.source = path;
  const auto base = path.parent_path();
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + what);
  };

  bool header_seen = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (!header_seen) {
      if (f != std::vector<std::string>{"page_id", "image_path", "cluster_id"})
        fail("expected header 'page_id,image_path,cluster_id'");
      header_seen = true;
      continue;
    }
    if (f.size() != 3) fail("expected 3 fields, found " + std::to_string(f.size()));
    if (f[0].empty() || f[1].empty() || f[2].empty()) fail("empty field");
    if (!ids.insert(f[0]).second) fail("duplicate page_id '" + f[0] + "'");
    ManifestEntry e{f[0], f[1], {}, f[2]};
    const std::filesystem::path p(f[1]);
    e.resolved = p.is_absolute() ? p : base / p;
    if (!std::filesystem::is_regular_file(e.resolved))
      fail("image not found: " + e.resolved.string());
    m.entries.push_back(std::move(e));
  }
  if (!header_seen) throw DataError(path.string() + ": empty manifest");
  return {m, labels_of(m)};
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::string s = "page_id,image_path,cluster_id\n";
  for (const auto& e : m.entries) s += e.page_id + "," + e.image_path + "," + e.cluster_id + "\n";
  io::Writer w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  w.save(path);
}

JoinLabels labels_of(const Manifest& m) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& e : m.entries) pairs.emplace_back(e.page_id, e.cluster_id);
  return JoinLabels::from_pairs(pairs);
}

std::map<std::size_t, std::size_t> cluster_size_histogram(const JoinLabels& labels) {
  std::map<std::size_t, std::size_t> h;
  for (const auto& c : labels.clusters) ++h[c.size()];
  return h;
}

void SynthConfig::validate() const {
  if (n_clusters < 1) throw ConfigError("synth: n_clusters must be >= 1");
  if (pages_min < 1 || pages_max < pages_min)
    throw ConfigError("synth: need 1 <= pages_min <= pages_max");
  if (glyphs_per_page < 1) throw ConfigError("synth: glyphs_per_page must be >= 1");
  if (n_glyph_classes < 1) throw ConfigError("synth: n_glyph_classes must be >= 1");
  if (!(style_jitter >= 0.0) || !(instance_jitter >= 0.0))
    throw ConfigError("synth: jitter must be >= 0");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synth: noise must be in [0, 1]");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"n_clusters", c.n_clusters},
       {"pages_min", c.pages_min},
       {"pages_max", c.pages_max},
       {"glyphs_per_page", c.glyphs_per_page},
       {"n_glyph_classes", c.n_glyph_classes},
       {"style_jitter", c.style_jitter},
       {"instance_jitter", c.instance_jitter},
       {"noise", c.noise},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  SynthConfig d;
  c.n_clusters = j.value("n_clusters", d.n_clusters);
  c.pages_min = j.value("pages_min", d.pages_min);
  c.pages_max = j.value("pages_max", d.pages_max);
  c.glyphs_per_page = j.value("glyphs_per_page", d.glyphs_per_page);
  c.n_glyph_classes = j.value("n_glyph_classes", d.n_glyph_classes);
  c.style_jitter = j.value("style_jitter", d.style_jitter);
  c.instance_jitter = j.value("instance_jitter", d.instance_jitter);
  c.noise = j.value("noise", d.noise);
  c.seed = j.value("seed", d.seed);
}

namespace {

constexpr int kCell = 64;
constexpr int kColumns = 16;
constexpr int kMargin = 24;
constexpr int kInk = 45;
constexpr int kPaper = 215;
// Ink area band a glyph instance must land in (inside the extraction
// filter's [300, 3000] with some slack for speckle).
constexpr double kMinInk = 330.0;
constexpr double kMaxInk = 2700.0;

struct Pt {
  double x, y;
};

using Polyline = std::vector<Pt>;

double length(const Polyline& p) {
  double s = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) s += std::hypot(p[i].x - p[i - 1].x, p[i].y - p[i - 1].y);
  return s;
}

// Shared alphabet: one stroke skeleton per class in the unit box.
std::vector<Polyline> alphabet(const SynthConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth-alphabet"));
  std::uniform_real_distribution<double> pos(0.1, 0.9);
  std::uniform_int_distribution<int> nv(4, 7);
  std::vector<Polyline> out;
  for (int c = 0; c < cfg.n_glyph_classes; ++c) {
    Polyline p;
    do {
      p.assign(static_cast<std::size_t>(nv(rng)), {});
      for (auto& v : p) v = {pos(rng), pos(rng)};
    } while (length(p) < 3.0 || length(p) > 4.5);
    out.push_back(std::move(p));
  }
  return out;
}

struct Scribe {
  double width, slant, aspect, size, rounding;
  std::vector<Polyline> glyphs;  // this scribe's rendition of every class
};

Scribe make_scribe(const SynthConfig& cfg, const std::vector<Polyline>& alpha, int cluster) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth-scribe", static_cast<std::uint64_t>(cluster)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Scribe s;
  // Hand-level spreads scale with style_jitter; 0.08 gives the full ranges.
  const double f = std::min(1.0, cfg.style_jitter / 0.08);
  auto around = [&](double mid, double span) { return mid + f * span * (u(rng) - 0.5); };
  s.width = around(4.75, 2.5);
  s.slant = around(0.0, 0.5);
  s.aspect = around(1.0, 0.3);
  s.size = around(38.0, 8.0);
  s.rounding = around(0.125, 0.25);
  std::normal_distribution<double> off(0.0, cfg.style_jitter);
  for (const auto& g : alpha) {
    Polyline p = g;
    for (auto& v : p) {
      v.x = std::clamp(v.x + off(rng), 0.0, 1.0);
      v.y = std::clamp(v.y + off(rng), 0.0, 1.0);
    }
    s.glyphs.push_back(std::move(p));
  }
  return s;
}

// One Chaikin pass with cut fraction r rounds the interior corners.
Polyline round_corners(const Polyline& p, double r) {
  if (r <= 0.0 || p.size() < 3) return p;
  Polyline out{p.front()};
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    const Pt a = p[i - 1], b = p[i], c = p[i + 1];
    out.push_back({b.x + r * (a.x - b.x), b.y + r * (a.y - b.y)});
    out.push_back({b.x + r * (c.x - b.x), b.y + r * (c.y - b.y)});
  }
  out.push_back(p.back());
  return out;
}

double seg_dist2(Pt p, Pt a, Pt b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return ex * ex + ey * ey;
}

// Rasterizes a thick polyline into a local mask of the cell.
std::vector<std::uint8_t> rasterize(const Polyline& px, double width) {
  std::vector<std::uint8_t> mask(kCell * kCell, 0);
  const double r2 = 0.25 * width * width;
  for (int y = 0; y < kCell; ++y) {
    for (int x = 0; x < kCell; ++x) {
      const Pt c{x + 0.5, y + 0.5};
      for (std::size_t i = 1; i < px.size(); ++i) {
        if (seg_dist2(c, px[i - 1], px[i]) <= r2) {
          mask[static_cast<std::size_t>(y * kCell + x)] = 1;
          break;
        }
      }
    }
  }
  return mask;
}

// Instance of class `cls` placed in a kCell x kCell local frame, kept at
// least 3 px from the cell border so neighbours never touch.
std::vector<std::uint8_t> draw_instance(const SynthConfig& cfg, const Scribe& s, int cls,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> jit(0.0, cfg.instance_jitter);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::uint8_t> mask;
  double boldness = 1.0;  // grows when a rendition comes out too light
  for (int attempt = 0; attempt < 16; ++attempt) {
    Polyline p = s.glyphs[static_cast<std::size_t>(cls)];
    for (auto& v : p) {
      v.x += jit(rng);
      v.y += jit(rng);
    }
    p = round_corners(p, s.rounding);
    const double size = s.size * (1.0 + 0.03 * n01(rng));
    const double width = std::max(2.5, (s.width + 0.25 * n01(rng)) * boldness);
    Polyline px;
    for (const auto& v : p)
      px.push_back({(v.x - 0.5) * size * s.aspect + s.slant * (0.5 - v.y) * size, (v.y - 0.5) * size});

    double x0 = 1e9, x1 = -1e9, y0 = 1e9, y1 = -1e9;
    for (const auto& v : px) {
      x0 = std::min(x0, v.x);
      x1 = std::max(x1, v.x);
      y0 = std::min(y0, v.y);
      y1 = std::max(y1, v.y);
    }
    const double room = kCell - 6.0 - width;
    const double fit = std::min({1.0, room / std::max(1e-9, x1 - x0), room / std::max(1e-9, y1 - y0)});
    const double w_span = (x1 - x0) * fit, h_span = (y1 - y0) * fit;
    std::uniform_real_distribution<double> ox(0.0, std::max(0.0, room - w_span));
    std::uniform_real_distribution<double> oy(0.0, std::max(0.0, room - h_span));
    const double bx = 3.0 + 0.5 * width + ox(rng), by = 3.0 + 0.5 * width + oy(rng);
    for (auto& v : px) {
      v.x = bx + (v.x - x0) * fit;
      v.y = by + (v.y - y0) * fit;
    }
    mask = rasterize(px, width);
    const double ink = static_cast<double>(std::count(mask.begin(), mask.end(), 1));
    if (ink >= kMinInk && ink <= kMaxInk) break;
    boldness *= ink < kMinInk ? 1.2 : 0.85;
  }
  return mask;
}

}  // namespace

GrayImage render_synth_page(const SynthConfig& cfg, int cluster, std::uint64_t page_index) {
  cfg.validate();
  const auto alpha = alphabet(cfg);
  const Scribe s = make_scribe(cfg, alpha, cluster);
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth-page", page_index));

  const int rows = (cfg.glyphs_per_page + kColumns - 1) / kColumns;
  GrayImage img(2 * kMargin + kColumns * kCell, 2 * kMargin + rows * kCell, kPaper);
  std::normal_distribution<double> grain(0.0, 6.0);
  std::uniform_int_distribution<int> cls(0, cfg.n_glyph_classes - 1);

  std::vector<std::uint8_t> ink(img.data.size(), 0);
  for (int g = 0; g < cfg.glyphs_per_page; ++g) {
    const int cx = kMargin + (g % kColumns) * kCell, cy = kMargin + (g / kColumns) * kCell;
    const auto mask = draw_instance(cfg, s, cls(rng), rng);
    for (int y = 0; y < kCell; ++y)
      for (int x = 0; x < kCell; ++x)
        if (mask[static_cast<std::size_t>(y * kCell + x)])
          ink[static_cast<std::size_t>(cy + y) * static_cast<std::size_t>(img.width) + static_cast<std::size_t>(cx + x)] = 1;
  }
  std::bernoulli_distribution speckle(cfg.noise);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const bool dark = ink[i] || speckle(rng);
    const double v = (dark ? kInk : kPaper) + grain(rng);
    img.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return img;
}

Manifest generate_synth(const SynthConfig& cfg, const std::filesystem::path& out_dir, int threads) {
  cfg.validate();
  struct Job {
    int cluster;
    std::uint64_t index;
    std::string page_id;
  };
  std::vector<Job> jobs;
  for (int c = 0; c < cfg.n_clusters; ++c) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "synth-pages", static_cast<std::uint64_t>(c)));
    std::uniform_int_distribution<int> np(cfg.pages_min, cfg.pages_max);
    const int pages = np(rng);
    for (int p = 0; p < pages; ++p) {
      char id[32];
      std::snprintf(id, sizeof id, "s%03d_p%02d", c, p);
      jobs.push_back({c, jobs.size(), id});
    }
  }

  std::filesystem::create_directories(out_dir / "images");
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto& j = jobs[i];
    write_pgm(out_dir / "images" / (j.page_id + ".pgm"), render_synth_page(cfg, j.cluster, j.index));
  });

  Manifest m;
  m.source = out_dir / "manifest.csv";
  for (const auto& j : jobs) {
    char cid[32];
    std::snprintf(cid, sizeof cid, "scribe%03d", j.cluster);
    const std::string rel = "images/" + j.page_id + ".pgm";
    m.entries.push_back({j.page_id, rel, out_dir / rel, cid});
  }
  write_manifest(m.source, m);
  std::ofstream(out_dir / "synth_config.json") << nlohmann::json(cfg).dump(2) << "\n";
  return m;
}

}  // namespace bob
