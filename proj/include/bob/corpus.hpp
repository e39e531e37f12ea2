#pragma once

// Corpus ingestion (labels manifest CSV) and the synthetic scribe corpus.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bob/image.hpp"
#include "bob/retrieval.hpp"

namespace bob {

struct ManifestEntry {
  std::string page_id;
  std::string image_path;           // as written in the CSV
  std::filesystem::path resolved;   // relative paths resolve against the CSV's folder
  std::string cluster_id;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path source;
};

// Header must be `page_id,image_path,cluster_id`. Errors carry the line
// number: malformed rows, duplicate ids, missing image files.
std::pair<Manifest, JoinLabels> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);
JoinLabels labels_of(const Manifest& m);
// cluster size -> number of clusters of that size.
std::map<std::size_t, std::size_t> cluster_size_histogram(const JoinLabels& labels);

struct SynthConfig {
  int n_clusters = 20;
  int pages_min = 2;
  int pages_max = 9;
  int glyphs_per_page = 230;
  int n_glyph_classes = 32;
  // Per-scribe spread of each class's vertex positions (unit glyph box).
  double style_jitter = 0.08;
  // Per-instance spread around the scribe's own rendition.
  double instance_jitter = 0.02;
  double noise = 0.002;  // speckle probability per pixel
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

// Renders one page; exposed for tests. `page_index` is global across the
// corpus and fixes the page's RNG stream.
GrayImage render_synth_page(const SynthConfig& cfg, int cluster, std::uint64_t page_index);

// Writes images/<page_id>.pgm, manifest.csv and synth_config.json under
// out_dir and returns the manifest.
Manifest generate_synth(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                        int threads = 1);

}  // namespace bob
