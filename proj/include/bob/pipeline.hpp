#pragma once

// Run configuration and the pipeline stages, both in memory and as the
// file-backed commands behind the `bob` executable.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "bob/bow.hpp"
#include "bob/corpus.hpp"
#include "bob/encoder.hpp"
#include "bob/kmeans.hpp"
#include "bob/pagegrid.hpp"
#include "bob/retrieval.hpp"
#include "bob/setdist.hpp"
#include "bob/stores.hpp"
#include "bob/vocab.hpp"

namespace bob {

struct RunConfig {
  ExtractionConfig extraction;
  TrainConfig train;
  EncoderArch arch;
  KMeansConfig kmeans;  // K, restarts, tolerance; seeds are derived per page
  int K_g = 100;
  CodebookSource codebook_source = CodebookSource::kCentroids;
  Method method = Method::kChamfer;
  std::vector<int> ks{1, 5, 10};
  std::size_t M = 30;
  bool allow_rectangular = false;
  std::uint64_t seed = 0;
  int threads = 1;
  SynthConfig synth;
  std::string ablate = "K";  // K | d | sparsity | normalization
  std::filesystem::path manifest;
  std::filesystem::path out_dir = "bob_out";

  void validate() const;
  // FNV-1a of the canonical JSON, recorded in artifact summaries.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// ---- in-memory stages ----

std::vector<PageExtraction> preprocess_pages(const Manifest& manifest, const ExtractionConfig& cfg,
                                             int threads = 1);
std::vector<PageEmbeddings> encode_pages(const EncoderParams& params,
                                         std::span<const PageExtraction> pages);
std::vector<BobVocabulary> build_vocabs(std::span<const PageEmbeddings> pages, const KMeansConfig& base,
                                        std::uint64_t seed, int threads = 1);

struct BowModel {
  GlobalCodebook codebook;
  std::vector<BowHistogram> histograms;
};

BowModel build_bow(std::span<const BobVocabulary> vocabs, std::span<const PageEmbeddings> pages,
                   CodebookSource source, int K_g, std::uint64_t seed, const KMeansConfig& base = {});

DistanceMatrix pooled_matrix(std::span<const PageEmbeddings> pages, Method method, int threads = 1);

// Ranks every labeled query by two-stage retrieval with on-demand OT.
std::vector<RankedList> rerank_all(std::span<const BobVocabulary> vocabs, const DistanceMatrix& bow,
                                   std::size_t M);

// ---- artifact paths inside RunConfig::out_dir ----

struct ArtifactPaths {
  std::filesystem::path dir;
  std::filesystem::path patches() const { return dir / "patches.bobp"; }
  std::filesystem::path encoder() const { return dir / "encoder.bobe"; }
  std::filesystem::path train_log() const { return dir / "train_log.jsonl"; }
  std::filesystem::path embeddings() const { return dir / "embeddings.bobz"; }
  std::filesystem::path vocabs() const { return dir / "vocab.bobv"; }
  std::filesystem::path codebook(CodebookSource s) const;
  std::filesystem::path histograms(CodebookSource s) const;
  std::filesystem::path distances(Method m, CodebookSource s) const;
  std::filesystem::path metrics(Method m, CodebookSource s) const;
};

// ---- commands; each returns 0 and prints a short summary ----

int cmd_preprocess(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_encode(const RunConfig& cfg);
int cmd_vocab(const RunConfig& cfg);
int cmd_codebook(const RunConfig& cfg);
int cmd_dist(const RunConfig& cfg);
int cmd_retrieve(const RunConfig& cfg, const std::string& query, std::size_t top);
int cmd_eval(const RunConfig& cfg);
int cmd_rerank(const RunConfig& cfg);
int cmd_separation(const RunConfig& cfg);
int cmd_synth(const RunConfig& cfg);
int cmd_profile(const RunConfig& cfg);
int cmd_ablate(const RunConfig& cfg);

}  // namespace bob
