#pragma once

// Shared-codebook baselines: a global k-means codebook, tf-idf histograms,
// histogram distances, and mean/max pooling of embeddings.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bob/kmeans.hpp"
#include "bob/setdist.hpp"
#include "bob/vocab.hpp"

namespace bob {

enum class CodebookSource { kCentroids, kRawPatches };

std::string to_string(CodebookSource s);
CodebookSource codebook_source_from_string(const std::string& s);

struct GlobalCodebook {
  RowMatrix codewords;  // K_g x d
  CodebookSource source = CodebookSource::kCentroids;
  std::uint64_t seed = 0;
  std::vector<double> idf;  // empty until set_idf
  int K_g() const { return static_cast<int>(codewords.rows()); }
};

// Weighted k-means over all prototypes, weights = populations.
GlobalCodebook fit_codebook_centroids(std::span<const BobVocabulary> vocabs, int K_g,
                                      std::uint64_t seed, const KMeansConfig& base = {});
// Unweighted k-means over every component embedding of every page.
GlobalCodebook fit_codebook_raw(std::span<const RowMatrix> page_embeddings, int K_g,
                                std::uint64_t seed, const KMeansConfig& base = {});

// tf[r] = (1/n_I) sum_a m_a [nn(mu_a) = r].
std::vector<double> tf_centroids(const BobVocabulary& v, const RowMatrix& codewords);
// Each embedding votes 1/n_I for its nearest codeword.
std::vector<double> tf_raw(const RowMatrix& embeddings, const RowMatrix& codewords);

// idf[r] = ln((N + 1) / (df_r + 1)) + 1, df_r = #{pages with tf_r > 0}.
std::vector<double> idf(std::span<const std::vector<double>> tfs);

struct BowHistogram {
  std::string page_id;
  std::vector<double> tf;
  std::vector<double> weighted;  // tf * idf, l2-normalized
  bool empty = false;            // no codeword hit; weighted stays all-zero
};

BowHistogram histogram(const std::string& page_id, std::vector<double> tf,
                       std::span<const double> idf);

enum class HistDistance { kL2, kCosine, kChi2, kHellinger };

double hist_distance(std::span<const double> h1, std::span<const double> h2, HistDistance kind);
double cosine_distance(std::span<const double> a, std::span<const double> b);

enum class PoolKind { kMean, kMax };
std::vector<double> pool(const RowMatrix& embeddings, PoolKind kind);

DistanceMatrix histogram_distance_matrix(std::span<const BowHistogram> hists, Method method,
                                         int threads = 1);
// meanpool: cosine; maxpool: L2.
DistanceMatrix pooled_distance_matrix(std::span<const std::string> page_ids,
                                      std::span<const std::vector<double>> pooled, Method method,
                                      int threads = 1);

void save_codebook(const std::filesystem::path& path, const GlobalCodebook& cb);
GlobalCodebook load_codebook(const std::filesystem::path& path);
void save_histograms(const std::filesystem::path& path, std::span<const BowHistogram> hists);
std::vector<BowHistogram> load_histograms(const std::filesystem::path& path);

}  // namespace bob
