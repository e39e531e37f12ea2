#pragma once

// Per-page bag of prototypes: k-means over one page's component embeddings.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bob/encoder.hpp"
#include "bob/kmeans.hpp"

namespace bob {

struct BobVocabulary {
  std::string page_id;
  RowMatrix prototypes;  // K x d
  std::vector<double> masses;
  std::vector<std::uint32_t> populations;
  std::uint32_t n_components = 0;
  double quant_error = 0.0;  // mean |z - mu_a(z)| over the page

  int K() const { return static_cast<int>(prototypes.rows()); }
  int d() const { return static_cast<int>(prototypes.cols()); }
  // Throws DataError when the mass/population invariants do not hold.
  void validate() const;
};

RowMatrix embeddings_matrix(std::span<const Embedding> embeddings);

// Clusters are ordered by descending population, ties by the index of the
// first embedding assigned to them.
BobVocabulary build_vocab(const std::string& page_id, const RowMatrix& points,
                          const KMeansConfig& cfg);
BobVocabulary build_vocab(std::span<const Embedding> embeddings, const KMeansConfig& cfg);

std::vector<std::uint8_t> encode_vocab(const BobVocabulary& v);
// A vocabulary set file is a plain concatenation of BOBV records.
void save_vocabs(const std::filesystem::path& path, std::span<const BobVocabulary> vocabs);
std::vector<BobVocabulary> load_vocabs(const std::filesystem::path& path);

}  // namespace bob
