#pragma once

// Set-to-set distances between bags of prototypes: Chamfer, assignment
// (Hungarian) and exact mass-weighted optimal transport, plus the
// distance-matrix artifact shared by every retrieval method.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bob/kmeans.hpp"
#include "bob/vocab.hpp"

namespace bob {

// C[a, b] = |A_a - B_b|_2.
RowMatrix cost_matrix(const RowMatrix& A, const RowMatrix& B);

// 1/2 (mean_a min_b C + mean_b min_a C). Masses are ignored.
double chamfer(const RowMatrix& A, const RowMatrix& B);
double chamfer(const BobVocabulary& a, const BobVocabulary& b);

struct Assignment {
  double cost = 0.0;              // sum of the chosen entries
  std::vector<int> row_to_col;    // -1 for rows left unmatched (rows > cols)
};

// Minimum-cost assignment of every row (rows <= cols) or every column
// (rows > cols). O(n^2 m) shortest augmenting paths with potentials.
Assignment solve_assignment(const RowMatrix& cost);

struct HungarianResult {
  double distance = 0.0;  // optimal cost / min(K_I, K_J)
  std::vector<int> permutation;
};

HungarianResult hungarian(const RowMatrix& A, const RowMatrix& B, bool allow_rectangular = false);
HungarianResult hungarian(const BobVocabulary& a, const BobVocabulary& b,
                          bool allow_rectangular = false);

struct TransportPlan {
  RowMatrix T;
  std::vector<double> row_marginals;
  std::vector<double> col_marginals;
};

struct EmdResult {
  double distance = 0.0;  // <T, C>
  TransportPlan plan;
  int pivots = 0;
};

// Exact transportation problem by the transportation simplex (MODI). Both
// mass vectors must be non-negative with sums within 1e-6 of 1; they are
// renormalized. Zero-mass rows and columns are dropped before solving.
EmdResult solve_transport(const RowMatrix& cost, std::span<const double> supply,
                          std::span<const double> demand);
EmdResult emd(const RowMatrix& A, std::span<const double> pa, const RowMatrix& B,
              std::span<const double> pb);
EmdResult emd(const BobVocabulary& a, const BobVocabulary& b);

// W1 between the uniform empirical measures on two point sets.
double w1_uniform(const RowMatrix& A, const RowMatrix& B);

struct Prop1Result {
  double w1_components = 0.0;
  double w1_vocab = 0.0;
  double lhs = 0.0;    // |w1_components - w1_vocab|
  double bound = 0.0;  // eps_I + eps_J
  bool holds = false;
};

// Checks |W1(P_I, P_J) - W1(P~_I, P~_J)| <= eps_I + eps_J (+1e-6) for
// vocabularies built from exactly these embeddings.
Prop1Result prop1_check(const RowMatrix& emb_I, const RowMatrix& emb_J, const BobVocabulary& vocab_I,
                        const BobVocabulary& vocab_J);

enum class Method : std::uint8_t {
  kChamfer = 1,
  kHungarian = 2,
  kOt = 3,
  kBowL2 = 4,
  kBowCosine = 5,
  kBowChi2 = 6,
  kBowHellinger = 7,
  kMeanPool = 8,
  kMaxPool = 9,
};

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool is_bob_method(Method m);
bool is_bow_method(Method m);

// N x N, row-major, float as stored on disk. Diagonal is 0.
struct DistanceMatrix {
  Method method = Method::kChamfer;
  std::vector<std::string> page_ids;
  std::vector<float> values;

  std::size_t size() const { return page_ids.size(); }
  float at(std::size_t i, std::size_t j) const { return values[i * page_ids.size() + j]; }
  float& at(std::size_t i, std::size_t j) { return values[i * page_ids.size() + j]; }
  std::size_t index_of(const std::string& page_id) const;
};

// Evaluates f(i, j) for i < j and mirrors it.
DistanceMatrix pairwise_matrix(std::vector<std::string> page_ids, Method method,
                               const std::function<double(std::size_t, std::size_t)>& f,
                               int threads = 1);
DistanceMatrix vocab_distance_matrix(std::span<const BobVocabulary> vocabs, Method method,
                                     int threads = 1, bool allow_rectangular = false);
double vocab_distance(const BobVocabulary& a, const BobVocabulary& b, Method method,
                      bool allow_rectangular = false);

std::vector<std::uint8_t> encode_distance_matrix(const DistanceMatrix& m);
DistanceMatrix decode_distance_matrix(std::vector<std::uint8_t> bytes, const std::string& context);
void save_distance_matrix(const std::filesystem::path& path, const DistanceMatrix& m);
DistanceMatrix load_distance_matrix(const std::filesystem::path& path);

}  // namespace bob
