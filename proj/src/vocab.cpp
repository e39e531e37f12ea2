#include "bob/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"

namespace bob {

namespace {
constexpr std::uint32_t kVocabVersion = 1;
}

void BobVocabulary::validate() const {
  const auto k = static_cast<std::size_t>(K());
  if (k == 0) throw DataError("vocabulary '" + page_id + "': K must be >= 1");
  if (masses.size() != k || populations.size() != k)
    throw DataError("vocabulary '" + page_id + "': mass/population count differs from K");
  if (!prototypes.allFinite()) throw DataError("vocabulary '" + page_id + "': non-finite prototype");
  const std::uint64_t pop = std::accumulate(populations.begin(), populations.end(), std::uint64_t{0});
  if (pop != n_components)
    throw DataError("vocabulary '" + page_id + "': populations do not sum to n_components");
  const double mass = std::accumulate(masses.begin(), masses.end(), 0.0);
  if (std::abs(mass - 1.0) > 1e-9) throw DataError("vocabulary '" + page_id + "': masses do not sum to 1");
}

RowMatrix embeddings_matrix(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) return {};
  RowMatrix m(static_cast<Eigen::Index>(embeddings.size()),
              static_cast<Eigen::Index>(embeddings.front().vector.size()));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& v = embeddings[i].vector;
    if (static_cast<Eigen::Index>(v.size()) != m.cols())
      throw DataError("embeddings of differing dimension on page '" + embeddings[i].page_id + "'");
    for (std::size_t j = 0; j < v.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  return m;
}

BobVocabulary build_vocab(const std::string& page_id, const RowMatrix& points,
                          const KMeansConfig& cfg) {
  cfg.validate();
  if (points.rows() < cfg.K)
    throw DataError("page '" + page_id + "': " + std::to_string(points.rows()) +
                    " embeddings, fewer than K=" + std::to_string(cfg.K));
  const KMeansResult km = kmeans(points, cfg);

  const auto K = static_cast<std::size_t>(cfg.K);
  std::vector<std::uint32_t> pop(K, 0);
  std::vector<std::size_t> first(K, points.rows());
  for (std::size_t i = 0; i < km.assignments.size(); ++i) {
    const auto a = static_cast<std::size_t>(km.assignments[i]);
    ++pop[a];
    first[a] = std::min(first[a], i);
  }
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pop[a] != pop[b]) return pop[a] > pop[b];
    return first[a] < first[b];
  });

  BobVocabulary v;
  v.page_id = page_id;
  v.n_components = static_cast<std::uint32_t>(points.rows());
  v.prototypes.resize(cfg.K, points.cols());
  for (std::size_t r = 0; r < K; ++r) {
    v.prototypes.row(static_cast<Eigen::Index>(r)) = km.centroids.row(static_cast<Eigen::Index>(order[r]));
    v.populations.push_back(pop[order[r]]);
    v.masses.push_back(static_cast<double>(pop[order[r]]) / static_cast<double>(v.n_components));
  }
  v.quant_error = km.quant_error;
  return v;
}

BobVocabulary build_vocab(std::span<const Embedding> embeddings, const KMeansConfig& cfg) {
  if (embeddings.empty()) throw DataError("build_vocab: no embeddings");
  return build_vocab(embeddings.front().page_id, embeddings_matrix(embeddings), cfg);
}

std::vector<std::uint8_t> encode_vocab(const BobVocabulary& v) {
  io::Writer w;
  w.magic("BOBV");
  w.u32(kVocabVersion);
  w.json_header({{"page_id", v.page_id},
                 {"K", v.K()},
                 {"d", v.d()},
                 {"n_components", v.n_components},
                 {"quant_error", v.quant_error}});
  for (Eigen::Index r = 0; r < v.prototypes.rows(); ++r)
    for (Eigen::Index c = 0; c < v.prototypes.cols(); ++c) w.f32(static_cast<float>(v.prototypes(r, c)));
  w.f64s(v.masses);
  for (auto p : v.populations) w.u32(p);
  return w.buffer();
}

void save_vocabs(const std::filesystem::path& path, std::span<const BobVocabulary> vocabs) {
  io::Writer w;
  for (const auto& v : vocabs) w.bytes(encode_vocab(v));
  w.save(path);
}

std::vector<BobVocabulary> load_vocabs(const std::filesystem::path& path) {
  auto r = io::Reader::open(path);
  std::vector<BobVocabulary> out;
  while (!r.at_end()) {
    r.expect_magic("BOBV");
    const auto version = r.u32();
    if (version != kVocabVersion)
      throw DataError(path.string() + ": unsupported vocabulary version " + std::to_string(version));
    const auto h = r.json_header();
    BobVocabulary v;
    v.page_id = h.at("page_id").get<std::string>();
    const int K = h.at("K").get<int>();
    const int d = h.at("d").get<int>();
    if (K < 1 || d < 1) throw DataError(path.string() + ": bad vocabulary shape");
    v.n_components = h.at("n_components").get<std::uint32_t>();
    v.quant_error = h.value("quant_error", 0.0);
    const auto rows = r.f32s(static_cast<std::size_t>(K) * static_cast<std::size_t>(d));
    v.prototypes.resize(K, d);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < d; ++j) v.prototypes(i, j) = rows[static_cast<std::size_t>(i * d + j)];
    v.masses = r.f64s(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) v.populations.push_back(r.u32());
    v.validate();
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace bob
