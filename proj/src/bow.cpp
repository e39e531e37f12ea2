#include "bob/bow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"

namespace bob {

std::string to_string(CodebookSource s) {
  return s == CodebookSource::kCentroids ? "centroids" : "raw";
}

CodebookSource codebook_source_from_string(const std::string& s) {
  if (s == "centroids") return CodebookSource::kCentroids;
  if (s == "raw" || s == "raw_patches") return CodebookSource::kRawPatches;
  throw ConfigError("unknown codebook source '" + s + "' (expected centroids or raw)");
}

GlobalCodebook fit_codebook_centroids(std::span<const BobVocabulary> vocabs, int K_g,
                                      std::uint64_t seed, const KMeansConfig& base) {
  if (vocabs.empty()) throw DataError("codebook: no vocabularies");
  Eigen::Index rows = 0;
  for (const auto& v : vocabs) rows += v.prototypes.rows();
  RowMatrix pooled(rows, vocabs.front().prototypes.cols());
  std::vector<double> weights;
  Eigen::Index r = 0;
  for (const auto& v : vocabs) {
    if (v.prototypes.cols() != pooled.cols()) throw DataError("codebook: prototypes of differing dimension");
    pooled.middleRows(r, v.prototypes.rows()) = v.prototypes;
    r += v.prototypes.rows();
    for (auto p : v.populations) weights.push_back(static_cast<double>(p));
  }
  KMeansConfig cfg = base;
  cfg.K = K_g;
  cfg.seed = seed;
  GlobalCodebook cb;
  cb.codewords = kmeans_weighted(pooled, weights, cfg).centroids;
  cb.source = CodebookSource::kCentroids;
  cb.seed = seed;
  return cb;
}

GlobalCodebook fit_codebook_raw(std::span<const RowMatrix> page_embeddings, int K_g,
                                std::uint64_t seed, const KMeansConfig& base) {
  if (page_embeddings.empty()) throw DataError("codebook: no embeddings");
  Eigen::Index rows = 0;
  for (const auto& e : page_embeddings) rows += e.rows();
  RowMatrix pooled(rows, page_embeddings.front().cols());
  Eigen::Index r = 0;
  for (const auto& e : page_embeddings) {
    if (e.cols() != pooled.cols()) throw DataError("codebook: embeddings of differing dimension");
    pooled.middleRows(r, e.rows()) = e;
    r += e.rows();
  }
  KMeansConfig cfg = base;
  cfg.K = K_g;
  cfg.seed = seed;
  GlobalCodebook cb;
  cb.codewords = kmeans(pooled, cfg).centroids;
  cb.source = CodebookSource::kRawPatches;
  cb.seed = seed;
  return cb;
}

std::vector<double> tf_centroids(const BobVocabulary& v, const RowMatrix& codewords) {
  if (v.prototypes.cols() != codewords.cols()) throw DataError("tf: dimension mismatch");
  std::vector<double> tf(static_cast<std::size_t>(codewords.rows()), 0.0);
  const double n = static_cast<double>(v.n_components);
  for (Eigen::Index a = 0; a < v.prototypes.rows(); ++a) {
    const int r = nearest_centroid(codewords, v.prototypes.row(a));
    tf[static_cast<std::size_t>(r)] += static_cast<double>(v.populations[static_cast<std::size_t>(a)]) / n;
  }
  return tf;
}

std::vector<double> tf_raw(const RowMatrix& embeddings, const RowMatrix& codewords) {
  if (embeddings.rows() == 0) throw DataError("tf: page without embeddings");
  if (embeddings.cols() != codewords.cols()) throw DataError("tf: dimension mismatch");
  std::vector<double> tf(static_cast<std::size_t>(codewords.rows()), 0.0);
  const double n = static_cast<double>(embeddings.rows());
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
    tf[static_cast<std::size_t>(nearest_centroid(codewords, embeddings.row(i)))] += 1.0 / n;
  return tf;
}

std::vector<double> idf(std::span<const std::vector<double>> tfs) {
  if (tfs.empty()) throw DataError("idf: no pages");
  const std::size_t K = tfs.front().size();
  std::vector<double> df(K, 0.0);
  for (const auto& tf : tfs) {
    if (tf.size() != K) throw DataError("idf: tf vectors of differing length");
    for (std::size_t r = 0; r < K; ++r)
      if (tf[r] > 0.0) df[r] += 1.0;
  }
  const double N = static_cast<double>(tfs.size());
  std::vector<double> out(K);
  for (std::size_t r = 0; r < K; ++r) out[r] = std::log((N + 1.0) / (df[r] + 1.0)) + 1.0;
  return out;
}

BowHistogram histogram(const std::string& page_id, std::vector<double> tf,
                       std::span<const double> idf_values) {
  if (tf.size() != idf_values.size()) throw DataError("histogram: tf and idf lengths differ");
  BowHistogram h;
  h.page_id = page_id;
  h.weighted.resize(tf.size());
  double norm = 0.0;
  for (std::size_t r = 0; r < tf.size(); ++r) {
    h.weighted[r] = tf[r] * idf_values[r];
    norm += h.weighted[r] * h.weighted[r];
  }
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : h.weighted) x /= norm;
  } else {
    h.empty = true;
  }
  h.tf = std::move(tf);
  return h;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  // A zero vector has no direction; treat it as unrelated to everything.
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double hist_distance(std::span<const double> h1, std::span<const double> h2, HistDistance kind) {
  if (h1.size() != h2.size()) throw DataError("hist_distance: histograms of differing length");
  switch (kind) {
    case HistDistance::kL2: {
      double s = 0.0;
      for (std::size_t i = 0; i < h1.size(); ++i) s += (h1[i] - h2[i]) * (h1[i] - h2[i]);
      return std::sqrt(s);
    }
    case HistDistance::kCosine:
      return cosine_distance(h1, h2);
    case HistDistance::kChi2: {
      double s = 0.0;
      for (std::size_t i = 0; i < h1.size(); ++i) {
        if (h1[i] < 0.0 || h2[i] < 0.0) throw DataError("chi2: negative histogram entry");
        const double den = h1[i] + h2[i];
        if (den > 0.0) s += (h1[i] - h2[i]) * (h1[i] - h2[i]) / den;
      }
      return 0.5 * s;
    }
    case HistDistance::kHellinger: {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < h1.size(); ++i) {
        if (h1[i] < 0.0 || h2[i] < 0.0) throw DataError("hellinger: negative histogram entry");
        s1 += h1[i];
        s2 += h2[i];
      }
      if (s1 == 0.0 || s2 == 0.0) throw DataError("hellinger: all-zero histogram");
      double s = 0.0;
      for (std::size_t i = 0; i < h1.size(); ++i) {
        const double d = std::sqrt(h1[i] / s1) - std::sqrt(h2[i] / s2);
        s += d * d;
      }
      return std::sqrt(s) / std::sqrt(2.0);
    }
  }
  return 0.0;
}

std::vector<double> pool(const RowMatrix& embeddings, PoolKind kind) {
  if (embeddings.rows() == 0) throw DataError("pool: no embeddings");
  const Eigen::RowVectorXd v =
      kind == PoolKind::kMean ? Eigen::RowVectorXd(embeddings.colwise().mean())
                              : Eigen::RowVectorXd(embeddings.colwise().maxCoeff());
  return {v.data(), v.data() + v.size()};
}

namespace {

HistDistance hist_kind(Method m) {
  switch (m) {
    case Method::kBowL2: return HistDistance::kL2;
    case Method::kBowCosine: return HistDistance::kCosine;
    case Method::kBowChi2: return HistDistance::kChi2;
    case Method::kBowHellinger: return HistDistance::kHellinger;
    default: throw ConfigError("method '" + to_string(m) + "' is not a histogram distance");
  }
}

constexpr std::uint32_t kCodebookVersion = 1;
constexpr std::uint32_t kHistVersion = 1;

}  // namespace

DistanceMatrix histogram_distance_matrix(std::span<const BowHistogram> hists, Method method,
                                         int threads) {
  const HistDistance kind = hist_kind(method);
  std::vector<std::string> ids;
  for (const auto& h : hists) ids.push_back(h.page_id);
  return pairwise_matrix(std::move(ids), method, [&](std::size_t i, std::size_t j) {
    return hist_distance(hists[i].weighted, hists[j].weighted, kind);
  }, threads);
}

DistanceMatrix pooled_distance_matrix(std::span<const std::string> page_ids,
                                      std::span<const std::vector<double>> pooled, Method method,
                                      int threads) {
  if (method != Method::kMeanPool && method != Method::kMaxPool)
    throw ConfigError("method '" + to_string(method) + "' is not a pooling baseline");
  const HistDistance kind = method == Method::kMeanPool ? HistDistance::kCosine : HistDistance::kL2;
  return pairwise_matrix({page_ids.begin(), page_ids.end()}, method,
                         [&](std::size_t i, std::size_t j) {
                           return hist_distance(pooled[i], pooled[j], kind);
                         },
                         threads);
}

void save_codebook(const std::filesystem::path& path, const GlobalCodebook& cb) {
  io::Writer w;
  w.magic("BOBC");
  w.u32(kCodebookVersion);
  w.json_header({{"K_g", cb.K_g()},
                 {"d", cb.codewords.cols()},
                 {"source", to_string(cb.source)},
                 {"seed", cb.seed},
                 {"has_idf", !cb.idf.empty()}});
  for (Eigen::Index r = 0; r < cb.codewords.rows(); ++r)
    for (Eigen::Index c = 0; c < cb.codewords.cols(); ++c) w.f32(static_cast<float>(cb.codewords(r, c)));
  w.f64s(cb.idf);
  w.save(path);
}

GlobalCodebook load_codebook(const std::filesystem::path& path) {
  auto r = io::Reader::open(path);
  r.expect_magic("BOBC");
  if (const auto v = r.u32(); v != kCodebookVersion)
    throw DataError(path.string() + ": unsupported codebook version " + std::to_string(v));
  const auto h = r.json_header();
  GlobalCodebook cb;
  const int K = h.at("K_g").get<int>();
  const int d = h.at("d").get<int>();
  if (K < 1 || d < 1) throw DataError(path.string() + ": bad codebook shape");
  cb.source = codebook_source_from_string(h.at("source").get<std::string>());
  cb.seed = h.at("seed").get<std::uint64_t>();
  const auto vals = r.f32s(static_cast<std::size_t>(K) * static_cast<std::size_t>(d));
  cb.codewords.resize(K, d);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < d; ++j) cb.codewords(i, j) = vals[static_cast<std::size_t>(i * d + j)];
  if (h.value("has_idf", false)) cb.idf = r.f64s(static_cast<std::size_t>(K));
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after codebook");
  return cb;
}

void save_histograms(const std::filesystem::path& path, std::span<const BowHistogram> hists) {
  io::Writer w;
  w.magic("BOBH");
  w.u32(kHistVersion);
  const std::size_t K = hists.empty() ? 0 : hists.front().tf.size();
  w.json_header({{"K_g", K}, {"N", hists.size()}});
  for (const auto& h : hists) w.str(h.page_id);
  for (const auto& h : hists) {
    for (double x : h.tf) w.f64(x);
    for (double x : h.weighted) w.f32(static_cast<float>(x));
  }
  w.save(path);
}

std::vector<BowHistogram> load_histograms(const std::filesystem::path& path) {
  auto r = io::Reader::open(path);
  r.expect_magic("BOBH");
  if (const auto v = r.u32(); v != kHistVersion)
    throw DataError(path.string() + ": unsupported histogram version " + std::to_string(v));
  const auto h = r.json_header();
  const auto K = h.at("K_g").get<std::size_t>();
  const auto N = h.at("N").get<std::size_t>();
  std::vector<BowHistogram> out(N);
  for (auto& b : out) b.page_id = r.str();
  for (auto& b : out) {
    b.tf = r.f64s(K);
    const auto w = r.f32s(K);
    b.weighted.assign(w.begin(), w.end());
    b.empty = std::all_of(b.weighted.begin(), b.weighted.end(), [](double x) { return x == 0.0; });
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after histograms");
  return out;
}

}  // namespace bob
