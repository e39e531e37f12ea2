#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "bob/bow.hpp"
#include "bob/error.hpp"
#include "support.hpp"

using namespace bob;

namespace {

RowMatrix column(std::initializer_list<double> xs) {
  RowMatrix m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

std::vector<double> l2_normalized(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

double weighted_inertia(const RowMatrix& P, const std::vector<double>& w, const RowMatrix& C) {
  double s = 0;
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    double best = 1e300;
    for (Eigen::Index k = 0; k < C.rows(); ++k) best = std::min(best, (P.row(i) - C.row(k)).squaredNorm());
    s += w[i] * best;
  }
  return s;
}

std::vector<BobVocabulary> random_vocabs(std::mt19937_64& rng, int n, int K, int d) {
  std::vector<BobVocabulary> vs;
  std::uniform_int_distribution<int> pop(1, 9);
  for (int i = 0; i < n; ++i) {
    std::vector<std::uint32_t> pops(K);
    for (auto& p : pops) p = static_cast<std::uint32_t>(pop(rng));
    std::sort(pops.rbegin(), pops.rend());
    vs.push_back(testing::vocab_from("v" + std::to_string(i), testing::random_points(rng, K, d), pops));
  }
  return vs;
}

}  // namespace

TEST_CASE("tf-idf: two-page toy matches scalar recomputation") {
  const RowMatrix codewords = column({0.0, 10.0, 20.0, 30.0});
  const RowMatrix A = column({0.1, 0.2, 9.9});
  const RowMatrix B = column({10.1, 10.2, 19.8, 0.4});
  std::vector<std::vector<double>> tfs{tf_raw(A, codewords), tf_raw(B, codewords)};
  const std::vector<double> tfA{2.0 / 3, 1.0 / 3, 0, 0}, tfB{0.25, 0.5, 0.25, 0};
  for (int r = 0; r < 4; ++r) {
    CHECK(std::abs(tfs[0][r] - tfA[r]) <= 1e-12);
    CHECK(std::abs(tfs[1][r] - tfB[r]) <= 1e-12);
  }
  auto w = idf(tfs);
  // df = 2, 2, 1, 0 over N = 2 pages.
  const std::vector<double> expect{1.0, 1.0, 1.0 + std::log(3.0 / 2.0), 1.0 + std::log(3.0)};
  for (int r = 0; r < 4; ++r) CHECK(std::abs(w[r] - expect[r]) <= 1e-12);

  auto hA = histogram("A", tfs[0], w), hB = histogram("B", tfs[1], w);
  auto eA = l2_normalized({tfA[0] * expect[0], tfA[1] * expect[1], 0, 0});
  auto eB = l2_normalized({tfB[0] * expect[0], tfB[1] * expect[1], tfB[2] * expect[2], 0});
  for (int r = 0; r < 4; ++r) {
    CHECK(std::abs(hA.weighted[r] - eA[r]) <= 1e-12);
    CHECK(std::abs(hB.weighted[r] - eB[r]) <= 1e-12);
  }
  CHECK_FALSE(hA.empty);
}

TEST_CASE("idf: closed forms") {
  std::vector<std::vector<double>> tfs{{0.5, 0.5, 0}, {0.2, 0.8, 0}, {1.0, 0, 0}};
  auto w = idf(tfs);
  CHECK(w[0] == 1.0);                                         // every page
  CHECK(std::abs(w[1] - (1.0 + std::log(4.0 / 3.0))) <= 1e-15);  // N=3, df=2
  CHECK(std::abs(w[2] - (1.0 + std::log(4.0))) <= 1e-15);     // never used
  std::vector<std::vector<double>> one{{1.0, 0, 0}, {0, 1.0, 0}, {0, 1.0, 0}};
  CHECK(std::abs(idf(one)[0] - (1.0 + std::log(2.0))) <= 1e-15);  // N=3, df=1
}

TEST_CASE("tf: centroid votes carry populations") {
  const RowMatrix codewords = column({0.0, 5.0, 10.0});
  auto single = testing::vocab_from("s", column({4.0}), {37});
  auto tf = tf_centroids(single, codewords);
  CHECK(tf == std::vector<double>{0.0, 1.0, 0.0});

  auto two = testing::vocab_from("t", column({0.5, 9.0}), {60, 40});
  tf = tf_centroids(two, codewords);
  CHECK(tf[0] == doctest::Approx(0.6));
  CHECK(tf[1] == 0.0);
  CHECK(tf[2] == doctest::Approx(0.4));

  // Equidistant from codewords 0 and 1: lowest index wins.
  auto tie = testing::vocab_from("tie", column({2.5}), {1});
  CHECK(tf_centroids(tie, codewords)[0] == 1.0);
}

TEST_CASE("tf: sums to one in both modes, idf at least one") {
  std::mt19937_64 rng(1);
  auto vs = random_vocabs(rng, 12, 6, 4);
  auto codewords = testing::random_points(rng, 9, 4);
  std::vector<std::vector<double>> tfs;
  for (const auto& v : vs) {
    auto tf = tf_centroids(v, codewords);
    double s = 0;
    for (double x : tf) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
    tfs.push_back(tf);
  }
  for (int i = 0; i < 10; ++i) {
    auto tf = tf_raw(testing::random_points(rng, 30 + i, 4), codewords);
    double s = 0;
    for (double x : tf) s += x;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  for (double x : idf(tfs)) CHECK(x >= 1.0);
}

TEST_CASE("histogram: one-hot, uniform, empty") {
  std::vector<double> ones(4, 1.0);
  auto h = histogram("p", {0, 0, 1, 0}, ones);
  CHECK(h.weighted == std::vector<double>{0, 0, 1, 0});
  auto u = histogram("u", {0.25, 0.25, 0.25, 0.25}, ones);
  for (double x : u.weighted) CHECK(x == doctest::Approx(0.5));
  auto z = histogram("z", {0, 0, 0, 0}, ones);
  CHECK(z.empty);
  for (double x : z.weighted) CHECK(x == 0.0);
}

TEST_CASE("histogram distances: closed forms") {
  std::vector<double> e1{1, 0, 0}, e2{0, 1, 0};
  for (auto k : {HistDistance::kL2, HistDistance::kCosine, HistDistance::kChi2, HistDistance::kHellinger})
    CHECK(std::abs(hist_distance(e1, e1, k)) <= 1e-15);
  CHECK(hist_distance(e1, e2, HistDistance::kCosine) == 1.0);
  CHECK(hist_distance(e1, e2, HistDistance::kL2) == doctest::Approx(std::sqrt(2.0)));
  std::vector<double> p{0.2, 0.8, 0, 0}, q{0, 0, 0.5, 0.5};
  CHECK(hist_distance(p, q, HistDistance::kHellinger) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(hist_distance(p, q, HistDistance::kChi2) == doctest::Approx(1.0));  // 1/2 * sum of masses
  std::vector<double> neg{-0.1, 1.1, 0, 0};
  CHECK_THROWS_AS(hist_distance(neg, p, HistDistance::kChi2), DataError);
  CHECK_THROWS_AS(hist_distance(neg, p, HistDistance::kHellinger), DataError);
  std::vector<double> zero(3, 0.0);
  CHECK(cosine_distance(zero, e1) == 1.0);
}

TEST_CASE("histogram distances: properties on random tf-idf vectors") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> a(12), b(12);
    for (int i = 0; i < 12; ++i) {
      a[i] = u(rng) < 0.3 ? 0.0 : u(rng);
      b[i] = u(rng) < 0.3 ? 0.0 : u(rng);
    }
    a = l2_normalized(a);
    b = l2_normalized(b);
    const double c2 = hist_distance(a, b, HistDistance::kChi2);
    CHECK(c2 >= 0.0);
    CHECK(c2 == hist_distance(b, a, HistDistance::kChi2));
    const double he = hist_distance(a, b, HistDistance::kHellinger);
    CHECK(he >= 0.0);
    CHECK(he <= 1.0 + 1e-15);
    double dot = 0;
    for (int i = 0; i < 12; ++i) dot += a[i] * b[i];
    // 1 - <a,b> and the general formula agree far below float resolution.
    CHECK(std::abs(hist_distance(a, b, HistDistance::kCosine) - (1.0 - dot)) <= 1e-15);
    CHECK(static_cast<float>(hist_distance(a, b, HistDistance::kCosine)) ==
          static_cast<float>(1.0 - dot));
  }
}

TEST_CASE("pool: mean and max") {
  std::mt19937_64 rng(3);
  auto x = testing::random_points(rng, 1, 5);
  auto m = pool(x, PoolKind::kMean), M = pool(x, PoolKind::kMax);
  for (int j = 0; j < 5; ++j) {
    CHECK(m[j] == x(0, j));
    CHECK(M[j] == x(0, j));
  }
  RowMatrix pm(2, 5);
  pm.row(0) = x.row(0);
  pm.row(1) = -x.row(0);
  for (double v : pool(pm, PoolKind::kMean)) CHECK(v == 0.0);

  auto X = testing::random_points(rng, 37, 6);
  auto mean = pool(X, PoolKind::kMean), mx = pool(X, PoolKind::kMax);
  for (int j = 0; j < 6; ++j) {
    double s = 0, best = -1e300;
    for (int i = 0; i < 37; ++i) {
      s += X(i, j);
      best = std::max(best, X(i, j));
    }
    CHECK(mean[j] == doctest::Approx(s / 37).epsilon(1e-14));
    CHECK(mx[j] == best);
  }
  CHECK_THROWS_AS(pool(RowMatrix(0, 3), PoolKind::kMean), DataError);
}

TEST_CASE("codebook: unit populations match plain k-means on the prototypes") {
  std::mt19937_64 rng(4);
  std::vector<BobVocabulary> vs;
  for (int i = 0; i < 6; ++i) vs.push_back(testing::vocab_from("p" + std::to_string(i),
                                                               testing::random_points(rng, 4, 3), {1, 1, 1, 1}));
  auto cb = fit_codebook_centroids(vs, 5, 77);
  RowMatrix pooled(24, 3);
  for (int i = 0; i < 6; ++i) pooled.middleRows(4 * i, 4) = vs[i].prototypes;
  KMeansConfig cfg;
  cfg.K = 5;
  cfg.seed = 77;
  CHECK(cb.codewords == kmeans(pooled, cfg).centroids);
  CHECK(cb.source == CodebookSource::kCentroids);
}

TEST_CASE("codebook: population weights act as replication") {
  std::mt19937_64 rng(5);
  auto vs = random_vocabs(rng, 5, 3, 2);
  auto cb = fit_codebook_centroids(vs, 4, 3);
  RowMatrix pooled(15, 2);
  std::vector<double> w;
  for (int i = 0; i < 5; ++i) {
    pooled.middleRows(3 * i, 3) = vs[i].prototypes;
    for (auto p : vs[i].populations) w.push_back(p);
  }
  int total = 0;
  for (double x : w) total += static_cast<int>(x);
  RowMatrix R(total, 2);
  for (int i = 0, r = 0; i < 15; ++i)
    for (int c = 0; c < static_cast<int>(w[i]); ++c) R.row(r++) = pooled.row(i);
  const double weighted = weighted_inertia(pooled, w, cb.codewords);
  CHECK(weighted == doctest::Approx(weighted_inertia(R, std::vector<double>(total, 1.0), cb.codewords)).epsilon(1e-12));
  // Every codeword is the population-weighted mean of the prototypes it owns.
  for (int k = 0; k < 4; ++k) {
    Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(2);
    double ws = 0;
    for (int i = 0; i < 15; ++i)
      if (nearest_centroid(cb.codewords, pooled.row(i)) == k) {
        s += w[i] * pooled.row(i);
        ws += w[i];
      }
    if (ws > 0) CHECK((cb.codewords.row(k) - s / ws).norm() <= 1e-9);
  }
}

TEST_CASE("codebook: K_g equal to the pool size is exact, too few points fail") {
  std::mt19937_64 rng(6);
  std::vector<RowMatrix> pages{testing::random_points(rng, 4, 3), testing::random_points(rng, 3, 3)};
  auto cb = fit_codebook_raw(pages, 7, 1);
  CHECK(cb.source == CodebookSource::kRawPatches);
  std::vector<double> ones(7, 1.0);
  RowMatrix all(7, 3);
  all << pages[0], pages[1];
  CHECK(weighted_inertia(all, ones, cb.codewords) == 0.0);
  CHECK_THROWS(fit_codebook_raw(pages, 8, 1));
}

TEST_CASE("codebook and histogram files round trip") {
  std::mt19937_64 rng(7);
  GlobalCodebook cb;
  cb.codewords = testing::random_points(rng, 6, 4).cast<float>().cast<double>();
  cb.source = CodebookSource::kRawPatches;
  cb.seed = 1234;
  cb.idf = {1.0, 1.5, 2.0, 1.0, 1.25, 3.0};
  testing::TempDir dir("bow");
  save_codebook(dir.path / "c.bobc", cb);
  auto back = load_codebook(dir.path / "c.bobc");
  CHECK(back.codewords == cb.codewords);
  CHECK(back.source == cb.source);
  CHECK(back.seed == cb.seed);
  CHECK(back.idf == cb.idf);

  std::vector<BowHistogram> hs;
  for (int i = 0; i < 3; ++i) {
    auto tf = tf_raw(testing::random_points(rng, 10, 4), cb.codewords);
    hs.push_back(histogram("h" + std::to_string(i), tf, cb.idf));
  }
  save_histograms(dir.path / "h.bobh", hs);
  auto hb = load_histograms(dir.path / "h.bobh");
  REQUIRE(hb.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(hb[i].page_id == hs[i].page_id);
    CHECK(hb[i].tf == hs[i].tf);
    for (std::size_t r = 0; r < hs[i].weighted.size(); ++r)
      CHECK(hb[i].weighted[r] == static_cast<double>(static_cast<float>(hs[i].weighted[r])));
  }
}

TEST_CASE("distance matrices over histograms and pooled vectors") {
  std::mt19937_64 rng(8);
  auto codewords = testing::random_points(rng, 8, 3);
  std::vector<std::vector<double>> tfs;
  for (int i = 0; i < 5; ++i) tfs.push_back(tf_raw(testing::random_points(rng, 20, 3), codewords));
  auto w = idf(tfs);
  std::vector<BowHistogram> hs;
  for (int i = 0; i < 5; ++i) hs.push_back(histogram("p" + std::to_string(i), tfs[i], w));
  auto m = histogram_distance_matrix(hs, Method::kBowChi2);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      if (i != j)
        CHECK(m.at(i, j) == static_cast<float>(hist_distance(hs[i].weighted, hs[j].weighted, HistDistance::kChi2)));
  CHECK_THROWS(histogram_distance_matrix(hs, Method::kChamfer));

  std::vector<std::string> ids{"a", "b", "c"};
  std::vector<std::vector<double>> pooled{{1, 0}, {0, 2}, {1, 1}};
  auto mp = pooled_distance_matrix(ids, pooled, Method::kMeanPool);
  CHECK(mp.at(0, 1) == 1.0f);
  auto xp = pooled_distance_matrix(ids, pooled, Method::kMaxPool);
  CHECK(xp.at(0, 1) == static_cast<float>(std::sqrt(5.0)));
  CHECK_THROWS_AS(pooled_distance_matrix(ids, pooled, Method::kOt), ConfigError);
}
