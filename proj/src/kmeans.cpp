#include "bob/kmeans.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "bob/error.hpp"
#include "bob/rng.hpp"

namespace bob {

void KMeansConfig::validate() const {
  if (K < 1) throw ConfigError("kmeans: K must be >= 1");
  if (max_iters < 1) throw ConfigError("kmeans: max_iters must be >= 1");
  if (!(tol >= 0.0)) throw ConfigError("kmeans: tol must be >= 0");
  if (n_init < 1) throw ConfigError("kmeans: n_init must be >= 1");
}

void to_json(nlohmann::json& j, const KMeansConfig& c) {
  j = {{"K", c.K}, {"max_iters", c.max_iters}, {"tol", c.tol}, {"seed", c.seed}, {"n_init", c.n_init}};
}

void from_json(const nlohmann::json& j, KMeansConfig& c) {
  KMeansConfig def;
  c.K = j.value("K", def.K);
  c.max_iters = j.value("max_iters", def.max_iters);
  c.tol = j.value("tol", def.tol);
  c.seed = j.value("seed", def.seed);
  c.n_init = j.value("n_init", def.n_init);
}

int nearest_centroid(const RowMatrix& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    const double d = (centroids.row(k) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

namespace {

struct Run {
  RowMatrix centroids;
  std::vector<int> assign;
  std::vector<double> trace;
  int iterations = 0;
};

// k-means++: first seed by weight, then by weight * D^2. When every
// remaining point coincides with a seed (duplicates) fall back to a uniform
// pick among the unused points so seeds stay distinct by index.
RowMatrix seed_plus_plus(const RowMatrix& x, std::span<const double> w, int K, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  RowMatrix c(K, x.cols());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto pick = [&](const std::vector<double>& score) -> Eigen::Index {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!used[static_cast<std::size_t>(i)]) total += score[static_cast<std::size_t>(i)];
    if (total > 0.0) {
      const double r = unit(rng) * total;
      double acc = 0.0;
      Eigen::Index last = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto s = score[static_cast<std::size_t>(i)];
        if (used[static_cast<std::size_t>(i)] || s <= 0.0) continue;
        acc += s;
        last = i;
        if (r < acc) return i;
      }
      return last;
    }
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!used[static_cast<std::size_t>(i)] && w[static_cast<std::size_t>(i)] > 0.0) free.push_back(i);
    std::uniform_int_distribution<std::size_t> u(0, free.size() - 1);
    return free[u(rng)];
  };

  std::vector<double> score(w.begin(), w.end());
  for (int k = 0; k < K; ++k) {
    const Eigen::Index i = pick(score);
    used[static_cast<std::size_t>(i)] = 1;
    c.row(k) = x.row(i);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto js = static_cast<std::size_t>(j);
      d2[js] = std::min(d2[js], (x.row(j) - c.row(k)).squaredNorm());
      score[js] = w[js] * d2[js];
    }
  }
  return c;
}

void recompute_centroid(const RowMatrix& x, std::span<const double> w, const std::vector<int>& assign,
                        int k, RowMatrix& c) {
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(x.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto is = static_cast<std::size_t>(i);
    if (assign[is] != k || w[is] <= 0.0) continue;
    sum += w[is] * x.row(i);
    total += w[is];
  }
  if (total > 0.0) c.row(k) = sum / total;
}

double inertia_of(const RowMatrix& x, std::span<const double> w, const std::vector<int>& assign,
                  const RowMatrix& c) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto is = static_cast<std::size_t>(i);
    s += w[is] * (x.row(i) - c.row(assign[is])).squaredNorm();
  }
  return s;
}

Run lloyd(const RowMatrix& x, std::span<const double> w, const KMeansConfig& cfg, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  const int K = cfg.K;
  Run run;
  run.centroids = seed_plus_plus(x, w, K, rng);
  run.assign.assign(static_cast<std::size_t>(n), -1);

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = nearest_centroid(run.centroids, x.row(i));
      if (a != run.assign[static_cast<std::size_t>(i)]) {
        run.assign[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }

    std::vector<double> mass(static_cast<std::size_t>(K), 0.0);
    std::vector<int> count(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto is = static_cast<std::size_t>(i);
      if (w[is] <= 0.0) continue;
      mass[static_cast<std::size_t>(run.assign[is])] += w[is];
      ++count[static_cast<std::size_t>(run.assign[is])];
    }
    for (int k = 0; k < K; ++k)
      if (mass[static_cast<std::size_t>(k)] > 0.0) recompute_centroid(x, w, run.assign, k, run.centroids);

    // Empty-cluster repair: the point farthest from its centroid, taken from
    // a cluster that keeps at least one member, founds the empty cluster.
    for (int k = 0; k < K; ++k) {
      if (mass[static_cast<std::size_t>(k)] > 0.0) continue;
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto is = static_cast<std::size_t>(i);
        if (w[is] <= 0.0 || count[static_cast<std::size_t>(run.assign[is])] < 2) continue;
        const double d = (x.row(i) - run.centroids.row(run.assign[is])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) throw DataError("kmeans: cannot repair empty cluster");
      const auto fs = static_cast<std::size_t>(far);
      const int from = run.assign[fs];
      run.assign[fs] = k;
      --count[static_cast<std::size_t>(from)];
      ++count[static_cast<std::size_t>(k)];
      mass[static_cast<std::size_t>(from)] -= w[fs];
      mass[static_cast<std::size_t>(k)] += w[fs];
      run.centroids.row(k) = x.row(far);
      recompute_centroid(x, w, run.assign, from, run.centroids);
      changed = true;
    }

    run.trace.push_back(inertia_of(x, w, run.assign, run.centroids));
    run.iterations = iter;
    if (!changed) break;
    if (run.trace.size() >= 2) {
      const double prev = run.trace[run.trace.size() - 2];
      const double cur = run.trace.back();
      if (prev - cur <= cfg.tol * prev) break;
    }
  }
  return run;
}

}  // namespace

KMeansResult kmeans_weighted(const RowMatrix& points, std::span<const double> weights,
                             const KMeansConfig& cfg) {
  cfg.validate();
  if (static_cast<Eigen::Index>(weights.size()) != points.rows())
    throw DataError("kmeans: weight count does not match point count");
  std::size_t positive = 0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw DataError("kmeans: weights must be finite and >= 0");
    if (w > 0.0) ++positive;
  }
  if (positive < static_cast<std::size_t>(cfg.K))
    throw DataError("kmeans: " + std::to_string(positive) + " points for K=" + std::to_string(cfg.K));
  if (!points.allFinite()) throw DataError("kmeans: non-finite point coordinates");

  KMeansResult best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < cfg.n_init; ++r) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "kmeans-restart", static_cast<std::uint64_t>(r)));
    Run run = lloyd(points, weights, cfg, rng);
    if (run.trace.back() < best_inertia) {
      best_inertia = run.trace.back();
      best.centroids = std::move(run.centroids);
      best.assignments = std::move(run.assign);
      best.inertia_trace = std::move(run.trace);
      best.iterations = run.iterations;
      best.restart = r;
    }
  }

  best.inertia = best_inertia;
  best.cluster_weight.assign(static_cast<std::size_t>(cfg.K), 0.0);
  double total = 0.0, dist = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto is = static_cast<std::size_t>(i);
    const int a = best.assignments[is];
    best.cluster_weight[static_cast<std::size_t>(a)] += weights[is];
    total += weights[is];
    dist += weights[is] * (points.row(i) - best.centroids.row(a)).norm();
  }
  best.quant_error = dist / total;
  return best;
}

KMeansResult kmeans(const RowMatrix& points, const KMeansConfig& cfg) {
  const std::vector<double> ones(static_cast<std::size_t>(points.rows()), 1.0);
  return kmeans_weighted(points, ones, cfg);
}

}  // namespace bob
