#include "bob/setdist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"
#include "bob/parallel.hpp"

namespace bob {

RowMatrix cost_matrix(const RowMatrix& A, const RowMatrix& B) {
  if (A.cols() != B.cols())
    throw DataError("cost matrix: dimension mismatch " + std::to_string(A.cols()) + " vs " +
                    std::to_string(B.cols()));
  RowMatrix C(A.rows(), B.rows());
  for (Eigen::Index a = 0; a < A.rows(); ++a)
    for (Eigen::Index b = 0; b < B.rows(); ++b) C(a, b) = (A.row(a) - B.row(b)).norm();
  return C;
}

double chamfer(const RowMatrix& A, const RowMatrix& B) {
  if (A.rows() == 0 || B.rows() == 0) throw DataError("chamfer: empty set");
  const RowMatrix C = cost_matrix(A, B);
  const double ab = C.rowwise().minCoeff().mean();
  const double ba = C.colwise().minCoeff().mean();
  return 0.5 * (ab + ba);
}

double chamfer(const BobVocabulary& a, const BobVocabulary& b) {
  return chamfer(a.prototypes, b.prototypes);
}

Assignment solve_assignment(const RowMatrix& cost) {
  Assignment out;
  const auto rows = static_cast<int>(cost.rows());
  const auto cols = static_cast<int>(cost.cols());
  if (rows == 0 || cols == 0) return out;
  if (!cost.allFinite()) throw DataError("assignment: non-finite cost");
  if (rows > cols) {
    const Assignment t = solve_assignment(cost.transpose());
    out.cost = t.cost;
    out.row_to_col.assign(static_cast<std::size_t>(rows), -1);
    for (int c = 0; c < cols; ++c) out.row_to_col[static_cast<std::size_t>(t.row_to_col[static_cast<std::size_t>(c)])] = c;
    return out;
  }

  // Shortest augmenting path with row/column potentials, 1-based with a
  // virtual column 0.
  const int n = rows, m = cols;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  std::vector<double> minv(static_cast<std::size_t>(m + 1));
  std::vector<char> used(static_cast<std::size_t>(m + 1));
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[js];
        if (cur < minv[js]) {
          minv[js] = cur;
          way[js] = j0;
        }
        if (minv[js] < delta) {
          delta = minv[js];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (used[js]) {
          u[static_cast<std::size_t>(p[js])] += delta;
          v[js] -= delta;
        } else {
          minv[js] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) out.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  for (int i = 0; i < n; ++i) out.cost += cost(i, out.row_to_col[static_cast<std::size_t>(i)]);
  return out;
}

HungarianResult hungarian(const RowMatrix& A, const RowMatrix& B, bool allow_rectangular) {
  if (A.rows() == 0 || B.rows() == 0) throw DataError("hungarian: empty set");
  if (A.rows() != B.rows() && !allow_rectangular)
    throw DataError("hungarian: unequal K (" + std::to_string(A.rows()) + " vs " +
                    std::to_string(B.rows()) + ") without rectangular assignment enabled");
  const Assignment a = solve_assignment(cost_matrix(A, B));
  HungarianResult r;
  r.distance = a.cost / static_cast<double>(std::min(A.rows(), B.rows()));
  r.permutation = a.row_to_col;
  return r;
}

HungarianResult hungarian(const BobVocabulary& a, const BobVocabulary& b, bool allow_rectangular) {
  return hungarian(a.prototypes, b.prototypes, allow_rectangular);
}

namespace {

std::vector<double> checked_masses(std::span<const double> m, const char* side) {
  double sum = 0.0;
  for (double x : m) {
    if (!std::isfinite(x) || x < 0.0) throw DataError(std::string("emd: invalid ") + side + " mass");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw DataError(std::string("emd: ") + side + " masses sum to " + std::to_string(sum) + ", not 1");
  std::vector<double> out(m.begin(), m.end());
  for (double& x : out) x /= sum;
  return out;
}

struct Cell {
  int i, j;
  double flow;
};

// Transportation simplex on strictly positive supplies/demands summing to
// the same total. The basis is a spanning tree of m + n - 1 cells over the
// bipartite row/column graph (degenerate cells carry zero flow).
std::vector<Cell> transport_simplex(const RowMatrix& C, const std::vector<double>& a,
                                    const std::vector<double>& b, int& pivots) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  std::vector<Cell> basis;
  basis.reserve(static_cast<std::size_t>(m + n - 1));

  // North-west corner start; each step advances exactly one index.
  {
    std::vector<double> ra = a, rb = b;
    int i = 0, j = 0;
    for (;;) {
      const auto is = static_cast<std::size_t>(i), js = static_cast<std::size_t>(j);
      const double x = std::min(ra[is], rb[js]);
      basis.push_back({i, j, x});
      ra[is] -= x;
      rb[js] -= x;
      if (i == m - 1 && j == n - 1) break;
      if (i == m - 1)
        ++j;
      else if (j == n - 1 || ra[is] <= rb[js])
        ++i;
      else
        ++j;
    }
  }

  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  const double opt_tol = 1e-12 * scale;
  const int nodes = m + n;
  std::vector<double> u(static_cast<std::size_t>(m)), v(static_cast<std::size_t>(n));
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(nodes));
  std::vector<int> parent_edge(static_cast<std::size_t>(nodes)), order;
  std::vector<char> seen(static_cast<std::size_t>(nodes));
  int degenerate_run = 0;
  const long max_pivots = 50L * (m + n) * (m + n) + 1000;

  for (;;) {
    // Potentials from the tree: u_i + v_j = C_ij on basic cells, u_0 = 0.
    for (auto& l : adj) l.clear();
    for (int e = 0; e < static_cast<int>(basis.size()); ++e) {
      adj[static_cast<std::size_t>(basis[static_cast<std::size_t>(e)].i)].push_back(e);
      adj[static_cast<std::size_t>(m + basis[static_cast<std::size_t>(e)].j)].push_back(e);
    }
    std::fill(seen.begin(), seen.end(), 0);
    order.assign(1, 0);
    seen[0] = 1;
    u[0] = 0.0;
    for (std::size_t h = 0; h < order.size(); ++h) {
      const int node = order[h];
      for (int e : adj[static_cast<std::size_t>(node)]) {
        const Cell& c = basis[static_cast<std::size_t>(e)];
        const int other = node < m ? m + c.j : c.i;
        if (seen[static_cast<std::size_t>(other)]) continue;
        seen[static_cast<std::size_t>(other)] = 1;
        if (node < m)
          v[static_cast<std::size_t>(c.j)] = C(c.i, c.j) - u[static_cast<std::size_t>(c.i)];
        else
          u[static_cast<std::size_t>(c.i)] = C(c.i, c.j) - v[static_cast<std::size_t>(c.j)];
        order.push_back(other);
      }
    }
    if (static_cast<int>(order.size()) != nodes) throw DataError("emd: basis is not a spanning tree");

    // Entering cell: most negative reduced cost, or the first negative one
    // (Bland) after a run of degenerate pivots.
    const bool bland = degenerate_run > 2 * nodes;
    int ei = -1, ej = -1;
    double best = -opt_tol;
    for (int i = 0; i < m && !(bland && ei >= 0); ++i) {
      for (int j = 0; j < n; ++j) {
        const double r = C(i, j) - u[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(j)];
        if (r < best) {
          best = r;
          ei = i;
          ej = j;
          if (bland) break;
        }
      }
    }
    if (ei < 0) break;
    if (++pivots > max_pivots) throw DataError("emd: pivot limit exceeded");

    // Tree path from row ei to column ej closes the cycle.
    std::fill(seen.begin(), seen.end(), 0);
    std::fill(parent_edge.begin(), parent_edge.end(), -1);
    order.assign(1, ei);
    seen[static_cast<std::size_t>(ei)] = 1;
    const int target = m + ej;
    for (std::size_t h = 0; h < order.size() && !seen[static_cast<std::size_t>(target)]; ++h) {
      const int node = order[h];
      for (int e : adj[static_cast<std::size_t>(node)]) {
        const Cell& c = basis[static_cast<std::size_t>(e)];
        const int other = node < m ? m + c.j : c.i;
        if (seen[static_cast<std::size_t>(other)]) continue;
        seen[static_cast<std::size_t>(other)] = 1;
        parent_edge[static_cast<std::size_t>(other)] = e;
        order.push_back(other);
      }
    }
    // Walking back from column ej, edges alternate -, +, -, ... (the
    // entering cell is +).
    std::vector<int> path;
    for (int node = target; node != ei;) {
      const int e = parent_edge[static_cast<std::size_t>(node)];
      path.push_back(e);
      const Cell& c = basis[static_cast<std::size_t>(e)];
      node = node < m ? m + c.j : c.i;
    }
    int leave = -1;
    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& c = basis[static_cast<std::size_t>(path[k])];
      const bool better = c.flow < theta ||
                          (bland && c.flow == theta &&
                           c.i * n + c.j < basis[static_cast<std::size_t>(leave)].i * n +
                                               basis[static_cast<std::size_t>(leave)].j);
      if (better) {
        theta = c.flow;
        leave = path[k];
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      Cell& c = basis[static_cast<std::size_t>(path[k])];
      c.flow = k % 2 == 0 ? std::max(0.0, c.flow - theta) : c.flow + theta;
    }
    degenerate_run = theta > 0.0 ? 0 : degenerate_run + 1;
    basis[static_cast<std::size_t>(leave)] = {ei, ej, theta};
  }
  return basis;
}

}  // namespace

EmdResult solve_transport(const RowMatrix& cost, std::span<const double> supply,
                          std::span<const double> demand) {
  if (static_cast<Eigen::Index>(supply.size()) != cost.rows() ||
      static_cast<Eigen::Index>(demand.size()) != cost.cols())
    throw DataError("emd: mass vectors do not match the cost matrix");
  if (!cost.allFinite() || (cost.size() > 0 && cost.minCoeff() < 0.0))
    throw DataError("emd: costs must be finite and non-negative");
  const auto a = checked_masses(supply, "row");
  const auto b = checked_masses(demand, "column");

  std::vector<int> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > 0.0) rows.push_back(static_cast<int>(i));
  for (std::size_t j = 0; j < b.size(); ++j)
    if (b[j] > 0.0) cols.push_back(static_cast<int>(j));

  RowMatrix sub(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  std::vector<double> sa, sb;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    sa.push_back(a[static_cast<std::size_t>(rows[i])]);
    for (std::size_t j = 0; j < cols.size(); ++j)
      sub(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cost(rows[i], cols[j]);
  }
  for (int j : cols) sb.push_back(b[static_cast<std::size_t>(j)]);

  EmdResult r;
  const auto cells = transport_simplex(sub, sa, sb, r.pivots);
  r.plan.T = RowMatrix::Zero(cost.rows(), cost.cols());
  for (const Cell& c : cells) {
    const int i = rows[static_cast<std::size_t>(c.i)], j = cols[static_cast<std::size_t>(c.j)];
    r.plan.T(i, j) += c.flow;
    r.distance += c.flow * cost(i, j);
  }
  r.plan.row_marginals = a;
  r.plan.col_marginals = b;
  return r;
}

EmdResult emd(const RowMatrix& A, std::span<const double> pa, const RowMatrix& B,
              std::span<const double> pb) {
  if (A.rows() == 0 || B.rows() == 0) throw DataError("emd: empty support");
  return solve_transport(cost_matrix(A, B), pa, pb);
}

EmdResult emd(const BobVocabulary& a, const BobVocabulary& b) {
  return emd(a.prototypes, a.masses, b.prototypes, b.masses);
}

double w1_uniform(const RowMatrix& A, const RowMatrix& B) {
  if (A.rows() == 0 || B.rows() == 0) throw DataError("w1_uniform: empty point set");
  const std::vector<double> pa(static_cast<std::size_t>(A.rows()), 1.0 / static_cast<double>(A.rows()));
  const std::vector<double> pb(static_cast<std::size_t>(B.rows()), 1.0 / static_cast<double>(B.rows()));
  return emd(A, pa, B, pb).distance;
}

Prop1Result prop1_check(const RowMatrix& emb_I, const RowMatrix& emb_J, const BobVocabulary& vocab_I,
                        const BobVocabulary& vocab_J) {
  auto check = [](const RowMatrix& e, const BobVocabulary& v) {
    if (e.rows() != static_cast<Eigen::Index>(v.n_components) || e.cols() != v.prototypes.cols())
      throw DataError("prop1_check: vocabulary '" + v.page_id + "' was not built from these embeddings");
  };
  check(emb_I, vocab_I);
  check(emb_J, vocab_J);
  Prop1Result r;
  r.w1_components = w1_uniform(emb_I, emb_J);
  r.w1_vocab = emd(vocab_I, vocab_J).distance;
  r.lhs = std::abs(r.w1_components - r.w1_vocab);
  r.bound = vocab_I.quant_error + vocab_J.quant_error;
  r.holds = r.lhs <= r.bound + 1e-6;
  return r;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kChamfer: return "chamfer";
    case Method::kHungarian: return "hungarian";
    case Method::kOt: return "ot";
    case Method::kBowL2: return "bow-l2";
    case Method::kBowCosine: return "bow-cosine";
    case Method::kBowChi2: return "bow-chi2";
    case Method::kBowHellinger: return "bow-hellinger";
    case Method::kMeanPool: return "meanpool";
    case Method::kMaxPool: return "maxpool";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (int id = 1; id <= 9; ++id) {
    const auto m = static_cast<Method>(id);
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown distance method '" + s + "'");
}

bool is_bob_method(Method m) {
  return m == Method::kChamfer || m == Method::kHungarian || m == Method::kOt;
}

bool is_bow_method(Method m) {
  return m == Method::kBowL2 || m == Method::kBowCosine || m == Method::kBowChi2 ||
         m == Method::kBowHellinger;
}

std::size_t DistanceMatrix::index_of(const std::string& page_id) const {
  const auto it = std::find(page_ids.begin(), page_ids.end(), page_id);
  if (it == page_ids.end()) throw DataError("page '" + page_id + "' is not in the distance matrix");
  return static_cast<std::size_t>(it - page_ids.begin());
}

DistanceMatrix pairwise_matrix(std::vector<std::string> page_ids, Method method,
                               const std::function<double(std::size_t, std::size_t)>& f,
                               int threads) {
  DistanceMatrix m;
  m.method = method;
  m.page_ids = std::move(page_ids);
  const std::size_t n = m.page_ids.size();
  m.values.assign(n * n, 0.0f);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = f(i, j);
      if (!std::isfinite(d)) throw DataError("non-finite distance between '" + m.page_ids[i] + "' and '" + m.page_ids[j] + "'");
      m.values[i * n + j] = static_cast<float>(d);
      m.values[j * n + i] = static_cast<float>(d);
    }
  });
  return m;
}

double vocab_distance(const BobVocabulary& a, const BobVocabulary& b, Method method,
                      bool allow_rectangular) {
  switch (method) {
    case Method::kChamfer: return chamfer(a, b);
    case Method::kHungarian: return hungarian(a, b, allow_rectangular).distance;
    case Method::kOt: return emd(a, b).distance;
    default: throw ConfigError("method '" + to_string(method) + "' does not operate on vocabularies");
  }
}

DistanceMatrix vocab_distance_matrix(std::span<const BobVocabulary> vocabs, Method method,
                                     int threads, bool allow_rectangular) {
  if (!is_bob_method(method))
    throw ConfigError("method '" + to_string(method) + "' does not operate on vocabularies");
  std::vector<std::string> ids;
  for (const auto& v : vocabs) ids.push_back(v.page_id);
  return pairwise_matrix(std::move(ids), method, [&](std::size_t i, std::size_t j) {
    return vocab_distance(vocabs[i], vocabs[j], method, allow_rectangular);
  }, threads);
}

namespace {
constexpr std::uint32_t kMatrixVersion = 1;
}

std::vector<std::uint8_t> encode_distance_matrix(const DistanceMatrix& m) {
  io::Writer w;
  w.magic("BOBD");
  w.u32(kMatrixVersion);
  w.u32(static_cast<std::uint32_t>(m.size()));
  w.u8(static_cast<std::uint8_t>(m.method));
  for (const auto& id : m.page_ids) w.str(id);
  std::vector<float> vals = m.values;
  for (std::size_t i = 0; i < m.size(); ++i) vals[i * m.size() + i] = 0.0f;
  w.f32s(vals);
  return w.buffer();
}

DistanceMatrix decode_distance_matrix(std::vector<std::uint8_t> bytes, const std::string& context) {
  io::Reader r(std::move(bytes), context);
  r.expect_magic("BOBD");
  const auto version = r.u32();
  if (version != kMatrixVersion)
    throw DataError(context + ": unsupported distance matrix version " + std::to_string(version));
  DistanceMatrix m;
  const auto n = r.u32();
  const auto id = r.u8();
  if (id < 1 || id > 9) throw DataError(context + ": unknown method id " + std::to_string(id));
  m.method = static_cast<Method>(id);
  for (std::uint32_t i = 0; i < n; ++i) m.page_ids.push_back(r.str());
  m.values = r.f32s(static_cast<std::size_t>(n) * n);
  if (!r.at_end()) throw DataError(context + ": trailing bytes after distance matrix");
  return m;
}

void save_distance_matrix(const std::filesystem::path& path, const DistanceMatrix& m) {
  io::Writer w;
  w.bytes(encode_distance_matrix(m));
  w.save(path);
}

DistanceMatrix load_distance_matrix(const std::filesystem::path& path) {
  return decode_distance_matrix(io::read_file(path), path.string());
}

}  // namespace bob
