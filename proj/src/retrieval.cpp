#include "bob/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "bob/error.hpp"

namespace bob {

JoinLabels JoinLabels::from_pairs(std::span<const std::pair<std::string, std::string>> pairs) {
  JoinLabels l;
  std::map<std::string, int> index;
  for (const auto& [page, cluster] : pairs) {
    if (l.cluster_of.count(page)) throw DataError("labels: duplicate page_id '" + page + "'");
    auto it = index.find(cluster);
    if (it == index.end()) {
      it = index.emplace(cluster, static_cast<int>(l.cluster_names.size())).first;
      l.cluster_names.push_back(cluster);
      l.clusters.emplace_back();
    }
    l.page_ids.push_back(page);
    l.cluster_of[page] = it->second;
    l.clusters[static_cast<std::size_t>(it->second)].push_back(page);
  }
  return l;
}

int JoinLabels::cluster(const std::string& page_id) const {
  const auto it = cluster_of.find(page_id);
  if (it == cluster_of.end()) throw DataError("labels: page '" + page_id + "' has no cluster label");
  return it->second;
}

RankedList rank(const std::string& query, const DistanceMatrix& m) {
  const std::size_t q = m.index_of(query);
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < m.size(); ++j)
    if (j != q) idx.push_back(j);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const float da = m.at(q, a), db = m.at(q, b);
    if (da != db) return da < db;
    return m.page_ids[a] < m.page_ids[b];
  });
  RankedList r;
  r.query = query;
  for (std::size_t j : idx) {
    r.ranked.push_back(m.page_ids[j]);
    r.distances.push_back(m.at(q, j));
  }
  return r;
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json::object();
  j["method"] = r.method;
  for (const auto& [k, v] : r.hit_at) j["hit@" + std::to_string(k)] = v;
  for (const auto& [k, v] : r.map_at) j["map@" + std::to_string(k)] = v;
  j["mrr"] = r.mrr;
  j["macro_f1@1"] = r.macro_f1_at_1;
  j["n_queries"] = r.n_queries_used;
}

MetricsReport evaluate_rankings(std::span<const RankedList> rankings, const JoinLabels& labels,
                                std::span<const int> ks) {
  for (int k : ks)
    if (k < 1) throw ConfigError("evaluate: k must be >= 1");
  MetricsReport rep;
  for (int k : ks) {
    rep.hit_at[k] = 0.0;
    rep.map_at[k] = 0.0;
  }
  std::vector<int> truth, pred;
  for (const auto& r : rankings) {
    const int c = labels.cluster(r.query);
    std::vector<char> rel;
    std::size_t R = 0;
    for (const auto& p : r.ranked) {
      rel.push_back(labels.cluster(p) == c);
      R += static_cast<std::size_t>(rel.back());
    }
    if (R == 0) continue;
    ++rep.n_queries_used;

    for (int k : ks) {
      const std::size_t kk = std::min(static_cast<std::size_t>(k), rel.size());
      std::size_t hits = 0;
      double ap = 0.0;
      for (std::size_t i = 0; i < kk; ++i) {
        if (!rel[i]) continue;
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(i + 1);
      }
      rep.hit_at[k] += hits > 0 ? 1.0 : 0.0;
      rep.map_at[k] += ap / static_cast<double>(std::min(static_cast<std::size_t>(k), R));
    }
    const auto first = static_cast<std::size_t>(std::find(rel.begin(), rel.end(), 1) - rel.begin());
    rep.mrr += 1.0 / static_cast<double>(first + 1);
    truth.push_back(c);
    pred.push_back(labels.cluster(r.ranked.front()));
  }
  if (rep.n_queries_used == 0) throw DataError("evaluate: no query has a mate in the gallery");

  const double n = static_cast<double>(rep.n_queries_used);
  for (auto& [k, v] : rep.hit_at) v /= n;
  for (auto& [k, v] : rep.map_at) v /= n;
  rep.mrr /= n;

  // Top-1 cluster as predicted label; F1 per cluster that owns at least one
  // used query, averaged with equal weight.
  const std::set<int> classes(truth.begin(), truth.end());
  double f1_sum = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (truth[i] == c && pred[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (truth[i] == c) ++fn;
    }
    f1_sum += 2.0 * tp / (2.0 * tp + fp + fn);
  }
  rep.macro_f1_at_1 = f1_sum / static_cast<double>(classes.size());
  return rep;
}

MetricsReport evaluate(const DistanceMatrix& m, const JoinLabels& labels, std::span<const int> ks) {
  std::vector<RankedList> rankings;
  for (const auto& id : m.page_ids) {
    labels.cluster(id);
    rankings.push_back(rank(id, m));
  }
  MetricsReport rep = evaluate_rankings(rankings, labels, ks);
  rep.method = to_string(m.method);
  return rep;
}

void to_json(nlohmann::json& j, const SeparationReport& r) {
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  j = {{"method", r.method},     {"intra", r.intra_mean}, {"inter", r.inter_mean},
       {"gap", r.gap},           {"ks", r.ks},            {"auc", r.auc},
       {"cohens_d", num(r.cohens_d)}, {"n_intra", r.n_intra}, {"n_inter", r.n_inter}};
}

SeparationReport separation_from_samples(std::span<const double> intra, std::span<const double> inter) {
  if (intra.empty() || inter.empty())
    throw DataError("separation: need at least one intra-cluster and one inter-cluster pair");
  SeparationReport r;
  r.n_intra = intra.size();
  r.n_inter = inter.size();
  const double n1 = static_cast<double>(intra.size()), n2 = static_cast<double>(inter.size());
  r.intra_mean = std::accumulate(intra.begin(), intra.end(), 0.0) / n1;
  r.inter_mean = std::accumulate(inter.begin(), inter.end(), 0.0) / n2;
  r.gap = r.inter_mean - r.intra_mean;

  std::vector<double> a(intra.begin(), intra.end()), b(inter.begin(), inter.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  // KS: walk both ECDFs over the merged support.
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    r.ks = std::max(r.ks, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
  }

  // AUC = P(inter > intra) + P(tie)/2 via midranks (Mann-Whitney U).
  std::vector<std::pair<double, int>> all;
  for (double x : a) all.emplace_back(x, 0);
  for (double x : b) all.emplace_back(x, 1);
  std::sort(all.begin(), all.end());
  double rank_sum_inter = 0.0;
  for (std::size_t s = 0; s < all.size();) {
    std::size_t e = s;
    while (e < all.size() && all[e].first == all[s].first) ++e;
    const double mid = 0.5 * static_cast<double>(s + 1 + e);
    for (std::size_t t = s; t < e; ++t)
      if (all[t].second == 1) rank_sum_inter += mid;
    s = e;
  }
  r.auc = (rank_sum_inter - n2 * (n2 + 1.0) / 2.0) / (n1 * n2);

  double ss1 = 0.0, ss2 = 0.0;
  for (double x : a) ss1 += (x - r.intra_mean) * (x - r.intra_mean);
  for (double x : b) ss2 += (x - r.inter_mean) * (x - r.inter_mean);
  const double dof = n1 + n2 - 2.0;
  const double sd = dof > 0.0 ? std::sqrt((ss1 + ss2) / dof) : 0.0;
  if (sd > 0.0)
    r.cohens_d = r.gap / sd;
  else
    r.cohens_d = r.gap == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.gap);
  return r;
}

SeparationReport separation(const DistanceMatrix& m, const JoinLabels& labels) {
  std::vector<double> intra, inter;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const int ci = labels.cluster(m.page_ids[i]);
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      (labels.cluster(m.page_ids[j]) == ci ? intra : inter).push_back(m.at(i, j));
    }
  }
  SeparationReport r = separation_from_samples(intra, inter);
  r.method = to_string(m.method);
  return r;
}

RankedList two_stage(const std::string& query, const DistanceMatrix& bow,
                     const std::function<double(std::size_t, std::size_t)>& ot, std::size_t M) {
  if (M < 1) throw ConfigError("two_stage: M must be >= 1");
  const std::size_t q = bow.index_of(query);
  const RankedList first = rank(query, bow);
  const std::size_t m = std::min(M, first.ranked.size());

  struct Item {
    double d;
    std::string id;
  };
  std::vector<Item> shortlist;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t g = bow.index_of(first.ranked[i]);
    // Rounded like a stored matrix so on-demand and precomputed agree.
    shortlist.push_back({static_cast<float>(ot(q, g)), first.ranked[i]});
  }
  std::stable_sort(shortlist.begin(), shortlist.end(), [](const Item& a, const Item& b) {
    if (a.d != b.d) return a.d < b.d;
    return a.id < b.id;
  });

  RankedList r;
  r.query = query;
  r.n_reranked = m;
  for (const auto& it : shortlist) {
    r.ranked.push_back(it.id);
    r.distances.push_back(it.d);
  }
  for (std::size_t i = m; i < first.ranked.size(); ++i) {
    r.ranked.push_back(first.ranked[i]);
    r.distances.push_back(first.distances[i]);
  }
  return r;
}

RankedList two_stage(const std::string& query, const DistanceMatrix& bow, const DistanceMatrix& ot,
                     std::size_t M) {
  std::vector<std::size_t> to_ot(bow.size());
  for (std::size_t i = 0; i < bow.size(); ++i) to_ot[i] = ot.index_of(bow.page_ids[i]);
  return two_stage(query, bow, [&](std::size_t a, std::size_t b) {
    return static_cast<double>(ot.at(to_ot[a], to_ot[b]));
  }, M);
}

void to_json(nlohmann::json& j, const ProfileRow& r) {
  j = {{"method", r.method},
       {"ms_per_query", r.median_ms},
       {"n_queries", r.n_queries},
       {"scales_with_n", r.scales_with_n}};
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

double elapsed_ms(const std::function<void()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double median_ms(const std::function<void()>& f, int repeats) {
  std::vector<double> t;
  for (int i = 0; i < std::max(1, repeats); ++i) t.push_back(elapsed_ms(f));
  return median(t);
}

std::vector<ProfileRow> profile(std::span<const BobVocabulary> vocabs, const DistanceMatrix& bow,
                                const DistanceMatrix& hungarian_matrix,
                                std::span<const std::size_t> queries, std::size_t M) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < vocabs.size(); ++i) by_id[vocabs[i].page_id] = i;
  std::vector<std::size_t> vocab_of(bow.size());
  for (std::size_t i = 0; i < bow.size(); ++i) {
    const auto it = by_id.find(bow.page_ids[i]);
    if (it == by_id.end()) throw DataError("profile: no vocabulary for page '" + bow.page_ids[i] + "'");
    vocab_of[i] = it->second;
  }

  std::vector<double> t_bow, t_hung, t_fly, t_two;
  volatile std::size_t sink = 0;
  for (std::size_t q : queries) {
    if (q >= bow.size()) throw DataError("profile: query index out of range");
    const std::string& id = bow.page_ids[q];
    t_bow.push_back(elapsed_ms([&] { sink = sink + rank(id, bow).ranked.size(); }));
    t_hung.push_back(elapsed_ms([&] { sink = sink + rank(id, hungarian_matrix).ranked.size(); }));
    t_fly.push_back(elapsed_ms([&] {
      std::vector<std::pair<double, std::size_t>> d;
      for (std::size_t j = 0; j < bow.size(); ++j)
        if (j != q) d.emplace_back(hungarian(vocabs[vocab_of[q]], vocabs[vocab_of[j]]).distance, j);
      std::sort(d.begin(), d.end());
      sink = sink + d.size();
    }));
    t_two.push_back(elapsed_ms([&] {
      const auto r = two_stage(id, bow, [&](std::size_t a, std::size_t b) {
        return emd(vocabs[vocab_of[a]], vocabs[vocab_of[b]]).distance;
      }, M);
      sink = sink + r.ranked.size();
    }));
  }
  const std::size_t n = queries.size();
  return {{to_string(bow.method) + " (precomputed)", median(t_bow), n, false},
          {"hungarian (precomputed)", median(t_hung), n, false},
          {"hungarian (on-the-fly)", median(t_fly), n, true},
          {to_string(bow.method) + " -> ot (M=" + std::to_string(M) + ")", median(t_two), n, false}};
}

std::string format_metrics_table(std::span<const MetricsReport> rows) {
  std::set<int> ks;
  for (const auto& r : rows)
    for (const auto& [k, v] : r.hit_at) ks.insert(k);
  std::string out = "method                      ";
  for (int k : ks) {
    char buf[64];
    std::snprintf(buf, sizeof buf, " Hit@%-3d mAP@%-3d", k, k);
    out += buf;
  }
  out += "    MRR  MacroF1@1      n\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-28s", r.method.c_str());
    out += buf;
    for (int k : ks) {
      const auto h = r.hit_at.find(k), m = r.map_at.find(k);
      std::snprintf(buf, sizeof buf, "  %6.3f  %6.3f", h == r.hit_at.end() ? 0.0 : h->second,
                    m == r.map_at.end() ? 0.0 : m->second);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, " %6.3f     %6.3f %6zu\n", r.mrr, r.macro_f1_at_1, r.n_queries_used);
    out += buf;
  }
  return out;
}

std::string format_separation_table(std::span<const SeparationReport> rows) {
  std::string out = "method                       intra    inter      gap       KS      AUC  Cohen's d\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-24s %8.3f %8.3f %8.3f %8.3f %8.3f %10.3f\n", r.method.c_str(),
                  r.intra_mean, r.inter_mean, r.gap, r.ks, r.auc, r.cohens_d);
    out += buf;
  }
  return out;
}

}  // namespace bob
