#pragma once

// Ranking, retrieval metrics, intra/inter separation statistics, the
// two-stage BoW -> OT reranker and per-query timing.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bob/setdist.hpp"
#include "bob/vocab.hpp"

namespace bob {

struct JoinLabels {
  std::vector<std::string> page_ids;
  std::map<std::string, int> cluster_of;
  std::vector<std::string> cluster_names;  // index -> original cluster id
  std::vector<std::vector<std::string>> clusters;

  // (page_id, cluster_id) pairs; cluster indices follow first appearance.
  static JoinLabels from_pairs(std::span<const std::pair<std::string, std::string>> pairs);
  int cluster(const std::string& page_id) const;
  bool has(const std::string& page_id) const { return cluster_of.count(page_id) != 0; }
};

struct RankedList {
  std::string query;
  std::vector<std::string> ranked;  // query excluded
  std::vector<double> distances;
  // Two-stage only: the first n_reranked entries carry OT distances, the
  // tail keeps BoW order and BoW distances.
  std::size_t n_reranked = 0;
};

// Ascending distance; ties broken by page id.
RankedList rank(const std::string& query, const DistanceMatrix& m);

struct MetricsReport {
  std::string method;
  std::map<int, double> hit_at;
  std::map<int, double> map_at;
  double mrr = 0.0;
  double macro_f1_at_1 = 0.0;
  std::size_t n_queries_used = 0;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

// Every page of the matrix must be labeled. Queries without a mate in the
// matrix are skipped.
MetricsReport evaluate(const DistanceMatrix& m, const JoinLabels& labels, std::span<const int> ks);
MetricsReport evaluate_rankings(std::span<const RankedList> rankings, const JoinLabels& labels,
                                std::span<const int> ks);

struct SeparationReport {
  std::string method;
  double intra_mean = 0.0;
  double inter_mean = 0.0;
  double gap = 0.0;
  double ks = 0.0;
  double auc = 0.0;
  double cohens_d = 0.0;
  std::size_t n_intra = 0;
  std::size_t n_inter = 0;
};

void to_json(nlohmann::json& j, const SeparationReport& r);

SeparationReport separation(const DistanceMatrix& m, const JoinLabels& labels);
SeparationReport separation_from_samples(std::span<const double> intra, std::span<const double> inter);

// Shortlist the top M by `bow`, rerank by OT; M is clamped to N - 1.
RankedList two_stage(const std::string& query, const DistanceMatrix& bow, const DistanceMatrix& ot,
                     std::size_t M);
// Same with OT solved on demand: ot(query_index, gallery_index), indices
// into bow.page_ids.
RankedList two_stage(const std::string& query, const DistanceMatrix& bow,
                     const std::function<double(std::size_t, std::size_t)>& ot, std::size_t M);

struct ProfileRow {
  std::string method;
  double median_ms = 0.0;
  std::size_t n_queries = 0;
  bool scales_with_n = false;
};

void to_json(nlohmann::json& j, const ProfileRow& r);

// Median wall-clock per query for: precomputed lookup (BoW and Hungarian
// matrices), on-the-fly Hungarian against the whole gallery, and two-stage
// with on-demand OT.
std::vector<ProfileRow> profile(std::span<const BobVocabulary> vocabs, const DistanceMatrix& bow,
                                const DistanceMatrix& hungarian_matrix,
                                std::span<const std::size_t> queries, std::size_t M);

// Milliseconds per call of `f`, median over `repeats` timed runs.
double median_ms(const std::function<void()>& f, int repeats);

std::string format_metrics_table(std::span<const MetricsReport> rows);
std::string format_separation_table(std::span<const SeparationReport> rows);

}  // namespace bob
