#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bob/retrieval.hpp"

namespace testing {

// Six pages in three clusters; c1 has no mate and is skipped.
inline bob::DistanceMatrix six_page_matrix() {
  bob::DistanceMatrix m;
  m.method = bob::Method::kChamfer;
  m.page_ids = {"a1", "a2", "b1", "b2", "b3", "c1"};
  const double d[6][6] = {
      {0.00, 0.50, 0.20, 0.60, 0.70, 0.30},
      {0.50, 0.00, 0.90, 0.10, 0.80, 0.40},
      {0.20, 0.90, 0.00, 0.35, 0.15, 0.45},
      {0.60, 0.10, 0.35, 0.00, 0.55, 0.25},
      {0.70, 0.80, 0.15, 0.55, 0.00, 0.65},
      {0.30, 0.40, 0.45, 0.25, 0.65, 0.00},
  };
  for (const auto& row : d)
    for (double x : row) m.values.push_back(static_cast<float>(x));
  return m;
}

inline bob::JoinLabels six_page_labels() {
  std::vector<std::pair<std::string, std::string>> pairs{
      {"a1", "A"}, {"a2", "A"}, {"b1", "B"}, {"b2", "B"}, {"b3", "B"}, {"c1", "C"}};
  return bob::JoinLabels::from_pairs(pairs);
}

// Scored by hand from the rankings
//   a1: b1 c1 [a2] b2 b3      a2: b2 c1 [a1] b3 b1
//   b1: [b3] a1 [b2] c1 a2    b2: a2 c1 [b1] [b3] a1
//   b3: [b1] [b2] c1 a1 a2
struct SixPageScores {
  double hit1 = 2.0 / 5, hit3 = 1.0, hit5 = 1.0;
  double map1 = 2.0 / 5;
  double map3 = (1.0 / 3 + 1.0 / 3 + 5.0 / 6 + 1.0 / 6 + 1.0) / 5;
  double map5 = (1.0 / 3 + 1.0 / 3 + 5.0 / 6 + 5.0 / 12 + 1.0) / 5;
  double mrr = (1.0 / 3 + 1.0 / 3 + 1.0 + 1.0 / 3 + 1.0) / 5;
  // Cluster A: tp 0 -> F1 0. Cluster B: tp 2, fp 2, fn 1 -> 4/7.
  double macro_f1 = (0.0 + 4.0 / 7) / 2;
  std::size_t used = 5;
};

}  // namespace testing
