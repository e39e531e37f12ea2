#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bob/kmeans.hpp"
#include "bob/vocab.hpp"

namespace testing {

inline bob::RowMatrix random_points(std::mt19937_64& rng, int n, int d, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  bob::RowMatrix m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

// Random masses that are multiples of 1/den, each at least 1/den.
inline std::vector<double> rational_masses(std::mt19937_64& rng, int k, int den) {
  std::vector<int> units(k, 1);
  std::uniform_int_distribution<int> pick(0, k - 1);
  for (int left = den - k; left > 0; --left) ++units[pick(rng)];
  std::vector<double> out;
  for (int u : units) out.push_back(static_cast<double>(u) / den);
  return out;
}

inline bob::BobVocabulary vocab_from(const std::string& id, const bob::RowMatrix& protos,
                                     std::vector<std::uint32_t> pops) {
  bob::BobVocabulary v;
  v.page_id = id;
  v.prototypes = protos;
  v.populations = pops;
  std::uint32_t n = 0;
  for (auto p : pops) n += p;
  v.n_components = n;
  for (auto p : pops) v.masses.push_back(static_cast<double>(p) / n);
  return v;
}

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("bob_test_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
