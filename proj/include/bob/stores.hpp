#pragma once

// Intermediate artifacts between pipeline stages: the patch store (BOBP)
// and the embedding store (BOBZ).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bob/encoder.hpp"
#include "bob/pagegrid.hpp"

namespace bob {

// Patches are bit-packed, 512 bytes each, MSB first in raster order.
// `extra` is merged into the JSON header (config echo, provenance hashes).
std::vector<std::uint8_t> encode_patch_store(std::span<const PageExtraction> pages,
                                             const nlohmann::json& extra = {});
void save_patch_store(const std::filesystem::path& path, std::span<const PageExtraction> pages,
                      const nlohmann::json& extra = {});
std::vector<PageExtraction> load_patch_store(const std::filesystem::path& path,
                                             nlohmann::json* header = nullptr);

struct PageEmbeddings {
  std::string page_id;
  std::vector<Embedding> embeddings;
};

void save_embedding_store(const std::filesystem::path& path, std::span<const PageEmbeddings> pages,
                          const nlohmann::json& extra = {});
std::vector<PageEmbeddings> load_embedding_store(const std::filesystem::path& path,
                                                 nlohmann::json* header = nullptr);

}  // namespace bob
