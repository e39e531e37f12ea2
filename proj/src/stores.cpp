#include "bob/stores.hpp"

#include "bob/binary_io.hpp"
#include "bob/error.hpp"

namespace bob {

namespace {
constexpr std::uint32_t kPatchVersion = 1;
constexpr std::uint32_t kEmbeddingVersion = 1;
constexpr std::size_t kPackedBytes = kPatchPixels / 8;
}  // namespace

std::vector<std::uint8_t> encode_patch_store(std::span<const PageExtraction> pages,
                                             const nlohmann::json& extra) {
  nlohmann::json h = extra.is_object() ? extra : nlohmann::json::object();
  h["patch_side"] = kPatchSide;
  h["pages"] = nlohmann::json::array();
  for (const auto& p : pages) {
    h["pages"].push_back({{"page_id", p.stats.page_id},
                          {"n_patches", p.patches.size()},
                          {"excluded", p.excluded},
                          {"stats", p.stats}});
  }
  io::Writer w;
  w.magic("BOBP");
  w.u32(kPatchVersion);
  w.json_header(h);
  std::array<std::uint8_t, kPackedBytes> packed{};
  for (const auto& p : pages) {
    for (const auto& patch : p.patches) {
      w.u32(static_cast<std::uint32_t>(patch.component_label));
      packed.fill(0);
      for (std::size_t i = 0; i < patch.data.size(); ++i)
        if (patch.data[i]) packed[i / 8] |= static_cast<std::uint8_t>(0x80u >> (i % 8));
      w.bytes(packed);
    }
  }
  return w.buffer();
}

void save_patch_store(const std::filesystem::path& path, std::span<const PageExtraction> pages,
                      const nlohmann::json& extra) {
  io::Writer w;
  w.bytes(encode_patch_store(pages, extra));
  w.save(path);
}

std::vector<PageExtraction> load_patch_store(const std::filesystem::path& path, nlohmann::json* header) {
  auto r = io::Reader::open(path);
  r.expect_magic("BOBP");
  if (const auto v = r.u32(); v != kPatchVersion)
    throw DataError(path.string() + ": unsupported patch store version " + std::to_string(v));
  const auto h = r.json_header();
  if (h.value("patch_side", 0) != kPatchSide) throw DataError(path.string() + ": unexpected patch side");
  std::vector<PageExtraction> pages;
  for (const auto& jp : h.at("pages")) {
    PageExtraction p;
    p.stats = jp.at("stats").get<ExtractionStats>();
    p.excluded = jp.at("excluded").get<bool>();
    const auto n = jp.at("n_patches").get<std::size_t>();
    for (std::size_t k = 0; k < n; ++k) {
      Patch patch;
      patch.component_label = static_cast<int>(r.u32());
      patch.page_id = p.stats.page_id;
      const auto packed = r.bytes(kPackedBytes);
      for (std::size_t i = 0; i < patch.data.size(); ++i)
        patch.data[i] = (packed[i / 8] >> (7 - i % 8)) & 1u;
      p.patches.push_back(std::move(patch));
    }
    pages.push_back(std::move(p));
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after patch store");
  if (header) *header = h;
  return pages;
}

void save_embedding_store(const std::filesystem::path& path, std::span<const PageEmbeddings> pages,
                          const nlohmann::json& extra) {
  std::size_t d = 0;
  for (const auto& p : pages)
    if (!p.embeddings.empty()) d = p.embeddings.front().vector.size();
  nlohmann::json h = extra.is_object() ? extra : nlohmann::json::object();
  h["d"] = d;
  h["pages"] = nlohmann::json::array();
  for (const auto& p : pages) h["pages"].push_back({{"page_id", p.page_id}, {"n", p.embeddings.size()}});
  io::Writer w;
  w.magic("BOBZ");
  w.u32(kEmbeddingVersion);
  w.json_header(h);
  for (const auto& p : pages) {
    for (const auto& e : p.embeddings) {
      if (e.vector.size() != d) throw DataError("embedding store: mixed dimensions");
      w.u32(static_cast<std::uint32_t>(e.component_label));
      w.f32s(e.vector);
    }
  }
  w.save(path);
}

std::vector<PageEmbeddings> load_embedding_store(const std::filesystem::path& path,
                                                 nlohmann::json* header) {
  auto r = io::Reader::open(path);
  r.expect_magic("BOBZ");
  if (const auto v = r.u32(); v != kEmbeddingVersion)
    throw DataError(path.string() + ": unsupported embedding store version " + std::to_string(v));
  const auto h = r.json_header();
  const auto d = h.at("d").get<std::size_t>();
  std::vector<PageEmbeddings> pages;
  for (const auto& jp : h.at("pages")) {
    PageEmbeddings p;
    p.page_id = jp.at("page_id").get<std::string>();
    const auto n = jp.at("n").get<std::size_t>();
    for (std::size_t k = 0; k < n; ++k) {
      Embedding e;
      e.page_id = p.page_id;
      e.component_label = static_cast<int>(r.u32());
      e.vector = r.f32s(d);
      p.embeddings.push_back(std::move(e));
    }
    pages.push_back(std::move(p));
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after embedding store");
  if (header) *header = h;
  return pages;
}

}  // namespace bob
