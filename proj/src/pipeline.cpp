#include "bob/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "bob/binary_io.hpp"
#include "bob/error.hpp"
#include "bob/parallel.hpp"
#include "bob/rng.hpp"

namespace bob {

void RunConfig::validate() const {
  extraction.validate();
  train.validate();
  arch.validate();
  kmeans.validate();
  if (K_g < 1) throw ConfigError("K_g must be >= 1");
  if (ks.empty()) throw ConfigError("ks must not be empty");
  for (int k : ks)
    if (k < 1) throw ConfigError("every k in ks must be >= 1");
  if (M < 1) throw ConfigError("M must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  synth.validate();
  if (ablate != "K" && ablate != "d" && ablate != "sparsity" && ablate != "normalization")
    throw ConfigError("ablate must be one of K, d, sparsity, normalization");
}

std::string RunConfig::hash() const { return io::hex64(io::fnv1a(nlohmann::json(*this).dump())); }

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"extraction", c.extraction},
       {"train", c.train},
       {"arch", c.arch},
       {"kmeans", c.kmeans},
       {"K_g", c.K_g},
       {"codebook_source", to_string(c.codebook_source)},
       {"method", to_string(c.method)},
       {"ks", c.ks},
       {"M", c.M},
       {"allow_rectangular", c.allow_rectangular},
       {"seed", c.seed},
       {"threads", c.threads},
       {"synth", c.synth},
       {"ablate", c.ablate},
       {"manifest", c.manifest.string()},
       {"out_dir", c.out_dir.string()}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  RunConfig d;
  c.extraction = j.value("extraction", d.extraction);
  c.train = j.value("train", d.train);
  c.arch = j.value("arch", d.arch);
  c.kmeans = j.value("kmeans", d.kmeans);
  c.K_g = j.value("K_g", d.K_g);
  c.codebook_source = codebook_source_from_string(j.value("codebook_source", to_string(d.codebook_source)));
  c.method = method_from_string(j.value("method", to_string(d.method)));
  c.ks = j.value("ks", d.ks);
  c.M = j.value("M", d.M);
  c.allow_rectangular = j.value("allow_rectangular", d.allow_rectangular);
  c.seed = j.value("seed", d.seed);
  c.threads = j.value("threads", d.threads);
  c.synth = j.value("synth", d.synth);
  c.ablate = j.value("ablate", d.ablate);
  c.manifest = j.value("manifest", d.manifest.string());
  c.out_dir = j.value("out_dir", d.out_dir.string());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  nlohmann::json j;
  try {
    in >> j;
    RunConfig c = j.get<RunConfig>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<PageExtraction> preprocess_pages(const Manifest& manifest, const ExtractionConfig& cfg,
                                             int threads) {
  cfg.validate();
  std::vector<PageExtraction> pages(manifest.entries.size());
  parallel_for(pages.size(), threads, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    try {
      pages[i] = extract_page(read_image(e.resolved), cfg, e.page_id, e.resolved.string());
    } catch (const DataError& err) {
      throw DataError("page '" + e.page_id + "': " + err.what());
    }
  });
  return pages;
}

std::vector<PageEmbeddings> encode_pages(const EncoderParams& params,
                                         std::span<const PageExtraction> pages) {
  std::vector<PageEmbeddings> out;
  for (const auto& p : pages) {
    if (p.excluded) continue;
    out.push_back({p.stats.page_id, encode(params, p.patches)});
  }
  return out;
}

std::vector<BobVocabulary> build_vocabs(std::span<const PageEmbeddings> pages, const KMeansConfig& base,
                                        std::uint64_t seed, int threads) {
  std::vector<BobVocabulary> out(pages.size());
  parallel_for(pages.size(), threads, [&](std::size_t i) {
    KMeansConfig cfg = base;
    cfg.seed = derive_seed(seed, "vocab:" + pages[i].page_id);
    RowMatrix pts = embeddings_matrix(pages[i].embeddings);
    out[i] = build_vocab(pages[i].page_id, pts, cfg);
  });
  return out;
}

BowModel build_bow(std::span<const BobVocabulary> vocabs, std::span<const PageEmbeddings> pages,
                   CodebookSource source, int K_g, std::uint64_t seed, const KMeansConfig& base) {
  BowModel m;
  std::vector<std::vector<double>> tfs;
  std::vector<std::string> ids;
  if (source == CodebookSource::kCentroids) {
    m.codebook = fit_codebook_centroids(vocabs, K_g, seed, base);
    for (const auto& v : vocabs) {
      tfs.push_back(tf_centroids(v, m.codebook.codewords));
      ids.push_back(v.page_id);
    }
  } else {
    std::vector<RowMatrix> mats;
    for (const auto& p : pages) mats.push_back(embeddings_matrix(p.embeddings));
    m.codebook = fit_codebook_raw(mats, K_g, seed, base);
    for (std::size_t i = 0; i < pages.size(); ++i) {
      tfs.push_back(tf_raw(mats[i], m.codebook.codewords));
      ids.push_back(pages[i].page_id);
    }
  }
  m.codebook.idf = idf(tfs);
  for (std::size_t i = 0; i < tfs.size(); ++i)
    m.histograms.push_back(histogram(ids[i], std::move(tfs[i]), m.codebook.idf));
  return m;
}

DistanceMatrix pooled_matrix(std::span<const PageEmbeddings> pages, Method method, int threads) {
  const PoolKind kind = method == Method::kMeanPool ? PoolKind::kMean : PoolKind::kMax;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> pooled;
  for (const auto& p : pages) {
    ids.push_back(p.page_id);
    pooled.push_back(pool(embeddings_matrix(p.embeddings), kind));
  }
  return pooled_distance_matrix(ids, pooled, method, threads);
}

std::vector<RankedList> rerank_all(std::span<const BobVocabulary> vocabs, const DistanceMatrix& bow,
                                   std::size_t M) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < vocabs.size(); ++i) by_id[vocabs[i].page_id] = i;
  std::vector<std::size_t> vi(bow.size());
  for (std::size_t i = 0; i < bow.size(); ++i) {
    const auto it = by_id.find(bow.page_ids[i]);
    if (it == by_id.end()) throw DataError("rerank: no vocabulary for page '" + bow.page_ids[i] + "'");
    vi[i] = it->second;
  }
  std::vector<RankedList> out;
  for (const auto& q : bow.page_ids) {
    out.push_back(two_stage(q, bow, [&](std::size_t a, std::size_t b) {
      return emd(vocabs[vi[a]], vocabs[vi[b]]).distance;
    }, M));
  }
  return out;
}

std::filesystem::path ArtifactPaths::codebook(CodebookSource s) const {
  return dir / ("codebook_" + to_string(s) + ".bobc");
}

std::filesystem::path ArtifactPaths::histograms(CodebookSource s) const {
  return dir / ("histograms_" + to_string(s) + ".bobh");
}

std::filesystem::path ArtifactPaths::distances(Method m, CodebookSource s) const {
  const std::string suffix = is_bow_method(m) ? "_" + to_string(s) : "";
  return dir / ("dist_" + to_string(m) + suffix + ".bobd");
}

std::filesystem::path ArtifactPaths::metrics(Method m, CodebookSource s) const {
  const std::string suffix = is_bow_method(m) ? "_" + to_string(s) : "";
  return dir / ("metrics_" + to_string(m) + suffix + ".json");
}

namespace {

void require(const std::filesystem::path& p, const char* producer) {
  if (!std::filesystem::exists(p))
    throw DataError("missing " + p.string() + "; run `bob " + producer + "` first");
}

std::string file_hash(const std::filesystem::path& p) { return io::hex64(io::fnv1a(io::read_file(p))); }

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  const std::string s = j.dump(2) + "\n";
  io::Writer w;
  w.bytes({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  w.save(path);
}

// Sidecar summary next to an artifact: provenance plus command output.
void write_summary(const std::filesystem::path& artifact, const RunConfig& cfg,
                   const std::vector<std::filesystem::path>& inputs, nlohmann::json body) {
  body["config_hash"] = cfg.hash();
  body["seed"] = cfg.seed;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : inputs) {
    const auto bytes = io::read_file(p);
    h = io::fnv1a(bytes, h);
  }
  body["input_hash"] = io::hex64(h);
  if (std::filesystem::exists(artifact)) body["artifact_hash"] = file_hash(artifact);
  auto path = artifact;
  path += ".json";
  write_json(path, body);
}

std::pair<Manifest, JoinLabels> manifest_of(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("no manifest given (--manifest)");
  return load_manifest(cfg.manifest);
}

JoinLabels labels_for(const RunConfig& cfg) { return manifest_of(cfg).second; }

std::vector<BobVocabulary> read_vocabs(const ArtifactPaths& a) {
  require(a.vocabs(), "vocab");
  return load_vocabs(a.vocabs());
}

std::vector<PageEmbeddings> read_embeddings(const ArtifactPaths& a) {
  require(a.embeddings(), "encode");
  return load_embedding_store(a.embeddings());
}

DistanceMatrix compute_matrix(const RunConfig& cfg, const ArtifactPaths& a) {
  if (is_bob_method(cfg.method))
    return vocab_distance_matrix(read_vocabs(a), cfg.method, cfg.threads, cfg.allow_rectangular);
  if (is_bow_method(cfg.method)) {
    require(a.histograms(cfg.codebook_source), "codebook");
    const auto hists = load_histograms(a.histograms(cfg.codebook_source));
    return histogram_distance_matrix(hists, cfg.method, cfg.threads);
  }
  return pooled_matrix(read_embeddings(a), cfg.method, cfg.threads);
}

DistanceMatrix read_matrix(const RunConfig& cfg, const ArtifactPaths& a, Method m) {
  const auto p = a.distances(m, cfg.codebook_source);
  require(p, ("dist --method " + to_string(m)).c_str());
  return load_distance_matrix(p);
}

MetricsReport evaluate_named(const DistanceMatrix& m, const JoinLabels& labels, std::span<const int> ks,
                             const std::string& name) {
  MetricsReport r = evaluate(m, labels, ks);
  r.method = name;
  return r;
}

std::string method_label(Method m, CodebookSource s) {
  return is_bow_method(m) ? to_string(m) + " (" + to_string(s) + ")" : to_string(m);
}

}  // namespace

int cmd_preprocess(const RunConfig& cfg) {
  const auto [manifest, labels] = manifest_of(cfg);
  const auto pages = preprocess_pages(manifest, cfg.extraction, cfg.threads);
  const ArtifactPaths a{cfg.out_dir};
  save_patch_store(a.patches(), pages, {{"extraction", cfg.extraction}});

  std::size_t excluded = 0, patches = 0;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& p : pages) {
    excluded += p.excluded;
    patches += p.patches.size();
    report.push_back(p.stats);
    if (p.excluded)
      std::cout << "excluded " << p.stats.page_id << ": " << p.stats.n_patches << " patches\n";
  }
  std::cout << pages.size() << " pages, " << patches << " patches, " << excluded << " excluded\n";
  write_summary(a.patches(), cfg, {cfg.manifest},
                {{"pages", pages.size()}, {"patches", patches}, {"excluded", excluded}, {"stats", report}});
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  require(a.patches(), "preprocess");
  const auto pages = load_patch_store(a.patches());
  const auto seed = derive_seed(cfg.seed, "train");
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(pages, cfg.train, cfg.arch, seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(a.encoder(), r.params, {{"train", cfg.train}, {"config_hash", cfg.hash()}});
  std::ofstream(a.train_log()) << r.log.to_jsonl();
  std::cout << "trained on " << r.log.n_training_patches << " patches, " << r.log.epochs.size()
            << " epochs (best " << r.log.best_epoch << ", recon "
            << r.log.epochs[static_cast<std::size_t>(r.log.best_epoch - 1)].recon << "), " << secs
            << " s\n";
  write_summary(a.encoder(), cfg, {a.patches()},
                {{"epochs", r.log.epochs.size()},
                 {"best_epoch", r.log.best_epoch},
                 {"early_stopped", r.log.early_stopped},
                 {"n_training_patches", r.log.n_training_patches},
                 {"parameters", r.params.parameter_count()},
                 {"seconds", secs}});
  return 0;
}

int cmd_encode(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  require(a.patches(), "preprocess");
  require(a.encoder(), "train");
  const auto params = load_checkpoint(a.encoder());
  const auto pages = load_patch_store(a.patches());
  const auto embs = encode_pages(params, pages);
  save_embedding_store(a.embeddings(), embs, {{"config_hash", cfg.hash()}});
  std::size_t n = 0;
  for (const auto& p : embs) n += p.embeddings.size();
  std::cout << "encoded " << n << " components on " << embs.size() << " pages (d=" << params.arch.d << ")\n";
  write_summary(a.embeddings(), cfg, {a.patches(), a.encoder()}, {{"pages", embs.size()}, {"embeddings", n}});
  return 0;
}

int cmd_vocab(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto embs = read_embeddings(a);
  const auto vocabs = build_vocabs(embs, cfg.kmeans, cfg.seed, cfg.threads);
  save_vocabs(a.vocabs(), vocabs);
  double qe = 0.0;
  for (const auto& v : vocabs) qe += v.quant_error;
  qe /= static_cast<double>(std::max<std::size_t>(1, vocabs.size()));
  std::cout << vocabs.size() << " vocabularies, K=" << cfg.kmeans.K << ", mean quantization error " << qe << "\n";
  write_summary(a.vocabs(), cfg, {a.embeddings()},
                {{"pages", vocabs.size()}, {"K", cfg.kmeans.K}, {"mean_quant_error", qe}});
  return 0;
}

int cmd_codebook(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  std::vector<BobVocabulary> vocabs;
  std::vector<PageEmbeddings> embs;
  std::filesystem::path input;
  if (cfg.codebook_source == CodebookSource::kCentroids) {
    vocabs = read_vocabs(a);
    input = a.vocabs();
  } else {
    embs = read_embeddings(a);
    input = a.embeddings();
  }
  const auto model = build_bow(vocabs, embs, cfg.codebook_source, cfg.K_g,
                               derive_seed(cfg.seed, "codebook"), cfg.kmeans);
  save_codebook(a.codebook(cfg.codebook_source), model.codebook);
  save_histograms(a.histograms(cfg.codebook_source), model.histograms);
  std::cout << "codebook K_g=" << cfg.K_g << " from " << to_string(cfg.codebook_source) << ", "
            << model.histograms.size() << " histograms\n";
  write_summary(a.codebook(cfg.codebook_source), cfg, {input},
                {{"K_g", cfg.K_g}, {"source", to_string(cfg.codebook_source)}});
  return 0;
}

int cmd_dist(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto t0 = std::chrono::steady_clock::now();
  const DistanceMatrix m = compute_matrix(cfg, a);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto path = a.distances(cfg.method, cfg.codebook_source);
  save_distance_matrix(path, m);
  std::cout << to_string(cfg.method) << ": " << m.size() << "x" << m.size() << " in " << secs << " s\n";
  write_summary(path, cfg, {}, {{"method", to_string(cfg.method)}, {"N", m.size()}, {"seconds", secs}});
  return 0;
}

int cmd_retrieve(const RunConfig& cfg, const std::string& query, std::size_t top) {
  const ArtifactPaths a{cfg.out_dir};
  const auto m = read_matrix(cfg, a, cfg.method);
  const auto r = rank(query, m);
  for (std::size_t i = 0; i < std::min(top, r.ranked.size()); ++i)
    std::printf("%3zu  %-24s %.6f\n", i + 1, r.ranked[i].c_str(), r.distances[i]);
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto labels = labels_for(cfg);
  const auto m = read_matrix(cfg, a, cfg.method);
  const auto rep = evaluate_named(m, labels, cfg.ks, method_label(cfg.method, cfg.codebook_source));
  std::cout << format_metrics_table(std::span(&rep, 1));
  write_json(a.metrics(cfg.method, cfg.codebook_source), rep);
  return 0;
}

int cmd_rerank(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto labels = labels_for(cfg);
  const auto bow = read_matrix(cfg, a, Method::kBowCosine);
  const auto vocabs = read_vocabs(a);
  const auto rankings = rerank_all(vocabs, bow, cfg.M);
  MetricsReport rep = evaluate_rankings(rankings, labels, cfg.ks);
  rep.method = "bow-cosine (" + to_string(cfg.codebook_source) + ") -> ot (M=" + std::to_string(cfg.M) + ")";
  std::cout << format_metrics_table(std::span(&rep, 1));
  write_json(a.dir / ("metrics_rerank_M" + std::to_string(cfg.M) + ".json"), rep);
  return 0;
}

int cmd_separation(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto labels = labels_for(cfg);
  const auto m = read_matrix(cfg, a, cfg.method);
  SeparationReport rep = separation(m, labels);
  rep.method = method_label(cfg.method, cfg.codebook_source);
  std::cout << format_separation_table(std::span(&rep, 1));
  const std::string suffix = is_bow_method(cfg.method) ? "_" + to_string(cfg.codebook_source) : "";
  write_json(a.dir / ("separation_" + to_string(cfg.method) + suffix + ".json"), rep);
  return 0;
}

int cmd_synth(const RunConfig& cfg) {
  SynthConfig s = cfg.synth;
  const auto m = generate_synth(s, cfg.out_dir, cfg.threads);
  const auto hist = cluster_size_histogram(labels_of(m));
  std::cout << m.entries.size() << " pages in " << s.n_clusters << " clusters written to "
            << cfg.out_dir.string() << "\n";
  for (const auto& [size, count] : hist) std::cout << "  clusters of size " << size << ": " << count << "\n";
  return 0;
}

int cmd_profile(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto vocabs = read_vocabs(a);
  const auto bow = read_matrix(cfg, a, Method::kBowCosine);
  const auto hung = read_matrix(cfg, a, Method::kHungarian);
  std::vector<std::size_t> queries(bow.size());
  for (std::size_t i = 0; i < queries.size(); ++i) queries[i] = i;
  const auto rows = profile(vocabs, bow, hung, queries, cfg.M);
  nlohmann::json out = nlohmann::json::array();
  std::printf("%-36s %12s  %s\n", "method", "ms/query", "scales with N");
  for (const auto& r : rows) {
    std::printf("%-36s %12.4f  %s\n", r.method.c_str(), r.median_ms, r.scales_with_n ? "yes" : "no");
    out.push_back(r);
  }
  write_json(a.dir / "profile.json", out);
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  const ArtifactPaths a{cfg.out_dir};
  const auto labels = labels_for(cfg);
  std::vector<MetricsReport> rows;

  // Re-runs the stages downstream of the swept parameter in memory.
  auto score = [&](const std::vector<BobVocabulary>& vocabs, const std::string& name) {
    const auto m = vocab_distance_matrix(vocabs, is_bob_method(cfg.method) ? cfg.method : Method::kChamfer,
                                         cfg.threads, cfg.allow_rectangular);
    rows.push_back(evaluate_named(m, labels, cfg.ks, name));
  };
  auto from_patches = [&](const std::vector<PageExtraction>& pages, const TrainConfig& tc,
                          const EncoderArch& arch, const std::string& name) {
    const auto r = train(pages, tc, arch, derive_seed(cfg.seed, "train"));
    score(build_vocabs(encode_pages(r.params, pages), cfg.kmeans, cfg.seed, cfg.threads), name);
  };

  if (cfg.ablate == "K") {
    const auto embs = read_embeddings(a);
    for (int K : {8, 16, 20, 32, 64}) {
      KMeansConfig kc = cfg.kmeans;
      kc.K = K;
      score(build_vocabs(embs, kc, cfg.seed, cfg.threads), "K=" + std::to_string(K));
    }
  } else if (cfg.ablate == "d") {
    require(a.patches(), "preprocess");
    const auto pages = load_patch_store(a.patches());
    for (int d : {64, 128, 256}) {
      EncoderArch arch = cfg.arch;
      arch.d = d;
      from_patches(pages, cfg.train, arch, "d=" + std::to_string(d));
    }
  } else if (cfg.ablate == "sparsity") {
    require(a.patches(), "preprocess");
    const auto pages = load_patch_store(a.patches());
    for (bool on : {true, false}) {
      TrainConfig tc = cfg.train;
      tc.sparsity_enabled = on;
      from_patches(pages, tc, cfg.arch, on ? "sparsity on" : "sparsity off");
    }
  } else {
    const auto [manifest, lab] = manifest_of(cfg);
    for (auto mode : {NormalizationMode::kPreserved, NormalizationMode::kStretched}) {
      ExtractionConfig ec = cfg.extraction;
      ec.normalization_mode = mode;
      from_patches(preprocess_pages(manifest, ec, cfg.threads), cfg.train, cfg.arch, to_string(mode));
    }
  }

  std::cout << format_metrics_table(rows);
  std::string jsonl;
  for (const auto& r : rows) jsonl += nlohmann::json(r).dump() + "\n";
  std::ofstream(a.dir / ("ablate_" + cfg.ablate + ".jsonl")) << jsonl;
  return 0;
}

}  // namespace bob
