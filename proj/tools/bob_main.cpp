// bob: command-line driver for the bag-of-prototypes pipeline.
//
//   bob synth      --out corpus
//   bob preprocess --manifest corpus/manifest.csv --out run
//   bob train | encode | vocab | codebook | dist | eval ... --out run
//
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bob/error.hpp"
#include "bob/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string manifest;
  std::string out;
  std::string method;
  std::string codebook_source;
  std::optional<int> K, Kg, d, threads, epochs;
  std::optional<std::size_t> M, max_patches;
  std::optional<std::uint64_t> seed;
  // synth
  std::optional<int> clusters, pages_min, pages_max, glyphs;
  std::optional<double> style_jitter;
  // retrieve / ablate
  std::string query;
  std::size_t top = 10;
  std::string sweep;
};

bob::RunConfig resolve(const Overrides& o) {
  bob::RunConfig c = o.config.empty() ? bob::RunConfig{} : bob::load_run_config(o.config);
  if (!o.manifest.empty()) c.manifest = o.manifest;
  if (!o.out.empty()) c.out_dir = o.out;
  if (!o.method.empty()) c.method = bob::method_from_string(o.method);
  if (!o.codebook_source.empty()) c.codebook_source = bob::codebook_source_from_string(o.codebook_source);
  if (o.K) c.kmeans.K = *o.K;
  if (o.Kg) c.K_g = *o.Kg;
  if (o.d) c.arch.d = *o.d;
  if (o.M) c.M = *o.M;
  if (o.threads) c.threads = *o.threads;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.max_patches) c.train.max_patches_per_image = *o.max_patches;
  if (o.seed) {
    c.seed = *o.seed;
    c.synth.seed = *o.seed;
  }
  if (o.clusters) c.synth.n_clusters = *o.clusters;
  if (o.pages_min) c.synth.pages_min = *o.pages_min;
  if (o.pages_max) c.synth.pages_max = *o.pages_max;
  if (o.glyphs) c.synth.glyphs_per_page = *o.glyphs;
  if (o.style_jitter) c.synth.style_jitter = *o.style_jitter;
  if (!o.sweep.empty()) c.ablate = o.sweep;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bag-of-prototypes page retrieval"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("--config", o.config, "RunConfig JSON");
  app.add_option("--manifest", o.manifest, "labels manifest CSV (page_id,image_path,cluster_id)");
  app.add_option("--out", o.out, "artifact directory");
  app.add_option("--method", o.method, "chamfer|hungarian|ot|bow-l2|bow-cosine|bow-chi2|bow-hellinger|meanpool|maxpool");
  app.add_option("--codebook-source", o.codebook_source, "centroids|raw");
  app.add_option("--K", o.K, "prototypes per page");
  app.add_option("--Kg", o.Kg, "global codebook size");
  app.add_option("--d", o.d, "latent dimension");
  app.add_option("--M", o.M, "two-stage shortlist size");
  app.add_option("--seed", o.seed, "run seed");
  app.add_option("--threads", o.threads, "worker cap");
  app.add_option("--epochs", o.epochs, "training epochs");
  app.add_option("--max-patches", o.max_patches, "training patches sampled per page");

  auto* synth = app.add_subcommand("synth", "generate a synthetic scribe corpus");
  synth->add_option("--clusters", o.clusters, "number of scribes");
  synth->add_option("--pages-min", o.pages_min, "fewest pages per scribe");
  synth->add_option("--pages-max", o.pages_max, "most pages per scribe");
  synth->add_option("--glyphs", o.glyphs, "glyphs per page");
  synth->add_option("--style-jitter", o.style_jitter, "per-scribe glyph spread");

  auto* preprocess = app.add_subcommand("preprocess", "binarize pages and extract patches");
  auto* train = app.add_subcommand("train", "train the autoencoder");
  auto* encode = app.add_subcommand("encode", "embed every patch");
  auto* vocab = app.add_subcommand("vocab", "per-page k-means prototypes");
  auto* codebook = app.add_subcommand("codebook", "global BoW codebook and histograms");
  auto* dist = app.add_subcommand("dist", "pairwise distance matrix for --method");
  auto* retrieve = app.add_subcommand("retrieve", "rank the gallery for one query");
  retrieve->add_option("--query", o.query, "query page id")->required();
  retrieve->add_option("--top", o.top, "results to print");
  auto* eval = app.add_subcommand("eval", "retrieval metrics for --method");
  auto* rerank = app.add_subcommand("rerank", "two-stage BoW-cosine -> OT retrieval");
  auto* separation = app.add_subcommand("separation", "intra/inter distance separation");
  auto* profile = app.add_subcommand("profile", "per-query timing");
  auto* ablate = app.add_subcommand("ablate", "sweep K, d, sparsity or normalization");
  ablate->add_option("--sweep", o.sweep, "K|d|sparsity|normalization");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const bob::RunConfig cfg = resolve(o);
    if (synth->parsed()) return bob::cmd_synth(cfg);
    if (preprocess->parsed()) return bob::cmd_preprocess(cfg);
    if (train->parsed()) return bob::cmd_train(cfg);
    if (encode->parsed()) return bob::cmd_encode(cfg);
    if (vocab->parsed()) return bob::cmd_vocab(cfg);
    if (codebook->parsed()) return bob::cmd_codebook(cfg);
    if (dist->parsed()) return bob::cmd_dist(cfg);
    if (retrieve->parsed()) return bob::cmd_retrieve(cfg, o.query, o.top);
    if (eval->parsed()) return bob::cmd_eval(cfg);
    if (rerank->parsed()) return bob::cmd_rerank(cfg);
    if (separation->parsed()) return bob::cmd_separation(cfg);
    if (profile->parsed()) return bob::cmd_profile(cfg);
    if (ablate->parsed()) return bob::cmd_ablate(cfg);
  } catch (const bob::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const bob::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
