// Writes a clustered toy corpus: images.emb, vocabulary.json, lexicon.emb and
// a run.toml that points the pipeline at them.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ptsynth/emb_io.hpp"
#include "ptsynth/error.hpp"
#include "ptsynth/synthetic_world.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic image/vocabulary corpus"};
  ptsynth::SyntheticWorldConfig cfg;
  std::string out = "synthetic";
  app.add_option("--out", out, "output directory");
  app.add_option("--dim", cfg.dim);
  app.add_option("--clusters", cfg.clusters);
  app.add_option("--per-cluster", cfg.images_per_cluster, "images per cluster");
  app.add_option("--words", cfg.words_per_cluster, "words per category per cluster");
  app.add_option("--image-noise", cfg.image_noise);
  app.add_option("--text-gap", cfg.text_gap, "weight of the shared text direction");
  app.add_option("--seed", cfg.seed);
  CLI11_PARSE(app, argc, argv);

  try {
    const std::filesystem::path dir(out);
    std::filesystem::create_directories(dir);
    const auto world = ptsynth::make_synthetic_world(cfg);
    ptsynth::save_embeddings(world.images, dir / "images.emb");
    ptsynth::save_embeddings(world.lexicon, dir / "lexicon.emb");
    std::ofstream(dir / "vocabulary.json") << ptsynth::vocabulary_json(world) << "\n";
    std::ofstream toml(dir / "run.toml");
    toml << "images = \"images.emb\"\n"
         << "vocabulary = \"vocabulary.json\"\n"
         << "provider = \"synthetic:lexicon.emb\"\n"
         << "output = \"run\"\n"
         << "k = 2\nm = 3\nseed = " << cfg.seed << "\n";
    if (!toml) throw ptsynth::Error(ptsynth::ErrorCode::IoError, "cannot write run.toml");
    std::cout << world.images.rows() << " images, " << world.lexicon.rows() << " words -> " << dir.string()
              << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
