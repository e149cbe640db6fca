#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ptsynth/embedding.hpp"

namespace ptsynth {

// A clustered toy joint embedding space. Images scatter around cluster
// centroids. Every word has a semantic vector near its cluster's centroid;
// its text-encoder embedding (the lexicon row) mixes that semantic vector
// with a shared "text modality" direction, so encoded captions live in a
// narrow cone, as real text-encoder outputs do.
struct SyntheticWorldConfig {
  std::size_t dim = 64;
  std::size_t clusters = 4;
  std::size_t images_per_cluster = 50;
  std::size_t words_per_cluster = 3;   // per category
  std::size_t generic_numerals = 4;    // numerals/quantifiers shared by all clusters
  double image_noise = 0.6;            // relative to the unit centroid
  double word_noise = 0.3;
  double text_gap = 0.8;               // weight of the shared text direction
  std::uint64_t seed = 0;
};

struct SyntheticWorld {
  FeatureMatrix images;             // unit rows, ids "img_0000", ...
  std::vector<std::size_t> labels;  // cluster per image row
  std::vector<std::vector<float>> centroids;
  std::map<std::string, std::vector<std::string>> vocabulary;  // category -> words
  std::map<std::string, std::size_t> word_cluster;  // generic words are absent
  FeatureMatrix lexicon;            // word -> text embedding (unit)
  std::vector<float> text_direction;
};

SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& cfg);

// Vocabulary JSON in the format load_vocabulary reads.
std::string vocabulary_json(const SyntheticWorld& world);

}  // namespace ptsynth
