#include "ptsynth/synthetic_world.hpp"

#include <cmath>
#include <json.hpp>

#include "ptsynth/error.hpp"
#include "ptsynth/rng.hpp"
#include "ptsynth/vocab.hpp"

namespace ptsynth {

namespace {

std::vector<double> gaussian(KeyedStream& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return v;
}

void make_unit(std::vector<double>& v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
}

void remove_component(std::vector<double>& v, const std::vector<double>& unit_dir) {
  double p = 0;
  for (std::size_t i = 0; i < v.size(); ++i) p += v[i] * unit_dir[i];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * unit_dir[i];
}

std::vector<float> to_float(const std::vector<double>& v) {
  return {v.begin(), v.end()};
}

// Lowercase letters only, so generated words pass the plain-word filter.
std::string letters(std::size_t value, std::size_t width) {
  std::string s(width, 'a');
  for (std::size_t i = width; i-- > 0;) {
    s[i] = static_cast<char>('a' + value % 26);
    value /= 26;
  }
  return s;
}

}  // namespace

SyntheticWorld make_synthetic_world(const SyntheticWorldConfig& cfg) {
  if (cfg.dim < 4 || cfg.clusters == 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic world needs dim >= 4 and clusters >= 1");
  }
  KeyedStream rng(splitmix64(cfg.seed), 0x5157);
  SyntheticWorld w;

  // Text modality direction, kept orthogonal to all semantic content.
  auto text_dir = gaussian(rng, cfg.dim);
  make_unit(text_dir);
  w.text_direction = to_float(text_dir);

  std::vector<std::vector<double>> centroids;
  for (std::size_t k = 0; k < cfg.clusters; ++k) {
    auto c = gaussian(rng, cfg.dim);
    remove_component(c, text_dir);
    make_unit(c);
    centroids.push_back(c);
    w.centroids.push_back(to_float(c));
  }

  std::vector<float> image_data;
  std::vector<std::string> image_ids;
  const std::size_t n_images = cfg.clusters * cfg.images_per_cluster;
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::size_t k = i % cfg.clusters;
    auto g = gaussian(rng, cfg.dim);
    make_unit(g);
    std::vector<double> v(cfg.dim);
    for (std::size_t d = 0; d < cfg.dim; ++d) v[d] = centroids[k][d] + cfg.image_noise * g[d];
    remove_component(v, text_dir);
    make_unit(v);
    for (double x : v) image_data.push_back(static_cast<float>(x));
    image_ids.push_back("img_" + letters(i, 0).append(std::to_string(10000 + i).substr(1)));
    w.labels.push_back(k);
  }
  w.images = normalize_rows(FeatureMatrix(cfg.dim, std::move(image_data), std::move(image_ids), false));

  std::vector<float> lex_data;
  std::vector<std::string> lex_ids;
  const double sem_weight = std::sqrt(std::max(0.0, 1.0 - cfg.text_gap * cfg.text_gap));
  auto add_word = [&](const std::string& category, const std::string& word,
                      std::vector<double> semantic) {
    remove_component(semantic, text_dir);
    make_unit(semantic);
    std::vector<double> e(cfg.dim);
    for (std::size_t d = 0; d < cfg.dim; ++d) e[d] = cfg.text_gap * text_dir[d] + sem_weight * semantic[d];
    make_unit(e);
    for (double x : e) lex_data.push_back(static_cast<float>(x));
    lex_ids.push_back(word);
    w.vocabulary[category].push_back(word);
  };

  const std::pair<std::string_view, std::string_view> clustered[] = {
      {category::kNoun, "noun"}, {category::kVerb, "verb"}, {category::kAdjective, "adj"}};
  for (const auto& [cat, prefix] : clustered) {
    for (std::size_t k = 0; k < cfg.clusters; ++k) {
      for (std::size_t j = 0; j < cfg.words_per_cluster; ++j) {
        const std::string word = std::string(prefix) + letters(k, 2) + letters(j, 2);
        auto g = gaussian(rng, cfg.dim);
        make_unit(g);
        std::vector<double> s(cfg.dim);
        for (std::size_t d = 0; d < cfg.dim; ++d) s[d] = centroids[k][d] + cfg.word_noise * g[d];
        add_word(std::string(cat), word, std::move(s));
        w.word_cluster[word] = k;
      }
    }
  }
  for (std::size_t j = 0; j < cfg.generic_numerals; ++j) {
    add_word(std::string(category::kNumeralQuantifier), "num" + letters(j, 2), gaussian(rng, cfg.dim));
  }
  w.lexicon = FeatureMatrix(cfg.dim, std::move(lex_data), std::move(lex_ids), true);
  return w;
}

std::string vocabulary_json(const SyntheticWorld& world) {
  return nlohmann::json(world.vocabulary).dump(2);
}

}  // namespace ptsynth
