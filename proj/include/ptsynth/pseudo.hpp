#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ptsynth/embedding.hpp"
#include "ptsynth/vocab.hpp"

namespace ptsynth {

struct PerturbConfig {
  double xi = 3.0;  // noise level relative to the image feature norm
  std::uint64_t seed = 0;

  void validate() const;
};

// normalize(f + xi * |f| * eps / |eps|) with eps ~ N(0, I) drawn from the
// keyed stream (seed, image_id, draw_index).
FeatureVector gaussian_pseudo_feature(std::string_view image_id, std::span<const float> image,
                                      const PerturbConfig& cfg, std::uint64_t draw_index);

enum class ScheduleKind { Step, Linear };

// Probability of drawing a Gaussian-perturbation pair at iteration t.
// Starts at 1 and falls to `floor`: at `switch_point` for Step, linearly
// over [0, total_iters] for Linear.
struct MixingSchedule {
  ScheduleKind kind = ScheduleKind::Linear;
  std::uint64_t total_iters = 1000;
  std::uint64_t switch_point = 1;
  double floor = 0.0;

  void validate() const;
};

double schedule_value(const MixingSchedule& s, std::uint64_t t);

enum class PairSource { Gaussian, Retrieval, Clo };

std::string_view to_string(PairSource s);
PairSource pair_source_from_string(std::string_view s);

struct PseudoPair {
  std::string image_id;
  FeatureVector feature;  // unit-norm
  PairSource source = PairSource::Gaussian;
  std::optional<double> score;
  std::optional<std::string> caption;
};

// With probability schedule_value(t) a Gaussian pair (draw index t), else a
// uniformly chosen pool caption tagged `pool_source`. An empty pool forces the
// Gaussian branch. Randomness is keyed by (seed, image_id, t).
PseudoPair sample_pair(std::string_view image_id, std::span<const float> image,
                       std::span<const PseudoCaption> pool, PairSource pool_source,
                       const MixingSchedule& schedule, std::uint64_t t, const PerturbConfig& cfg);

// One JSON object per line:
// {"image_id":..,"source":..,"score":..|null,"caption":..|null,"feature":[..]}
std::string pair_to_json_line(const PseudoPair& p);
PseudoPair pair_from_json_line(std::string_view line);
void write_pairs_jsonl(std::ostream& out, std::span<const PseudoPair> pairs);

}  // namespace ptsynth
