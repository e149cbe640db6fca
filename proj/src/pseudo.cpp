#include "ptsynth/pseudo.hpp"

#include <charconv>
#include <cmath>
#include <json.hpp>
#include <ostream>

#include "ptsynth/error.hpp"
#include "ptsynth/rng.hpp"

namespace ptsynth {

namespace {

// Sampling decisions use a stream disjoint from the Gaussian draw streams.
constexpr std::uint64_t kSampleStreamTag = std::uint64_t{1} << 63;

void append_float(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), static_cast<float>(v));
  out.append(buf, res.ptr);
}

}  // namespace

void PerturbConfig::validate() const {
  if (!std::isfinite(xi) || xi < 0) throw Error(ErrorCode::InvalidArgument, "xi must be finite and >= 0");
}

FeatureVector gaussian_pseudo_feature(std::string_view image_id, std::span<const float> image,
                                      const PerturbConfig& cfg, std::uint64_t draw_index) {
  cfg.validate();
  const double fnorm = l2_norm(image);
  if (fnorm < kZeroNormThreshold) throw Error(ErrorCode::ZeroVector, "image feature is zero");

  KeyedStream stream(stream_key(cfg.seed, image_id), draw_index);
  std::vector<double> eps(image.size());
  double enorm2 = 0;
  for (auto& e : eps) {
    e = stream.normal();
    enorm2 += e * e;
  }
  const double scale = cfg.xi * fnorm / std::sqrt(enorm2);
  std::vector<float> perturbed(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    perturbed[i] = static_cast<float>(double(image[i]) + scale * eps[i]);
  }
  // Same normalization path as normalize(image), so xi = 0 reproduces it exactly.
  return normalize(perturbed);
}

void MixingSchedule::validate() const {
  if (!(floor >= 0.0 && floor <= 1.0)) throw Error(ErrorCode::InvalidArgument, "floor must be in [0,1]");
  if (total_iters == 0) throw Error(ErrorCode::InvalidArgument, "total_iters must be >= 1");
  if (kind == ScheduleKind::Step && (switch_point == 0 || switch_point > total_iters)) {
    throw Error(ErrorCode::InvalidArgument, "step switch_point must be in [1, total_iters]");
  }
}

double schedule_value(const MixingSchedule& s, std::uint64_t t) {
  s.validate();
  if (t > s.total_iters) {
    throw Error(ErrorCode::IterOutOfRange,
                "t=" + std::to_string(t) + " > total_iters=" + std::to_string(s.total_iters));
  }
  if (s.kind == ScheduleKind::Step) return t < s.switch_point ? 1.0 : s.floor;
  const double frac = static_cast<double>(t) / static_cast<double>(s.total_iters);
  return 1.0 - (1.0 - s.floor) * frac;
}

std::string_view to_string(PairSource s) {
  switch (s) {
    case PairSource::Gaussian: return "gaussian";
    case PairSource::Retrieval: return "retrieval";
    case PairSource::Clo: return "clo";
  }
  return "gaussian";
}

PairSource pair_source_from_string(std::string_view s) {
  if (s == "gaussian") return PairSource::Gaussian;
  if (s == "retrieval") return PairSource::Retrieval;
  if (s == "clo") return PairSource::Clo;
  throw Error(ErrorCode::InvalidArgument, "unknown pair source '" + std::string(s) + "'");
}

PseudoPair sample_pair(std::string_view image_id, std::span<const float> image,
                       std::span<const PseudoCaption> pool, PairSource pool_source,
                       const MixingSchedule& schedule, std::uint64_t t, const PerturbConfig& cfg) {
  const double p_gauss = schedule_value(schedule, t);
  KeyedStream stream(stream_key(cfg.seed, image_id), kSampleStreamTag | t);
  const double u = stream.uniform();

  PseudoPair pair;
  pair.image_id = std::string(image_id);
  if (pool.empty() || u < p_gauss) {
    pair.source = PairSource::Gaussian;
    pair.feature = gaussian_pseudo_feature(image_id, image, cfg, t);
    return pair;
  }
  const auto& pick = pool[stream.below(pool.size())];
  if (!pick.embedding) throw Error(ErrorCode::InvalidArgument, "pool caption has no embedding");
  pair.source = pool_source;
  pair.feature = pick.embedding->is_unit() ? *pick.embedding : normalize(*pick.embedding);
  pair.score = pick.score;
  pair.caption = pick.text;
  return pair;
}

std::string pair_to_json_line(const PseudoPair& p) {
  std::string out = "{\"image_id\":";
  out += nlohmann::json(p.image_id).dump();
  out += ",\"source\":\"";
  out += to_string(p.source);
  out += "\",\"score\":";
  if (p.score) {
    append_float(out, *p.score);
  } else {
    out += "null";
  }
  out += ",\"caption\":";
  out += p.caption ? nlohmann::json(*p.caption).dump() : "null";
  out += ",\"feature\":[";
  const auto v = p.feature.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    append_float(out, v[i]);
  }
  out += "]}";
  return out;
}

PseudoPair pair_from_json_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  try {
    PseudoPair p;
    p.image_id = j.at("image_id").get<std::string>();
    p.source = pair_source_from_string(j.at("source").get<std::string>());
    if (!j.at("score").is_null()) p.score = j["score"].get<double>();
    if (!j.at("caption").is_null()) p.caption = j["caption"].get<std::string>();
    std::vector<float> f;
    for (const auto& x : j.at("feature")) f.push_back(static_cast<float>(x.get<double>()));
    const bool unit = std::abs(l2_norm(f) - 1.0) <= kUnitTolerance;
    p.feature = FeatureVector(std::move(f), unit);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
}

void write_pairs_jsonl(std::ostream& out, std::span<const PseudoPair> pairs) {
  for (const auto& p : pairs) out << pair_to_json_line(p) << '\n';
}

}  // namespace ptsynth
