#include "ptsynth/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <json.hpp>
#include <ostream>

#include "ptsynth/error.hpp"
#include "ptsynth/rng.hpp"

namespace ptsynth {

HistogramBuilder::HistogramBuilder(std::size_t bins) : bins_(bins), counts_(bins, 0) {
  if (bins_ == 0) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
}

void HistogramBuilder::add(double value) {
  const double v = std::clamp(value, -1.0, 1.0);
  auto bin = static_cast<std::size_t>((v + 1.0) / 2.0 * static_cast<double>(bins_));
  counts_[std::min(bin, bins_ - 1)]++;
  sum_ += v;
  sum_sq_ += v * v;
  ++total_;
}

SimHistogram HistogramBuilder::finish() const {
  SimHistogram h;
  h.bin_edges.resize(bins_ + 1);
  for (std::size_t b = 0; b <= bins_; ++b) {
    h.bin_edges[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins_);
  }
  h.counts = counts_;
  h.total = total_;
  if (total_ > 0) {
    const double n = static_cast<double>(total_);
    h.mean = sum_ / n;
    h.std = std::sqrt(std::max(0.0, sum_sq_ / n - h.mean * h.mean));
  }
  return h;
}

SimilarityReport similarity_histograms(const FeatureMatrix& images, const FeatureMatrix& texts,
                                       const std::vector<std::string>& pairing, std::size_t bins,
                                       std::size_t unpaired_samples, std::uint64_t seed) {
  if (pairing.size() != texts.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "pairing must have one image id per text row");
  }
  if (unpaired_samples < 1) throw Error(ErrorCode::InvalidArgument, "unpaired_samples must be >= 1");
  if (images.dim() != texts.dim()) throw Error(ErrorCode::DimMismatch, "image/text dimension");

  // Image row per text, and the texts grouped by image (ordered by image row).
  std::vector<std::size_t> image_of(texts.rows());
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < texts.rows(); ++r) {
    auto row = images.find(pairing[r]);
    if (!row) throw Error(ErrorCode::UnknownImageId, pairing[r]);
    image_of[r] = *row;
    groups[*row].push_back(r);
  }

  SimilarityReport out;
  HistogramBuilder image_text(bins), paired(bins), unpaired(bins);
  for (std::size_t r = 0; r < texts.rows(); ++r) {
    image_text.add(cosine_sim(texts.row(r), images.row(image_of[r])));
  }

  bool any_pair = false;
  for (const auto& [_, members] : groups) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        paired.add(cosine_sim(texts.row(members[a]), texts.row(members[b])));
        any_pair = true;
      }
    }
  }
  if (!any_pair) throw Error(ErrorCode::DegeneratePairing, "no image has two or more texts");
  if (groups.size() < 2) throw Error(ErrorCode::DegeneratePairing, "unpaired sampling needs two images");

  KeyedStream rng(stream_key(seed, "unpaired"), 0);
  for (std::size_t s = 0; s < unpaired_samples; ++s) {
    std::size_t a, b;
    do {
      a = rng.below(texts.rows());
      b = rng.below(texts.rows());
    } while (image_of[a] == image_of[b]);
    unpaired.add(cosine_sim(texts.row(a), texts.row(b)));
  }

  out.image_text = image_text.finish();
  out.text_text_paired = paired.finish();
  out.text_text_unpaired = unpaired.finish();
  return out;
}

std::vector<std::string> pairing_from_ids(const FeatureMatrix& texts) {
  std::vector<std::string> out;
  out.reserve(texts.rows());
  for (const auto& id : texts.ids()) {
    const auto hash = id.rfind('#');
    out.push_back(hash == std::string::npos ? id : id.substr(0, hash));
  }
  return out;
}

void write_histogram_csv(std::ostream& out, const SimHistogram& h) {
  out << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << h.bin_edges[b] << ',' << h.bin_edges[b + 1] << ',' << h.counts[b] << '\n';
  }
}

std::string report_summary_json(const SimilarityReport& r) {
  auto summary = [](const SimHistogram& h) {
    return nlohmann::json{{"pairs", h.total}, {"mean", h.mean}, {"std", h.std},
                          {"bins", h.counts.size()}};
  };
  nlohmann::json j{{"image_text", summary(r.image_text)},
                   {"text_text_paired", summary(r.text_text_paired)},
                   {"text_text_unpaired", summary(r.text_text_unpaired)}};
  return j.dump(2);
}

}  // namespace ptsynth
