#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ptsynth/embedding.hpp"

namespace ptsynth {

struct SimHistogram {
  std::vector<double> bin_edges;  // bins + 1 edges spanning [-1, 1]
  std::vector<std::uint64_t> counts;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::uint64_t total = 0;
};

// Accumulates cosine values into `bins` equal-width bins over [-1, 1]; the
// last bin is closed on the right so 1.0 is counted.
class HistogramBuilder {
 public:
  explicit HistogramBuilder(std::size_t bins);
  void add(double value);
  SimHistogram finish() const;

 private:
  std::size_t bins_;
  std::vector<std::uint64_t> counts_;
  double sum_ = 0;
  double sum_sq_ = 0;
  std::uint64_t total_ = 0;
};

struct SimilarityReport {
  SimHistogram image_text;
  SimHistogram text_text_paired;
  SimHistogram text_text_unpaired;
};

inline constexpr std::size_t kDefaultBins = 100;
inline constexpr std::size_t kDefaultUnpairedSamples = 50000;

// pairing[r] is the image id of text row r.
SimilarityReport similarity_histograms(const FeatureMatrix& images, const FeatureMatrix& texts,
                                       const std::vector<std::string>& pairing,
                                       std::size_t bins = kDefaultBins,
                                       std::size_t unpaired_samples = kDefaultUnpairedSamples,
                                       std::uint64_t seed = 0);

// Text ids of the form "<image_id>#<k>" give the pairing; other ids pair with
// an image of the same id.
std::vector<std::string> pairing_from_ids(const FeatureMatrix& texts);

void write_histogram_csv(std::ostream& out, const SimHistogram& h);
std::string report_summary_json(const SimilarityReport& r);

}  // namespace ptsynth
