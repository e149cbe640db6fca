#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ptsynth {

inline constexpr double kUnitTolerance = 1e-6;
inline constexpr double kZeroNormThreshold = 1e-12;

// A single embedding. Entries are finite; `is_unit()` is set only when the
// vector's L2 norm is within kUnitTolerance of 1.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(std::vector<float> values, bool unit = false);

  std::size_t dim() const noexcept { return values_.size(); }
  bool is_unit() const noexcept { return unit_; }
  std::span<const float> values() const noexcept { return values_; }
  operator std::span<const float>() const noexcept { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<float> values_;
  bool unit_ = false;
};

// Dense row-major N x D matrix of embeddings with unique string ids.
// Immutable after construction.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t dim, std::vector<float> data, std::vector<std::string> ids,
                bool unit_normalized);

  static FeatureMatrix from_rows(const std::vector<std::vector<float>>& rows,
                                 std::vector<std::string> ids, bool unit_normalized);

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return ids_.empty(); }
  bool unit_normalized() const noexcept { return unit_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  FeatureVector vector(std::size_t i) const;
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::span<const float> data() const noexcept { return data_; }
  double row_norm(std::size_t i) const { return norms_[i]; }
  std::optional<std::size_t> find(const std::string& id) const;

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
  std::vector<double> norms_;
  std::unordered_map<std::string, std::size_t> index_;
  bool unit_ = false;
};

struct TopKResult {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

// Dot products accumulate in double regardless of the float storage.
double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

FeatureVector normalize(std::span<const float> v);
double cosine_sim(std::span<const float> a, std::span<const float> b);

FeatureMatrix normalize_rows(const FeatureMatrix& m);

// Exact top-K by cosine similarity. Scores are non-increasing; equal scores
// are ordered by ascending row index.
TopKResult top_k(std::span<const float> query, const FeatureMatrix& corpus, std::size_t k);

// One top_k per query row; queries run in parallel, output is schedule-independent.
std::vector<TopKResult> top_k_batch(const FeatureMatrix& queries, const FeatureMatrix& corpus,
                                    std::size_t k, unsigned threads = 0);

}  // namespace ptsynth
