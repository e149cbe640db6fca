#include "ptsynth/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "ptsynth/error.hpp"
#include "ptsynth/parallel.hpp"

namespace ptsynth {

namespace {

void check_finite(std::span<const float> values, const char* what) {
  for (float x : values) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteValue, what);
  }
}

// Total order used for retrieval: higher score first, then lower index.
struct Ranked {
  double score;
  std::size_t index;
};

bool ranks_before(const Ranked& a, const Ranked& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

}  // namespace

FeatureVector::FeatureVector(std::vector<float> values, bool unit)
    : values_(std::move(values)), unit_(unit) {
  if (values_.empty()) throw Error(ErrorCode::DimMismatch, "feature vector must have D >= 1");
  check_finite(values_, "feature vector has non-finite entries");
  if (unit_ && std::abs(l2_norm(values_) - 1.0) > kUnitTolerance) {
    throw Error(ErrorCode::InvalidArgument, "vector flagged unit is not unit-norm");
  }
}

FeatureMatrix::FeatureMatrix(std::size_t dim, std::vector<float> data,
                             std::vector<std::string> ids, bool unit_normalized)
    : dim_(dim), data_(std::move(data)), ids_(std::move(ids)), unit_(unit_normalized) {
  if (dim_ == 0) throw Error(ErrorCode::DimMismatch, "dimension must be >= 1");
  if (data_.size() != ids_.size() * dim_) {
    throw Error(ErrorCode::DimMismatch,
                "payload size " + std::to_string(data_.size()) + " != " +
                    std::to_string(ids_.size()) + " x " + std::to_string(dim_));
  }
  check_finite(data_, "matrix has non-finite entries");
  index_.reserve(ids_.size());
  norms_.resize(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate id '" + ids_[i] + "'");
    }
    norms_[i] = l2_norm(row(i));
    if (unit_ && std::abs(norms_[i] - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::InvalidArgument,
                  "row '" + ids_[i] + "' is not unit-norm but matrix is flagged unit");
    }
  }
}

FeatureMatrix FeatureMatrix::from_rows(const std::vector<std::vector<float>>& rows,
                                       std::vector<std::string> ids, bool unit_normalized) {
  if (rows.empty()) throw Error(ErrorCode::DimMismatch, "from_rows needs at least one row");
  const std::size_t dim = rows.front().size();
  std::vector<float> data;
  data.reserve(rows.size() * dim);
  for (const auto& r : rows) {
    if (r.size() != dim) throw Error(ErrorCode::DimMismatch, "ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return FeatureMatrix(dim, std::move(data), std::move(ids), unit_normalized);
}

FeatureVector FeatureMatrix::vector(std::size_t i) const {
  auto r = row(i);
  return FeatureVector(std::vector<float>(r.begin(), r.end()), unit_);
}

std::optional<std::size_t> FeatureMatrix::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimMismatch, "dot: dimension mismatch");
  const std::size_t n = a.size();
  double acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += double(a[i]) * double(b[i]);
    acc1 += double(a[i + 1]) * double(b[i + 1]);
    acc2 += double(a[i + 2]) * double(b[i + 2]);
    acc3 += double(a[i + 3]) * double(b[i + 3]);
  }
  for (; i < n; ++i) acc0 += double(a[i]) * double(b[i]);
  return (acc0 + acc1) + (acc2 + acc3);
}

double l2_norm(std::span<const float> v) { return std::sqrt(dot(v, v)); }

FeatureVector normalize(std::span<const float> v) {
  const double norm = l2_norm(v);
  if (!(norm >= kZeroNormThreshold)) throw Error(ErrorCode::ZeroVector, "cannot normalize");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(double(v[i]) / norm);
  return FeatureVector(std::move(out), true);
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < kZeroNormThreshold || nb < kZeroNormThreshold) {
    throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  }
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

FeatureMatrix normalize_rows(const FeatureMatrix& m) {
  std::vector<float> data;
  data.reserve(m.rows() * m.dim());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto v = normalize(m.row(i));
    data.insert(data.end(), v.values().begin(), v.values().end());
  }
  return FeatureMatrix(m.dim(), std::move(data), m.ids(), true);
}

TopKResult top_k(std::span<const float> query, const FeatureMatrix& corpus, std::size_t k) {
  if (k < 1 || k > corpus.rows()) {
    throw Error(ErrorCode::KOutOfRange, "K=" + std::to_string(k) + " with N=" +
                                            std::to_string(corpus.rows()));
  }
  if (query.size() != corpus.dim()) throw Error(ErrorCode::DimMismatch, "query dimension");
  const double qnorm = l2_norm(query);
  if (qnorm < kZeroNormThreshold) throw Error(ErrorCode::ZeroVector, "query is zero");

  // Min-heap on rank order keeps the best k seen so far; its top is the worst kept.
  std::vector<Ranked> heap;
  heap.reserve(k);
  for (std::size_t i = 0; i < corpus.rows(); ++i) {
    const double rn = corpus.row_norm(i);
    const double s =
        rn < kZeroNormThreshold ? -1.0 : std::clamp(dot(query, corpus.row(i)) / (qnorm * rn), -1.0, 1.0);
    Ranked r{s, i};
    if (heap.size() < k) {
      heap.push_back(r);
      std::push_heap(heap.begin(), heap.end(), ranks_before);
    } else if (ranks_before(r, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), ranks_before);
      heap.back() = r;
      std::push_heap(heap.begin(), heap.end(), ranks_before);
    }
  }
  std::sort(heap.begin(), heap.end(), ranks_before);
  TopKResult out;
  out.indices.reserve(k);
  out.scores.reserve(k);
  for (const auto& r : heap) {
    out.indices.push_back(r.index);
    out.scores.push_back(r.score);
  }
  return out;
}

std::vector<TopKResult> top_k_batch(const FeatureMatrix& queries, const FeatureMatrix& corpus,
                                    std::size_t k, unsigned threads) {
  std::vector<TopKResult> results(queries.rows());
  parallel_for(queries.rows(), threads,
               [&](std::size_t q) { results[q] = top_k(queries.row(q), corpus, k); });
  return results;
}

}  // namespace ptsynth
