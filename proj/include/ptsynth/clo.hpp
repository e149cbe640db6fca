#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ptsynth/embedding.hpp"

namespace ptsynth {

struct CloConfig {
  std::size_t steps = 10;    // T
  double lambda = 0.01;      // step size
  double tau = 0.5;          // softmax temperature
  bool renormalize = true;   // project back to the unit sphere after each step

  void validate() const;
};

// c(j, i): softmax over image rows j of cos(F_j, H_i) / tau. Columns sum to 1.
struct AlignmentMatrix {
  std::size_t n = 0;
  std::vector<double> entries;  // row-major, entries[j * n + i]
  double objective = 0.0;       // sum_i log c(i, i)

  double at(std::size_t j, std::size_t i) const { return entries[j * n + i]; }
};

AlignmentMatrix alignment(const FeatureMatrix& images, const FeatureMatrix& texts, double tau);

// Image batch held as unit-normalized doubles; the softmax runs over its rows.
class ImageBatch {
 public:
  explicit ImageBatch(const FeatureMatrix& images);

  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> row(std::size_t k) const { return {data_.data() + k * dim_, dim_}; }

 private:
  std::size_t n_;
  std::size_t dim_;
  std::vector<double> data_;
};

// log c_ii for a single text feature h paired with image row i.
double log_self_alignment(std::span<const double> h, const ImageBatch& images, std::size_t i,
                          double tau);

// Gradient of log c_ii with respect to h (h need not be unit-norm).
std::vector<double> clo_gradient(std::span<const double> h, const ImageBatch& images,
                                 std::size_t i, double tau);
std::vector<double> clo_gradient(std::span<const float> h, const FeatureMatrix& images,
                                 std::size_t i, double tau);

// One ascent update of h in place.
void clo_step(std::vector<double>& h, const ImageBatch& images, std::size_t i,
              const CloConfig& cfg);

// T updates of a single feature. Identical arithmetic to clo_refine's per-row path.
std::vector<double> refine_feature(std::span<const float> h0, const ImageBatch& images,
                                   std::size_t i, const CloConfig& cfg);

struct CloTraceRow {
  std::size_t step;
  double objective;
  double mean_diag_cos;
};

// Refines text row i against image row i for every i. Rows are independent,
// so the result does not depend on `threads`. When `trace` is non-null it
// receives one row per step 0..T.
FeatureMatrix clo_refine(const FeatureMatrix& texts, const FeatureMatrix& images,
                         const CloConfig& cfg, std::vector<CloTraceRow>* trace = nullptr,
                         unsigned threads = 0);

double mean_diagonal_cosine(const FeatureMatrix& texts, const FeatureMatrix& images);
// Fraction of i with argmax_j cos(F_j, H_i) == i (ties to the lower j).
double in_batch_retrieval_accuracy(const FeatureMatrix& texts, const FeatureMatrix& images);

}  // namespace ptsynth
