#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ptsynth {

// Small dense row-major double matrix for the verification harness.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

// Stand-in for "image encoder after generator": x' = normalize(W [h; eps]),
// with W (out_dim x (text_dim + noise_dim)) flattened row-major as theta.
// text_dim equals out_dim so cos(x', h) is defined.
class ToyGenerator {
 public:
  ToyGenerator(std::size_t dim, std::size_t noise_dim, std::vector<double> theta);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t noise_dim() const noexcept { return noise_dim_; }
  std::size_t input_dim() const noexcept { return dim_ + noise_dim_; }
  std::size_t param_count() const noexcept { return theta_.size(); }
  std::span<const double> theta() const noexcept { return theta_; }
  std::vector<double>& mutable_theta() noexcept { return theta_; }

  // Pre-normalization output W [h; eps].
  std::vector<double> raw(std::span<const double> h, std::span<const double> eps) const;
  // Unit output; throws ZeroVector when |W z| < 1e-6.
  std::vector<double> forward(std::span<const double> h, std::span<const double> eps) const;

 private:
  std::size_t dim_;
  std::size_t noise_dim_;
  std::vector<double> theta_;
};

inline constexpr double kMinGeneratorOutputNorm = 1e-6;

struct ToyInstance {
  ToyGenerator generator;
  DenseMatrix texts;   // n x dim
  DenseMatrix noises;  // n x noise_dim
  double tau;
};

// s(j, i) = cos(x'_j, h_i) / tau, row-major [j * n + i].
std::vector<double> similarity_logits(const ToyInstance& inst);

// c(j, i) = softmax over j of s(j, i).
std::vector<double> alignment_entries(const ToyInstance& inst);

// L = -sum_i log c(i, i). Zero for n = 1; non-negative.
double generator_contrastive_loss(const ToyInstance& inst);

// grad_theta s(j, i) for every (j, i), each of length param_count, [j * n + i].
std::vector<std::vector<double>> similarity_gradients(const ToyInstance& inst);

std::vector<double> loss_gradient(const ToyInstance& inst);
std::vector<double> loss_gradient_fd(const ToyInstance& inst, double step = 1e-5);

// Population standard deviation of the n^2 entries about their mean 1/n.
// Throws NotStochastic if any column sum is off by more than 1e-4.
double sigma_of(std::span<const double> entries, std::size_t n);

struct TheoremReport {
  std::size_t n = 0;
  std::size_t params = 0;
  double tau = 0;
  double grad_norm = 0;     // analytic
  double grad_norm_fd = 0;  // central differences
  double a = 0;             // 2 max |grad s(j, i)|
  double sigma = 0;
  double bound = 0;         // n a + n^2 a sigma
  bool holds = false;
  double decomposition_residual = 0;
};

// The gradient-norm bound on one instance (tolerance 1e-6 * bound).
TheoremReport theorem_check(const ToyInstance& inst);

// Max |fd(grad sum_i log c_ii) - (sum d_ij / n + sum (c_ji - 1/n) d_ij)| with
// d_ij = grad s_ii - grad s_ji. sum_i log c_ii is -L.
double proof_identity_check(const ToyInstance& inst, double step = 1e-5);

ToyInstance random_instance(std::uint64_t seed, std::size_t n, std::size_t dim,
                            std::size_t noise_dim, double tau);

// Rank-one generator whose outputs all coincide and are orthogonal to every
// text, so every s(j, i) is zero and sigma = 0. Needs dim > n.
ToyInstance equal_similarity_instance(std::uint64_t seed, std::size_t n, std::size_t dim,
                                      std::size_t noise_dim, double tau);

// Every text and noise row identical: all d_ij vanish, so the gradient is 0.
ToyInstance identical_batch_instance(std::uint64_t seed, std::size_t n, std::size_t dim,
                                     std::size_t noise_dim, double tau);

// Seeded sweep over n in {2,4,8}, tau in {0.2,0.5,1.0}, dim 16, 16 noise
// coordinates (512 parameters). With `include_constructions`, the first two
// trials are the equal-similarity and identical-batch cases.
std::vector<TheoremReport> run_theorem_trials(std::uint64_t seed, std::size_t trials,
                                              bool include_constructions = true);

}  // namespace ptsynth
