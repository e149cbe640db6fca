#include "ptsynth/theory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ptsynth/error.hpp"
#include "ptsynth/rng.hpp"

namespace ptsynth {

namespace {

double ddot(std::span<const double> a, std::span<const double> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double dnorm(std::span<const double> a) { return std::sqrt(ddot(a, a)); }

void check_instance(const ToyInstance& inst) {
  const auto& g = inst.generator;
  if (inst.texts.rows == 0) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  if (inst.texts.cols != g.dim() || inst.noises.cols != g.noise_dim() ||
      inst.noises.rows != inst.texts.rows) {
    throw Error(ErrorCode::ShapeMismatch, "texts/noises do not match generator");
  }
  if (!(inst.tau > 0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
}

std::vector<double> unit(std::span<const double> v) {
  const double n = dnorm(v);
  if (n < 1e-12) throw Error(ErrorCode::ZeroVector, "zero text feature");
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

std::vector<double> concat(std::span<const double> a, std::span<const double> b) {
  std::vector<double> z(a.begin(), a.end());
  z.insert(z.end(), b.begin(), b.end());
  return z;
}

// Column-wise softmax of logits s[j * n + i] over j.
std::vector<double> column_softmax(const std::vector<double>& s, std::size_t n) {
  std::vector<double> c(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, s[j * n + i]);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(s[j * n + i] - mx);
    for (std::size_t j = 0; j < n; ++j) c[j * n + i] = std::exp(s[j * n + i] - mx) / z;
  }
  return c;
}

// Gradient of sum_i log c_ii (= -L), analytic.
std::vector<double> self_alignment_gradient(const std::vector<std::vector<double>>& grads,
                                            const std::vector<double>& c, std::size_t n,
                                            std::size_t params) {
  std::vector<double> g(params, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& gii = grads[i * n + i];
    for (std::size_t p = 0; p < params; ++p) g[p] += gii[p];
    for (std::size_t j = 0; j < n; ++j) {
      const double w = c[j * n + i];
      const auto& gji = grads[j * n + i];
      for (std::size_t p = 0; p < params; ++p) g[p] -= w * gji[p];
    }
  }
  return g;
}

}  // namespace

ToyGenerator::ToyGenerator(std::size_t dim, std::size_t noise_dim, std::vector<double> theta)
    : dim_(dim), noise_dim_(noise_dim), theta_(std::move(theta)) {
  if (dim_ == 0) throw Error(ErrorCode::ShapeMismatch, "generator output dim must be >= 1");
  if (theta_.size() != dim_ * (dim_ + noise_dim_)) {
    throw Error(ErrorCode::ShapeMismatch, "theta has " + std::to_string(theta_.size()) +
                                              " entries, expected " +
                                              std::to_string(dim_ * (dim_ + noise_dim_)));
  }
}

std::vector<double> ToyGenerator::raw(std::span<const double> h,
                                      std::span<const double> eps) const {
  if (h.size() != dim_ || eps.size() != noise_dim_) {
    throw Error(ErrorCode::ShapeMismatch, "generator input shape");
  }
  const auto z = concat(h, eps);
  const std::size_t in = input_dim();
  std::vector<double> u(dim_, 0.0);
  for (std::size_t d = 0; d < dim_; ++d) {
    u[d] = ddot(std::span<const double>(theta_.data() + d * in, in), z);
  }
  return u;
}

std::vector<double> ToyGenerator::forward(std::span<const double> h,
                                          std::span<const double> eps) const {
  auto u = raw(h, eps);
  const double n = dnorm(u);
  if (n < kMinGeneratorOutputNorm) throw Error(ErrorCode::ZeroVector, "generator output near zero");
  for (auto& x : u) x /= n;
  return u;
}

std::vector<double> similarity_logits(const ToyInstance& inst) {
  check_instance(inst);
  const std::size_t n = inst.texts.rows;
  std::vector<std::vector<double>> outs(n), hs(n);
  for (std::size_t j = 0; j < n; ++j) {
    outs[j] = inst.generator.forward(inst.texts.row(j), inst.noises.row(j));
    hs[j] = unit(inst.texts.row(j));
  }
  std::vector<double> s(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) s[j * n + i] = ddot(outs[j], hs[i]) / inst.tau;
  }
  return s;
}

std::vector<double> alignment_entries(const ToyInstance& inst) {
  return column_softmax(similarity_logits(inst), inst.texts.rows);
}

double generator_contrastive_loss(const ToyInstance& inst) {
  const auto s = similarity_logits(inst);
  const std::size_t n = inst.texts.rows;
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, s[j * n + i]);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(s[j * n + i] - mx);
    loss -= s[i * n + i] - mx - std::log(z);
  }
  return loss;
}

std::vector<std::vector<double>> similarity_gradients(const ToyInstance& inst) {
  check_instance(inst);
  const auto& gen = inst.generator;
  const std::size_t n = inst.texts.rows;
  const std::size_t dim = gen.dim();
  const std::size_t in = gen.input_dim();

  std::vector<std::vector<double>> hs(n);
  for (std::size_t i = 0; i < n; ++i) hs[i] = unit(inst.texts.row(i));

  std::vector<std::vector<double>> grads(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto z = concat(inst.texts.row(j), inst.noises.row(j));
    auto u = gen.raw(inst.texts.row(j), inst.noises.row(j));
    const double unorm = dnorm(u);
    if (unorm < kMinGeneratorOutputNorm) throw Error(ErrorCode::ZeroVector, "generator output near zero");
    std::vector<double> xhat(u);
    for (auto& x : xhat) x /= unorm;
    for (std::size_t i = 0; i < n; ++i) {
      // d cos(xhat, h_i) / du = (h_i - cos * xhat) / |u|;  du/dW[d][k] = z[k] e_d.
      const double cos = ddot(xhat, hs[i]);
      auto& g = grads[j * n + i];
      g.assign(gen.param_count(), 0.0);
      for (std::size_t d = 0; d < dim; ++d) {
        const double r = (hs[i][d] - cos * xhat[d]) / (unorm * inst.tau);
        for (std::size_t k = 0; k < in; ++k) g[d * in + k] = r * z[k];
      }
    }
  }
  return grads;
}

std::vector<double> loss_gradient(const ToyInstance& inst) {
  const std::size_t n = inst.texts.rows;
  const auto grads = similarity_gradients(inst);
  const auto c = column_softmax(similarity_logits(inst), n);
  auto g = self_alignment_gradient(grads, c, n, inst.generator.param_count());
  for (auto& x : g) x = -x;
  return g;
}

std::vector<double> loss_gradient_fd(const ToyInstance& inst, double step) {
  ToyInstance probe = inst;
  auto& theta = probe.generator.mutable_theta();
  std::vector<double> g(theta.size());
  for (std::size_t p = 0; p < theta.size(); ++p) {
    const double orig = theta[p];
    theta[p] = orig + step;
    const double up = generator_contrastive_loss(probe);
    theta[p] = orig - step;
    const double down = generator_contrastive_loss(probe);
    theta[p] = orig;
    g[p] = (up - down) / (2.0 * step);
  }
  return g;
}

double sigma_of(std::span<const double> entries, std::size_t n) {
  if (n == 0 || entries.size() != n * n) throw Error(ErrorCode::ShapeMismatch, "need n x n entries");
  for (std::size_t i = 0; i < n; ++i) {
    double col = 0;
    for (std::size_t j = 0; j < n; ++j) col += entries[j * n + i];
    if (std::abs(col - 1.0) > 1e-4) {
      throw Error(ErrorCode::NotStochastic, "column " + std::to_string(i) + " sums to " +
                                                std::to_string(col));
    }
  }
  const double mean = 1.0 / static_cast<double>(n);
  double ss = 0;
  for (double c : entries) ss += (c - mean) * (c - mean);
  return std::sqrt(ss) / static_cast<double>(n);
}

TheoremReport theorem_check(const ToyInstance& inst) {
  check_instance(inst);
  const std::size_t n = inst.texts.rows;
  TheoremReport r;
  r.n = n;
  r.params = inst.generator.param_count();
  r.tau = inst.tau;

  const auto grads = similarity_gradients(inst);
  double max_norm = 0;
  for (const auto& g : grads) max_norm = std::max(max_norm, dnorm(g));
  r.a = 2.0 * max_norm;

  const auto c = alignment_entries(inst);
  r.sigma = sigma_of(c, n);

  r.grad_norm = dnorm(loss_gradient(inst));
  r.grad_norm_fd = dnorm(loss_gradient_fd(inst));
  const double nd = static_cast<double>(n);
  r.bound = nd * r.a + nd * nd * r.a * r.sigma;
  r.holds = r.grad_norm <= r.bound + 1e-6 * r.bound;
  r.decomposition_residual = proof_identity_check(inst);
  return r;
}

double proof_identity_check(const ToyInstance& inst, double step) {
  check_instance(inst);
  const std::size_t n = inst.texts.rows;
  const std::size_t params = inst.generator.param_count();
  const auto grads = similarity_gradients(inst);
  const auto c = alignment_entries(inst);
  const double inv_n = 1.0 / static_cast<double>(n);

  // sum_ij d_ij / n + sum_ij (c_ji - 1/n) d_ij, term by term.
  std::vector<double> rhs(params, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const auto& gii = grads[i * n + i];
      const auto& gji = grads[j * n + i];
      const double w = c[j * n + i] - inv_n;
      for (std::size_t p = 0; p < params; ++p) {
        const double d = gii[p] - gji[p];
        rhs[p] += d * inv_n + w * d;
      }
    }
  }

  const auto fd = loss_gradient_fd(inst, step);
  double residual = 0;
  for (std::size_t p = 0; p < params; ++p) residual = std::max(residual, std::abs(-fd[p] - rhs[p]));
  return residual;
}

namespace {

DenseMatrix gaussian_matrix(KeyedStream& rng, std::size_t rows, std::size_t cols, double scale) {
  DenseMatrix m(rows, cols);
  for (auto& x : m.data) x = scale * rng.normal();
  return m;
}

bool outputs_ok(const ToyInstance& inst) {
  for (std::size_t j = 0; j < inst.texts.rows; ++j) {
    if (dnorm(inst.generator.raw(inst.texts.row(j), inst.noises.row(j))) < kMinGeneratorOutputNorm) {
      return false;
    }
  }
  return true;
}

}  // namespace

ToyInstance random_instance(std::uint64_t seed, std::size_t n, std::size_t dim,
                            std::size_t noise_dim, double tau) {
  KeyedStream rng(splitmix64(seed), 0x7E0);
  const std::size_t in = dim + noise_dim;
  DenseMatrix w = gaussian_matrix(rng, dim, in, 1.0 / std::sqrt(static_cast<double>(in)));
  DenseMatrix texts = gaussian_matrix(rng, n, dim, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = texts.row(i);
    const double nr = dnorm(r);
    for (auto& x : r) x /= nr;
  }
  ToyInstance inst{ToyGenerator(dim, noise_dim, std::move(w.data)), std::move(texts),
                   gaussian_matrix(rng, n, noise_dim, 1.0), tau};
  // Resample noise until every generator output is safely away from zero.
  while (!outputs_ok(inst)) inst.noises = gaussian_matrix(rng, n, noise_dim, 1.0);
  return inst;
}

ToyInstance equal_similarity_instance(std::uint64_t seed, std::size_t n, std::size_t dim,
                                      std::size_t noise_dim, double tau) {
  if (dim <= n || noise_dim == 0) {
    throw Error(ErrorCode::ShapeMismatch, "equal-similarity construction needs dim > n and noise");
  }
  ToyInstance inst = random_instance(seed, n, dim, noise_dim, tau);
  KeyedStream rng(splitmix64(seed ^ 0xE9A1), 1);

  // v orthogonal to every text (Gram-Schmidt against an orthonormalized basis).
  std::vector<std::vector<double>> basis;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> b(inst.texts.row(i).begin(), inst.texts.row(i).end());
    for (const auto& q : basis) {
      const double proj = ddot(b, q);
      for (std::size_t d = 0; d < dim; ++d) b[d] -= proj * q[d];
    }
    const double nb = dnorm(b);
    if (nb > 1e-9) {
      for (auto& x : b) x /= nb;
      basis.push_back(std::move(b));
    }
  }
  std::vector<double> v;
  do {
    v.assign(dim, 0.0);
    for (auto& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) {
        const double proj = ddot(v, q);
        for (std::size_t d = 0; d < dim; ++d) v[d] -= proj * q[d];
      }
    }
  } while (dnorm(v) < 1e-3);

  // W = v e_k^T with k the first noise coordinate, and that coordinate made positive.
  const std::size_t in = dim + noise_dim;
  std::vector<double> theta(dim * in, 0.0);
  for (std::size_t d = 0; d < dim; ++d) theta[d * in + dim] = v[d];
  inst.generator = ToyGenerator(dim, noise_dim, std::move(theta));
  for (std::size_t j = 0; j < n; ++j) inst.noises.row(j)[0] = 1.0 + std::abs(inst.noises.row(j)[0]);
  return inst;
}

ToyInstance identical_batch_instance(std::uint64_t seed, std::size_t n, std::size_t dim,
                                     std::size_t noise_dim, double tau) {
  ToyInstance inst = random_instance(seed, n, dim, noise_dim, tau);
  for (std::size_t j = 1; j < n; ++j) {
    std::copy(inst.texts.row(0).begin(), inst.texts.row(0).end(), inst.texts.row(j).begin());
    std::copy(inst.noises.row(0).begin(), inst.noises.row(0).end(), inst.noises.row(j).begin());
  }
  return inst;
}

std::vector<TheoremReport> run_theorem_trials(std::uint64_t seed, std::size_t trials,
                                              bool include_constructions) {
  constexpr std::size_t kSizes[] = {2, 4, 8};
  constexpr double kTaus[] = {0.2, 0.5, 1.0};
  constexpr std::size_t kDim = 16;
  constexpr std::size_t kNoise = 16;

  std::vector<TheoremReport> reports;
  reports.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = kSizes[t % 3];
    const double tau = kTaus[(t / 3) % 3];
    const std::uint64_t trial_seed = splitmix64(seed + t);
    if (include_constructions && t == 0) {
      reports.push_back(theorem_check(equal_similarity_instance(trial_seed, n, kDim, kNoise, tau)));
    } else if (include_constructions && t == 1) {
      reports.push_back(theorem_check(identical_batch_instance(trial_seed, n, kDim, kNoise, tau)));
    } else {
      reports.push_back(theorem_check(random_instance(trial_seed, n, kDim, kNoise, tau)));
    }
  }
  return reports;
}

}  // namespace ptsynth
