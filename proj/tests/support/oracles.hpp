#pragma once

// Reference implementations used only by tests. They share no code with the
// library: plain loops, long double, full sorts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ptsynth/embedding.hpp"

namespace oracle {

using Rng = std::mt19937_64;

inline std::vector<float> gaussian_vec(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(nd(rng));
  return v;
}

inline std::vector<float> unit_vec(Rng& rng, std::size_t dim) {
  auto v = gaussian_vec(rng, dim);
  long double n = 0;
  for (float x : v) n += static_cast<long double>(x) * x;
  n = std::sqrt(n);
  for (auto& x : v) x = static_cast<float>(x / n);
  return v;
}

inline std::vector<double> unit_vec_d(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = nd(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

inline ptsynth::FeatureMatrix random_matrix(Rng& rng, std::size_t rows, std::size_t dim,
                                            bool unit, const std::string& prefix = "r") {
  std::vector<float> data;
  std::vector<std::string> ids;
  data.reserve(rows * dim);
  for (std::size_t i = 0; i < rows; ++i) {
    auto v = unit ? unit_vec(rng, dim) : gaussian_vec(rng, dim);
    data.insert(data.end(), v.begin(), v.end());
    ids.push_back(prefix + std::to_string(i));
  }
  return ptsynth::FeatureMatrix(dim, std::move(data), std::move(ids), unit);
}

template <class A, class B>
long double dot(const A& a, const B& b) {
  long double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return s;
}

template <class A>
long double norm(const A& a) {
  return std::sqrt(dot(a, a));
}

template <class A, class B>
long double cosine(const A& a, const B& b) {
  return dot(a, b) / (norm(a) * norm(b));
}

// Full sort of all corpus rows; ties on score go to the lower index.
// `norms` may carry precomputed corpus row norms.
inline std::vector<std::size_t> brute_top_k(std::span<const float> q, const ptsynth::FeatureMatrix& c,
                                            std::size_t k, const std::vector<long double>* norms = nullptr) {
  std::vector<long double> s(c.rows());
  const long double nq = norm(q);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    auto r = c.row(i);
    const long double nr = norms ? (*norms)[i] : norm(r);
    s[i] = nr == 0 ? -1.0L : dot(q, r) / (nq * nr);
  }
  std::vector<std::size_t> idx(c.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

// log c_ii for a text feature h against image rows F, written from the
// definition: log softmax_j(cos(F_j, h)/tau) at j = i.
inline long double log_cii(const std::vector<double>& h, const std::vector<std::vector<double>>& F,
                           std::size_t i, double tau) {
  std::vector<long double> logits(F.size());
  for (std::size_t j = 0; j < F.size(); ++j) logits[j] = cosine(F[j], h) / tau;
  long double mx = *std::max_element(logits.begin(), logits.end());
  long double z = 0;
  for (auto l : logits) z += std::exp(l - mx);
  return logits[i] - mx - std::log(z);
}

inline std::vector<double> fd_gradient(const std::vector<double>& h,
                                       const std::vector<std::vector<double>>& F, std::size_t i,
                                       double tau, double step) {
  std::vector<double> g(h.size());
  for (std::size_t d = 0; d < h.size(); ++d) {
    auto hp = h, hm = h;
    hp[d] += step;
    hm[d] -= step;
    g[d] = static_cast<double>((log_cii(hp, F, i, tau) - log_cii(hm, F, i, tau)) / (2.0L * step));
  }
  return g;
}

inline std::uint64_t ipow(std::uint64_t b, unsigned e) {
  std::uint64_t r = 1;
  while (e--) r *= b;
  return r;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("ptsynth_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
