#include "ptsynth/clo.hpp"

#include <cmath>
#include <string>

#include "ptsynth/error.hpp"
#include "ptsynth/parallel.hpp"

namespace ptsynth {

namespace {

double ddot(std::span<const double> a, std::span<const double> b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void check_shapes(const FeatureMatrix& texts, const FeatureMatrix& images) {
  if (texts.rows() != images.rows() || texts.dim() != images.dim()) {
    throw Error(ErrorCode::ShapeMismatch,
                "texts " + std::to_string(texts.rows()) + "x" + std::to_string(texts.dim()) +
                    " vs images " + std::to_string(images.rows()) + "x" +
                    std::to_string(images.dim()));
  }
}

// Softmax over image rows of F_k . hhat / tau, written into p; returns the
// cosines in cos_out.
void softmax_scores(std::span<const double> hhat, const ImageBatch& images, double tau,
                    std::vector<double>& cos_out, std::vector<double>& p) {
  const std::size_t n = images.size();
  cos_out.resize(n);
  p.resize(n);
  double max_s = -INFINITY;
  for (std::size_t k = 0; k < n; ++k) {
    cos_out[k] = ddot(images.row(k), hhat);
    max_s = std::max(max_s, cos_out[k] / tau);
  }
  double z = 0;
  for (std::size_t k = 0; k < n; ++k) {
    p[k] = std::exp(cos_out[k] / tau - max_s);
    z += p[k];
  }
  for (auto& x : p) x /= z;
}

std::vector<double> unit_copy(std::span<const double> h, double& norm) {
  norm = std::sqrt(ddot(h, h));
  if (norm < kZeroNormThreshold) throw Error(ErrorCode::ZeroVector, "text feature is zero");
  std::vector<double> hhat(h.begin(), h.end());
  for (auto& x : hhat) x /= norm;
  return hhat;
}

}  // namespace

void CloConfig::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be > 0");
  if (!(tau > 0) || !std::isfinite(tau)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
}

ImageBatch::ImageBatch(const FeatureMatrix& images)
    : n_(images.rows()), dim_(images.dim()), data_(images.rows() * images.dim()) {
  for (std::size_t k = 0; k < n_; ++k) {
    const double norm = images.row_norm(k);
    if (norm < kZeroNormThreshold) throw Error(ErrorCode::ZeroVector, "image row is zero");
    const auto r = images.row(k);
    for (std::size_t d = 0; d < dim_; ++d) data_[k * dim_ + d] = double(r[d]) / norm;
  }
}

AlignmentMatrix alignment(const FeatureMatrix& images, const FeatureMatrix& texts, double tau) {
  check_shapes(texts, images);
  if (!(tau > 0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
  const std::size_t n = images.rows();
  AlignmentMatrix out;
  out.n = n;
  out.entries.assign(n * n, 0.0);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    double max_s = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      s[j] = cosine_sim(images.row(j), texts.row(i)) / tau;
      max_s = std::max(max_s, s[j]);
    }
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(s[j] - max_s);
    const double log_z = max_s + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out.entries[j * n + i] = std::exp(s[j] - log_z);
    out.objective += s[i] - log_z;
  }
  return out;
}

double log_self_alignment(std::span<const double> h, const ImageBatch& images, std::size_t i,
                          double tau) {
  double norm;
  const auto hhat = unit_copy(h, norm);
  const std::size_t n = images.size();
  double max_s = -INFINITY;
  std::vector<double> s(n);
  for (std::size_t k = 0; k < n; ++k) {
    s[k] = ddot(images.row(k), hhat) / tau;
    max_s = std::max(max_s, s[k]);
  }
  double z = 0;
  for (double x : s) z += std::exp(x - max_s);
  return s[i] - max_s - std::log(z);
}

std::vector<double> clo_gradient(std::span<const double> h, const ImageBatch& images,
                                 std::size_t i, double tau) {
  if (h.size() != images.dim()) throw Error(ErrorCode::ShapeMismatch, "feature dimension");
  if (i >= images.size()) throw Error(ErrorCode::ShapeMismatch, "pair index out of range");
  double norm;
  const auto hhat = unit_copy(h, norm);
  std::vector<double> cosines, p;
  softmax_scores(hhat, images, tau, cosines, p);

  // g_k = (F_k - (F_k.hhat) hhat) / (tau |h|); result = g_i - sum_k p_k g_k.
  const std::size_t dim = h.size();
  std::vector<double> grad(images.row(i).begin(), images.row(i).end());
  double radial = cosines[i];
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto fk = images.row(k);
    for (std::size_t d = 0; d < dim; ++d) grad[d] -= p[k] * fk[d];
    radial -= p[k] * cosines[k];
  }
  const double scale = 1.0 / (tau * norm);
  for (std::size_t d = 0; d < dim; ++d) grad[d] = (grad[d] - radial * hhat[d]) * scale;
  return grad;
}

std::vector<double> clo_gradient(std::span<const float> h, const FeatureMatrix& images,
                                 std::size_t i, double tau) {
  const std::vector<double> hd(h.begin(), h.end());
  return clo_gradient(hd, ImageBatch(images), i, tau);
}

void clo_step(std::vector<double>& h, const ImageBatch& images, std::size_t i,
              const CloConfig& cfg) {
  const auto g = clo_gradient(h, images, i, cfg.tau);
  for (std::size_t d = 0; d < h.size(); ++d) h[d] += cfg.lambda * g[d];
  if (cfg.renormalize) {
    double norm;
    h = unit_copy(h, norm);
  }
}

namespace {

std::vector<double> initial_state(std::span<const float> h0, const CloConfig& cfg) {
  std::vector<double> h(h0.begin(), h0.end());
  if (cfg.renormalize) {
    double norm;
    h = unit_copy(h, norm);
  }
  return h;
}

}  // namespace

std::vector<double> refine_feature(std::span<const float> h0, const ImageBatch& images,
                                   std::size_t i, const CloConfig& cfg) {
  cfg.validate();
  auto h = initial_state(h0, cfg);
  for (std::size_t t = 0; t < cfg.steps; ++t) clo_step(h, images, i, cfg);
  return h;
}

namespace {

CloTraceRow trace_row(std::size_t step, const std::vector<std::vector<double>>& hs,
                      const ImageBatch& images, double tau) {
  CloTraceRow row{step, 0.0, 0.0};
  for (std::size_t i = 0; i < hs.size(); ++i) {
    row.objective += log_self_alignment(hs[i], images, i, tau);
    double norm;
    const auto hhat = unit_copy(hs[i], norm);
    row.mean_diag_cos += ddot(images.row(i), hhat);
  }
  if (!hs.empty()) row.mean_diag_cos /= static_cast<double>(hs.size());
  return row;
}

}  // namespace

FeatureMatrix clo_refine(const FeatureMatrix& texts, const FeatureMatrix& images,
                         const CloConfig& cfg, std::vector<CloTraceRow>* trace,
                         unsigned threads) {
  check_shapes(texts, images);
  cfg.validate();
  const ImageBatch batch(images);
  const std::size_t n = texts.rows();

  std::vector<std::vector<double>> hs(n);
  for (std::size_t i = 0; i < n; ++i) hs[i] = initial_state(texts.row(i), cfg);

  if (trace) {
    trace->clear();
    trace->push_back(trace_row(0, hs, batch, cfg.tau));
  }
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    parallel_for(n, threads, [&](std::size_t i) { clo_step(hs[i], batch, i, cfg); });
    if (trace) trace->push_back(trace_row(t + 1, hs, batch, cfg.tau));
  }

  std::vector<float> data;
  data.reserve(n * texts.dim());
  for (const auto& h : hs) {
    for (double x : h) data.push_back(static_cast<float>(x));
  }
  return FeatureMatrix(texts.dim(), std::move(data), texts.ids(), cfg.renormalize);
}

double mean_diagonal_cosine(const FeatureMatrix& texts, const FeatureMatrix& images) {
  check_shapes(texts, images);
  if (texts.empty()) return 0.0;
  double acc = 0;
  for (std::size_t i = 0; i < texts.rows(); ++i) acc += cosine_sim(texts.row(i), images.row(i));
  return acc / static_cast<double>(texts.rows());
}

double in_batch_retrieval_accuracy(const FeatureMatrix& texts, const FeatureMatrix& images) {
  check_shapes(texts, images);
  if (texts.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < texts.rows(); ++i) {
    if (top_k(texts.row(i), images, 1).indices.front() == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(texts.rows());
}

}  // namespace ptsynth
