#include "svf/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include "svf/kernels.hpp"

namespace svf {

void ModelConfig::validate() const {
  if (n_features == 0 || token_dim == 0 || head_dim == 0)
    throw std::invalid_argument("ModelConfig: dimensions must be positive");
  if (head_dim > token_dim) throw std::invalid_argument("ModelConfig: head_dim must be <= token_dim");
  if (context_len < 2) throw std::invalid_argument("ModelConfig: context_len must be >= 2");
  if (!(feature_prob > 0.0 && feature_prob < 1.0))
    throw std::invalid_argument("ModelConfig: feature_prob must lie in (0, 1)");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("ModelConfig: lambda must be finite and nonnegative");
}

Matrix AttentionHead::omega() const { return matmul_tn(w_q, w_k); }

TargetSpec::TargetSpec(std::vector<TargetEntry> entries) : entries_(std::move(entries)) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& e : entries_) {
    if (!seen.emplace(e.query_feature, e.key_feature).second)
      throw std::invalid_argument("TargetSpec: duplicate pair (" + std::to_string(e.query_feature) +
                                  ", " + std::to_string(e.key_feature) + ")");
    if (!std::isfinite(e.logit)) throw std::invalid_argument("TargetSpec: non-finite logit");
  }
}

void TargetSpec::validate(std::size_t n_features) const {
  for (const auto& e : entries_)
    if (e.query_feature >= n_features || e.key_feature >= n_features)
      throw std::invalid_argument("TargetSpec: feature index out of range for N = " +
                                  std::to_string(n_features));
}

double TargetSpec::logit(std::span<const double> f_query, std::span<const double> f_key) const {
  double acc = 0.0;
  for (const auto& e : entries_) acc += e.logit * f_query[e.query_feature] * f_key[e.key_feature];
  return acc;
}

std::vector<TargetEntry> TargetSpec::ranked() const {
  std::vector<TargetEntry> out = entries_;
  std::stable_sort(out.begin(), out.end(),
                   [](const TargetEntry& a, const TargetEntry& b) { return a.logit > b.logit; });
  return out;
}

TargetSpec TargetSpec::linear_pairs(std::size_t n_pairs, std::size_t key_offset, double top,
                                    double step) {
  std::vector<TargetEntry> entries;
  for (std::size_t i = 0; i < n_pairs; ++i)
    entries.push_back({i, i + key_offset, top - step * static_cast<double>(i)});
  return TargetSpec(std::move(entries));
}

TargetSpec TargetSpec::default_four_pairs() { return linear_pairs(4, 4, 24.0, 3.0); }

ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(cfg.token_dim));
  ModelParams p;
  p.universe.w = gaussian_matrix(cfg.token_dim, cfg.n_features, rng, std_dev);
  p.universe.bias.assign(cfg.n_features, 0.0);
  p.head.w_q = gaussian_matrix(cfg.head_dim, cfg.token_dim, rng, std_dev);
  p.head.w_k = gaussian_matrix(cfg.head_dim, cfg.token_dim, rng, std_dev);
  return p;
}

Matrix sample_strengths(std::size_t n_rows, std::size_t n_features, double p, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix f(n_rows, n_features);
  for (double& x : f.data()) {
    if (unit(rng) < p) x = unit(rng);
  }
  return f;
}

Matrix make_tokens(const FeatureUniverse& universe, const Matrix& strengths) {
  if (strengths.cols() != universe.w.cols())
    throw std::invalid_argument("make_tokens: strength width must equal N");
  return matmul(strengths, universe.w.transposed());
}

ContextBatch sample_batch(const ModelConfig& cfg, const FeatureUniverse& universe,
                          std::size_t n_keys, Rng& rng) {
  if (n_keys == 0 || n_keys % cfg.context_len != 0)
    throw std::invalid_argument("sample_batch: n_keys (" + std::to_string(n_keys) +
                                ") must be a positive multiple of context_len (" +
                                std::to_string(cfg.context_len) + ")");
  ContextBatch b;
  b.context_len = cfg.context_len;
  b.strengths = sample_strengths(n_keys, cfg.n_features, cfg.feature_prob, rng);
  b.tokens = make_tokens(universe, b.strengths);
  return b;
}

Matrix reconstruct(const FeatureUniverse& universe, const Matrix& tokens) {
  if (tokens.cols() != universe.w.rows())
    throw std::invalid_argument("reconstruct: token width must equal D");
  Matrix z = matmul(tokens, universe.w);
  for (std::size_t t = 0; t < z.rows(); ++t) {
    auto row = z.row(t);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::max(0.0, row[i] + universe.bias[i]);
  }
  return z;
}

namespace {

Matrix query_rows(const Matrix& tokens, std::size_t context_len) {
  const std::size_t n_ctx = tokens.rows() / context_len;
  Matrix q(n_ctx, tokens.cols());
  for (std::size_t c = 0; c < n_ctx; ++c) {
    const auto src = tokens.row(c * context_len + context_len - 1);
    std::copy(src.begin(), src.end(), q.row(c).begin());
  }
  return q;
}

Matrix logits_from_projections(const Matrix& q, const Matrix& k, std::size_t context_len) {
  const auto& kern = kernels::active();
  Matrix logits(q.rows(), context_len);
  for (std::size_t c = 0; c < q.rows(); ++c)
    for (std::size_t j = 0; j < context_len; ++j)
      logits(c, j) = kern.dot(q.row(c).data(), k.row(c * context_len + j).data(), q.cols());
  return logits;
}

}  // namespace

Matrix attention_logits(const AttentionHead& head, const ContextBatch& batch) {
  if (batch.tokens.cols() != head.w_k.cols())
    throw std::invalid_argument("attention_logits: token width must equal D");
  const Matrix k = matmul(batch.tokens, head.w_k.transposed());
  const Matrix q = matmul(query_rows(batch.tokens, batch.context_len), head.w_q.transposed());
  return logits_from_projections(q, k, batch.context_len);
}

Matrix target_logits(const TargetSpec& spec, const ContextBatch& batch) {
  const std::size_t n_ctx = batch.n_contexts();
  Matrix t(n_ctx, batch.context_len);
  for (std::size_t c = 0; c < n_ctx; ++c) {
    const auto fq = batch.strengths.row(batch.query_row(c));
    for (std::size_t j = 0; j < batch.context_len; ++j)
      t(c, j) = spec.logit(fq, batch.strengths.row(batch.key_row(c, j)));
  }
  return t;
}

double log_sum_exp(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - mx);
  return mx + std::log(s);
}

Vector softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (double& x : p) x /= s;
  return p;
}

double cross_entropy_from_logits(std::span<const double> target_logits,
                                 std::span<const double> student_logits) {
  const Vector pt = softmax(target_logits);
  const double lse = log_sum_exp(student_logits);
  double ce = 0.0;
  for (std::size_t j = 0; j < pt.size(); ++j) ce += pt[j] * (lse - student_logits[j]);
  return ce;
}

namespace {

struct Forward {
  Matrix tokens;     // R, n x D
  Matrix pre;        // Z, n x N
  Matrix err;        // ReLU(Z) - F
  Matrix k;          // n x H
  Matrix q_tokens;   // n_ctx x D
  Matrix q;          // n_ctx x H
  Matrix logits;     // n_ctx x m
  Matrix targets;    // n_ctx x m
  LossBreakdown loss;
};

double recon_denominator(const ModelConfig& cfg, std::size_t n_tokens) {
  const double n = static_cast<double>(n_tokens);
  return cfg.recon_reduction == ReconReduction::mean ? n * static_cast<double>(cfg.n_features) : n;
}

Forward forward(const ModelConfig& cfg, const ModelParams& params, const TargetSpec& spec,
                const ContextBatch& batch) {
  const auto& w = params.universe.w;
  if (batch.strengths.cols() != w.cols() || batch.context_len != cfg.context_len ||
      batch.n_keys() % batch.context_len != 0)
    throw std::invalid_argument("loss: batch shape does not match the model configuration");
  Forward f;
  const std::size_t n = batch.n_keys();
  f.tokens = matmul(batch.strengths, w.transposed());
  f.pre = matmul(f.tokens, w);
  f.err = Matrix(n, w.cols());
  double recon = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    auto z = f.pre.row(t);
    auto e = f.err.row(t);
    const auto fs = batch.strengths.row(t);
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] += params.universe.bias[i];
      e[i] = std::max(0.0, z[i]) - fs[i];
      recon += e[i] * e[i];
    }
  }
  f.loss.recon = recon / recon_denominator(cfg, n);

  f.k = matmul(f.tokens, params.head.w_k.transposed());
  f.q_tokens = query_rows(f.tokens, batch.context_len);
  f.q = matmul(f.q_tokens, params.head.w_q.transposed());
  f.logits = logits_from_projections(f.q, f.k, batch.context_len);
  f.targets = target_logits(spec, batch);
  double attn = 0.0;
  for (std::size_t c = 0; c < f.logits.rows(); ++c)
    attn += cross_entropy_from_logits(f.targets.row(c), f.logits.row(c));
  f.loss.attn = attn / static_cast<double>(f.logits.rows());
  f.loss.total = f.loss.recon + cfg.lambda * f.loss.attn;
  return f;
}

}  // namespace

LossBreakdown loss(const ModelConfig& cfg, const ModelParams& params, const TargetSpec& spec,
                   const ContextBatch& batch) {
  return forward(cfg, params, spec, batch).loss;
}

LossAndGradients loss_and_gradients(const ModelConfig& cfg, const ModelParams& params,
                                    const TargetSpec& spec, const ContextBatch& batch) {
  Forward f = forward(cfg, params, spec, batch);
  const auto& w = params.universe.w;
  const std::size_t n = batch.n_keys();
  const std::size_t m = batch.context_len;
  const std::size_t n_ctx = f.logits.rows();
  const std::size_t h = params.head.w_q.rows();
  const auto& kern = kernels::active();

  // Attention branch: dL/dlogit = lambda (p_student - p_target) / n_ctx.
  Matrix dk(n, h);
  Matrix dq(n_ctx, h);
  const double scale = cfg.lambda / static_cast<double>(n_ctx);
  if (cfg.lambda != 0.0) {
    for (std::size_t c = 0; c < n_ctx; ++c) {
      const Vector ps = softmax(f.logits.row(c));
      const Vector pt = softmax(f.targets.row(c));
      for (std::size_t j = 0; j < m; ++j) {
        const double g = scale * (ps[j] - pt[j]);
        if (g == 0.0) continue;
        const std::size_t row = c * m + j;
        kern.axpy(g, f.q.row(c).data(), dk.row(row).data(), h);
        kern.axpy(g, f.k.row(row).data(), dq.row(c).data(), h);
      }
    }
  }

  ParamGradients g;
  g.w_k = matmul_tn(dk, f.tokens);
  g.w_q = matmul_tn(dq, f.q_tokens);

  Matrix d_tokens = matmul(dk, params.head.w_k);
  const Matrix dq_tokens = matmul(dq, params.head.w_q);
  for (std::size_t c = 0; c < n_ctx; ++c)
    kern.axpy(1.0, dq_tokens.row(c).data(), d_tokens.row(c * m + m - 1).data(), d_tokens.cols());

  // Reconstruction branch.
  Matrix dz(n, w.cols());
  const double rscale = 2.0 / recon_denominator(cfg, n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto z = f.pre.row(t);
    const auto e = f.err.row(t);
    auto d = dz.row(t);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = z[i] > 0.0 ? rscale * e[i] : 0.0;
  }
  g.bias.assign(w.cols(), 0.0);
  for (std::size_t t = 0; t < n; ++t) kern.axpy(1.0, dz.row(t).data(), g.bias.data(), w.cols());

  g.w = matmul_tn(f.tokens, dz);
  matmul_acc(dz, w.transposed(), d_tokens);
  // tokens = F W^T  =>  dW += dR^T F = (F^T dR)^T
  const Matrix ft_dr = matmul_tn(batch.strengths, d_tokens);
  for (std::size_t d = 0; d < g.w.rows(); ++d)
    for (std::size_t i = 0; i < g.w.cols(); ++i) g.w(d, i) += ft_dr(i, d);

  return LossAndGradients{f.loss, std::move(g)};
}

}  // namespace svf
