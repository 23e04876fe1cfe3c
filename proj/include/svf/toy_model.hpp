#pragma once

// Autoencoder over a feature universe plus a single attention head trained to
// reproduce a teacher attention pattern defined on feature pairs.
//
// Tokens are r = W f with feature strengths f_i = a_i b_i, a_i ~ Bernoulli(p),
// b_i ~ U(0, 1). Reconstruction is f' = ReLU(W^T r + b). The head scores a
// query against m keys with l_j = r^T W_Q^T W_K s_j (no 1/sqrt(H) scaling).
// Contexts are m consecutive keys; the last key of each context is its query.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "svf/linalg.hpp"

namespace svf {

// Reduction of the squared reconstruction error within a token: `mean`
// averages over the N feature coordinates, `sum` adds them up. Both average
// over tokens.
enum class ReconReduction { mean, sum };

struct ModelConfig {
  std::size_t n_features = 20;  // N
  std::size_t token_dim = 10;   // D
  std::size_t head_dim = 10;    // H
  std::size_t context_len = 4;  // m
  double feature_prob = 0.52;   // p
  double lambda = 4.0;
  std::uint64_t seed = 0;
  ReconReduction recon_reduction = ReconReduction::sum;

  void validate() const;
};

struct FeatureUniverse {
  Matrix w;   // D x N, columns are features
  Vector bias;  // N
};

struct AttentionHead {
  Matrix w_q;  // H x D
  Matrix w_k;  // H x D

  // W_Q^T W_K (D x D)
  Matrix omega() const;
};

struct ModelParams {
  FeatureUniverse universe;
  AttentionHead head;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    return a.universe.w == b.universe.w && a.universe.bias == b.universe.bias &&
           a.head.w_q == b.head.w_q && a.head.w_k == b.head.w_k;
  }
};

struct TargetEntry {
  std::size_t query_feature = 0;
  std::size_t key_feature = 0;
  double logit = 0.0;
};

class TargetSpec {
 public:
  TargetSpec() = default;
  explicit TargetSpec(std::vector<TargetEntry> entries);

  const std::vector<TargetEntry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }

  // Throws if any index is >= n_features.
  void validate(std::size_t n_features) const;

  // f_r^T T f_s
  double logit(std::span<const double> f_query, std::span<const double> f_key) const;

  // Entries ordered by descending logit (stable on ties).
  std::vector<TargetEntry> ranked() const;

  // (i, i + offset) pairs with linearly declining logits top, top - step, ...
  static TargetSpec linear_pairs(std::size_t n_pairs, std::size_t key_offset, double top,
                                 double step);
  // (0,4)=24, (1,5)=21, (2,6)=18, (3,7)=15
  static TargetSpec default_four_pairs();

 private:
  std::vector<TargetEntry> entries_;
};

struct ContextBatch {
  Matrix strengths;  // n_keys x N
  Matrix tokens;     // n_keys x D
  std::size_t context_len = 0;

  std::size_t n_keys() const noexcept { return strengths.rows(); }
  std::size_t n_contexts() const noexcept { return n_keys() / context_len; }
  std::size_t key_row(std::size_t context, std::size_t j) const noexcept {
    return context * context_len + j;
  }
  std::size_t query_row(std::size_t context) const noexcept {
    return context * context_len + context_len - 1;
  }
};

struct LossBreakdown {
  double recon = 0.0;
  double attn = 0.0;
  double total = 0.0;
};

struct ParamGradients {
  Matrix w;
  Vector bias;
  Matrix w_q;
  Matrix w_k;
};

ModelParams init_params(const ModelConfig& cfg, Rng& rng);

// Strength matrix only (n_rows x N), no divisibility requirement.
Matrix sample_strengths(std::size_t n_rows, std::size_t n_features, double p, Rng& rng);

ContextBatch sample_batch(const ModelConfig& cfg, const FeatureUniverse& universe,
                          std::size_t n_keys, Rng& rng);

// Tokens for explicit strengths: rows of f mapped through W.
Matrix make_tokens(const FeatureUniverse& universe, const Matrix& strengths);

// ReLU(W^T r + b) for each token row.
Matrix reconstruct(const FeatureUniverse& universe, const Matrix& tokens);

// n_contexts x m student logits.
Matrix attention_logits(const AttentionHead& head, const ContextBatch& batch);

// n_contexts x m teacher logits.
Matrix target_logits(const TargetSpec& spec, const ContextBatch& batch);

Vector softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> logits);
// -sum_j p_target(j) log p_student(j), both from logits.
double cross_entropy_from_logits(std::span<const double> target_logits,
                                 std::span<const double> student_logits);

LossBreakdown loss(const ModelConfig& cfg, const ModelParams& params, const TargetSpec& spec,
                   const ContextBatch& batch);

struct LossAndGradients {
  LossBreakdown loss;
  ParamGradients grads;
};

LossAndGradients loss_and_gradients(const ModelConfig& cfg, const ModelParams& params,
                                    const TargetSpec& spec, const ContextBatch& batch);

inline ParamGradients gradients(const ModelConfig& cfg, const ModelParams& params,
                                const TargetSpec& spec, const ContextBatch& batch) {
  return loss_and_gradients(cfg, params, spec, batch).grads;
}

}  // namespace svf
