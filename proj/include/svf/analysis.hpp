#pragma once

// Measurements on trained heads: SVF alignment tables, feature geometry,
// relative attention and its decomposition over singular directions, the
// S(v) sparsity metric, N_recon, rotation baselines and training dynamics.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "svf/linalg.hpp"
#include "svf/stats.hpp"
#include "svf/toy_model.hpp"
#include "svf/trainer.hpp"

namespace svf {

// Every pass/fail threshold used by analyses and reports.
struct Thresholds {
  double aligned_cos = 0.9;
  double sigma_ratio = 3.0;
  double orthogonal_cos = 0.15;
  double isotropy = 0.15;
  double sweep_min_cos = 0.8;
  double multi_pair_cos = 0.85;
  double sparse_present = 0.35;
  double dense_absent = 0.5;
  double unassigned_cos = 0.5;
};

struct PairAlignment {
  std::size_t query_feature = 0;
  std::size_t key_feature = 0;
  double logit = 0.0;
  std::size_t singular_idx = 0;
  double cos_u = 0.0;  // |cos(u_k, w_query)|
  double cos_v = 0.0;  // |cos(v_k, w_key)|

  double min_cos() const { return cos_u < cos_v ? cos_u : cos_v; }
};

struct AlignmentReport {
  Matrix cos_u_w;  // k x N, |cos(u_k, w_i)|
  Matrix cos_v_w;  // k x N
  Vector sigma;
  // Spec entries by descending logit, pair r assigned singular index r.
  std::vector<PairAlignment> pairs;

  // Index of the singular vector with the largest |cos| to feature i.
  std::size_t best_u(std::size_t feature) const;
  std::size_t best_v(std::size_t feature) const;
};

AlignmentReport alignment(const Matrix& w, const SvdResult& omega_svd, const TargetSpec& spec);
AlignmentReport alignment(const FeatureUniverse& universe, const AttentionHead& head,
                          const TargetSpec& spec);

// N x N cosines between features.
Matrix feature_geometry(const FeatureUniverse& universe);

// ||W W^T / tau - I||_F / sqrt(D) with tau = trace(W W^T) / D.
double isotropy_residual(const Matrix& w);
inline double isotropy_residual(const FeatureUniverse& u) { return isotropy_residual(u.w); }

// max_{j not in exclude} |cos(w_i, w_j)|
double max_interference(const Matrix& w, std::size_t i, std::span<const std::size_t> exclude);

// l_j minus the mean of the other logits.
double relative_attention(std::span<const double> logits, std::size_t j);

// s_j minus the mean of the other keys (keys are rows).
Vector relative_key(const Matrix& keys, std::size_t j);

// (mean |v|)^2 / mean(v^2); throws on an all-zero vector.
double sparsity_s(std::span<const double> v);

// Fewest terms whose sum reaches target (largest first); nullopt when target <= 0
// or no subset reaches it.
std::optional<std::size_t> n_recon(std::span<const double> terms, double target);

struct DecompositionRecord {
  std::size_t query_idx = 0;
  std::size_t key_idx = 0;
  Vector terms;  // t_k = (r . u_k) sigma_k (v_k . s~)
  double relative_attention = 0.0;
  std::optional<double> sparsity_s;  // nullopt when every term is zero
  std::optional<std::size_t> n_recon;
  bool rotated = false;

  double terms_sum() const;
};

// Decomposes the relative attention of key j against query r. keys holds the m
// key tokens as rows. n_terms limits the decomposition to the leading singular
// directions (0 = all).
DecompositionRecord decompose(const SvdResult& omega_svd, std::span<const double> query,
                              const Matrix& keys, std::size_t j, std::size_t n_terms = 0);
DecompositionRecord decompose(const Matrix& omega, std::span<const double> query,
                              const Matrix& keys, std::size_t j, std::size_t n_terms = 0);

struct BasisRotation {
  Matrix r_u;  // k x k
  Matrix r_v;  // k x k
  std::uint64_t seed_u = 0;
  std::uint64_t seed_v = 0;

  static BasisRotation identity(std::size_t k);
  // Two independent Haar rotations.
  static BasisRotation sample(std::size_t k, std::uint64_t seed);
};

// Terms recomputed with U R_U and V R_V. relative_attention is the unrotated
// value; sparsity and n_recon use the rotated terms and their own sum.
DecompositionRecord rotated_baseline(const SvdResult& omega_svd, std::span<const double> query,
                                     const Matrix& keys, std::size_t j,
                                     const BasisRotation& rotation, std::size_t n_terms = 0);
DecompositionRecord rotated_baseline(const SvdResult& omega_svd, std::span<const double> query,
                                     const Matrix& keys, std::size_t j, std::uint64_t seed,
                                     std::size_t n_terms = 0);

// Spectrum of (U R_U) diag(sigma) (V R_V)^T, for checking preservation.
Vector rotated_spectrum(const SvdResult& omega_svd, const BasisRotation& rotation);

enum class DynamicsKind { sv_self, feature_self, sv_feature };

// sv_self / feature_self: T x T |cos| of one vector across checkpoints.
// For sv_self, `index` is the singular index and `left` picks u or v.
Matrix self_dynamics(const RunRecord& run, DynamicsKind kind, std::size_t index, bool left = true);

struct SvFeatureDynamics {
  std::vector<std::size_t> steps;
  Matrix cos_u;  // T x n_pairs, |cos(u_r, w_query)| for ranked pair r
  Matrix cos_v;  // T x n_pairs

  // First checkpoint index where both cosines of pair r exceed threshold.
  std::optional<std::size_t> first_crossing(std::size_t pair, double threshold) const;
};

SvFeatureDynamics sv_feature_dynamics(const RunRecord& run, const TargetSpec& spec);

enum class Stratum { none = 0, one = 1, two_plus = 2 };
const char* stratum_name(Stratum s);

// Pairs of interest present in (r, s): entries with f_r[i] * f_s[j] > 0.
std::size_t pairs_present(const TargetSpec& spec, std::span<const double> f_query,
                          std::span<const double> f_key);
Stratum stratum_of(std::size_t n_present);

struct StratumSummary {
  std::size_t count = 0;
  std::optional<double> mean;  // nullopt when the stratum is empty
  std::optional<ConfidenceInterval> ci;
};

struct StratifiedRow {
  std::size_t step = 0;
  std::array<StratumSummary, 3> strata;  // indexed by Stratum
  std::array<StratumSummary, 3> rotated;
};

struct StratifiedOptions {
  std::size_t n_eval_contexts = 512;
  std::uint64_t eval_seed = 0xe7a1;
  std::uint64_t rotation_seed = 0x707a7e;
  bool bootstrap = true;
  BootstrapOptions boot;
  // Number of leading singular directions in each decomposition (0 = H).
  std::size_t n_terms = 0;
  bool with_rotated = false;
  // Summarize only pairs the head attends to above uniform (relative attention > 0).
  bool attended_only = true;
};

// Fixed evaluation strengths (n_eval_contexts * m rows) shared by all checkpoints.
Matrix stratified_eval_strengths(const ModelConfig& cfg, const StratifiedOptions& opt);

// Every (query, key) pair of every evaluation context, one record each.
struct StratifiedRecord {
  DecompositionRecord record;
  Stratum stratum = Stratum::none;
  std::size_t context = 0;
};
std::vector<StratifiedRecord> stratified_records(const ModelConfig& cfg, const ModelParams& params,
                                                 const TargetSpec& spec, const Matrix& strengths,
                                                 const StratifiedOptions& opt, bool rotated);

std::vector<StratifiedRow> presence_stratified_sparsity(const RunRecord& run, const TargetSpec& spec,
                                                        const StratifiedOptions& opt = {});

}  // namespace svf
