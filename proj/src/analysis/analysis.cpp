#include "svf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace svf {

namespace {

Matrix abs_cos(const Matrix& a, const Matrix& b) {
  Matrix c = cosine_similarity_matrix(a, b);
  for (double& x : c.data()) x = std::abs(x);
  return c;
}

std::size_t argmax_col(const Matrix& m, std::size_t col) {
  std::size_t best = 0;
  for (std::size_t r = 1; r < m.rows(); ++r)
    if (m(r, col) > m(best, col)) best = r;
  return best;
}

std::size_t term_count(const SvdResult& s, std::size_t n_terms) {
  return n_terms == 0 ? s.sigma.size() : std::min(n_terms, s.sigma.size());
}

void finish_record(DecompositionRecord& rec, double target) {
  const bool any = std::any_of(rec.terms.begin(), rec.terms.end(), [](double t) { return t != 0.0; });
  if (any) rec.sparsity_s = sparsity_s(rec.terms);
  rec.n_recon = n_recon(rec.terms, target);
}

SvdResult head_svd(const AttentionHead& head) { return svd_product_tn(head.w_q, head.w_k); }

}  // namespace

std::size_t AlignmentReport::best_u(std::size_t feature) const { return argmax_col(cos_u_w, feature); }
std::size_t AlignmentReport::best_v(std::size_t feature) const { return argmax_col(cos_v_w, feature); }

AlignmentReport alignment(const Matrix& w, const SvdResult& s, const TargetSpec& spec) {
  spec.validate(w.cols());
  AlignmentReport rep;
  rep.cos_u_w = abs_cos(s.u, w);
  rep.cos_v_w = abs_cos(s.v, w);
  rep.sigma = s.sigma;
  const auto ranked = spec.ranked();
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    PairAlignment p;
    p.query_feature = ranked[r].query_feature;
    p.key_feature = ranked[r].key_feature;
    p.logit = ranked[r].logit;
    p.singular_idx = r;
    if (r < s.sigma.size()) {
      p.cos_u = rep.cos_u_w(r, p.query_feature);
      p.cos_v = rep.cos_v_w(r, p.key_feature);
    }
    rep.pairs.push_back(p);
  }
  return rep;
}

AlignmentReport alignment(const FeatureUniverse& universe, const AttentionHead& head,
                          const TargetSpec& spec) {
  return alignment(universe.w, head_svd(head), spec);
}

Matrix feature_geometry(const FeatureUniverse& universe) {
  return cosine_similarity_matrix(universe.w, universe.w);
}

double isotropy_residual(const Matrix& w) {
  const std::size_t d = w.rows();
  Matrix g = matmul_nt(w, w);
  const double tau = trace(g) / static_cast<double>(d);
  if (!(tau > 0.0)) throw std::invalid_argument("isotropy_residual: W is zero");
  g *= 1.0 / tau;
  for (std::size_t i = 0; i < d; ++i) g(i, i) -= 1.0;
  return frobenius_norm(g) / std::sqrt(static_cast<double>(d));
}

double max_interference(const Matrix& w, std::size_t i, std::span<const std::size_t> exclude) {
  const Matrix c = cosine_similarity_matrix(w, w);
  double best = 0.0;
  for (std::size_t j = 0; j < w.cols(); ++j) {
    if (j == i || std::find(exclude.begin(), exclude.end(), j) != exclude.end()) continue;
    best = std::max(best, std::abs(c(i, j)));
  }
  return best;
}

double relative_attention(std::span<const double> logits, std::size_t j) {
  const std::size_t m = logits.size();
  if (m < 2) throw std::invalid_argument("relative_attention: need at least two logits");
  if (j >= m) throw std::out_of_range("relative_attention: index out of range");
  double others = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (i != j) others += logits[i];
  return logits[j] - others / static_cast<double>(m - 1);
}

Vector relative_key(const Matrix& keys, std::size_t j) {
  const std::size_t m = keys.rows();
  if (m < 2) throw std::invalid_argument("relative_key: need at least two keys");
  if (j >= m) throw std::out_of_range("relative_key: index out of range");
  Vector out(keys.cols(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (i == j) continue;
    const auto row = keys.row(i);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  const double inv = 1.0 / static_cast<double>(m - 1);
  const auto sj = keys.row(j);
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = sj[c] - out[c] * inv;
  return out;
}

double sparsity_s(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("sparsity_s: empty vector");
  double l1 = 0.0, l2 = 0.0;
  for (double x : v) {
    l1 += std::abs(x);
    l2 += x * x;
  }
  if (l2 == 0.0) throw std::invalid_argument("sparsity_s: all-zero vector");
  const double n = static_cast<double>(v.size());
  const double s = (l1 / n) * (l1 / n) / (l2 / n);
  return std::clamp(s, 1.0 / n, 1.0);
}

std::optional<std::size_t> n_recon(std::span<const double> terms, double target) {
  if (!(target > 0.0)) return std::nullopt;
  Vector sorted(terms.begin(), terms.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double scale = 0.0;
  for (double t : terms) scale += std::abs(t);
  const double slack = 4.0 * std::numeric_limits<double>::epsilon() * scale;
  double acc = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (sorted[k] <= 0.0) break;
    acc += sorted[k];
    if (acc >= target - slack) return k + 1;
  }
  return std::nullopt;
}

double DecompositionRecord::terms_sum() const {
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

namespace {

DecompositionRecord decompose_with(const Matrix& u, const Vector& sigma, const Matrix& v,
                                   std::span<const double> query, const Matrix& keys, std::size_t j,
                                   std::size_t n) {
  if (query.size() != u.rows() || keys.cols() != v.rows())
    throw std::invalid_argument("decompose: token width does not match the head");
  const Vector s_rel = relative_key(keys, j);
  const Vector ru = matvec_t(u, query);
  const Vector vs = matvec_t(v, s_rel);
  DecompositionRecord rec;
  rec.key_idx = j;
  rec.query_idx = keys.rows() - 1;
  rec.terms.resize(n);
  for (std::size_t k = 0; k < n; ++k) rec.terms[k] = ru[k] * sigma[k] * vs[k];
  double full = 0.0;
  for (std::size_t k = 0; k < sigma.size(); ++k) full += ru[k] * sigma[k] * vs[k];
  rec.relative_attention = full;
  return rec;
}

}  // namespace

DecompositionRecord decompose(const SvdResult& s, std::span<const double> query, const Matrix& keys,
                              std::size_t j, std::size_t n_terms) {
  DecompositionRecord rec = decompose_with(s.u, s.sigma, s.v, query, keys, j, term_count(s, n_terms));
  finish_record(rec, rec.relative_attention);
  return rec;
}

DecompositionRecord decompose(const Matrix& omega, std::span<const double> query, const Matrix& keys,
                              std::size_t j, std::size_t n_terms) {
  const SvdResult s = svd(omega);
  DecompositionRecord rec = decompose_with(s.u, s.sigma, s.v, query, keys, j, term_count(s, n_terms));
  // Direct bilinear form, independent of the factorization.
  rec.relative_attention = dot(query, matvec(omega, relative_key(keys, j)));
  finish_record(rec, rec.relative_attention);
  return rec;
}

BasisRotation BasisRotation::identity(std::size_t k) {
  return {Matrix::identity(k), Matrix::identity(k), 0, 0};
}

BasisRotation BasisRotation::sample(std::size_t k, std::uint64_t seed) {
  Rng root(seed);
  BasisRotation r;
  r.seed_u = root();
  r.seed_v = root();
  Rng ru(r.seed_u), rv(r.seed_v);
  r.r_u = haar_orthogonal(k, ru);
  r.r_v = haar_orthogonal(k, rv);
  return r;
}

DecompositionRecord rotated_baseline(const SvdResult& s, std::span<const double> query,
                                     const Matrix& keys, std::size_t j,
                                     const BasisRotation& rotation, std::size_t n_terms) {
  const std::size_t k = s.sigma.size();
  if (rotation.r_u.rows() != k || rotation.r_v.rows() != k)
    throw std::invalid_argument("rotated_baseline: rotation size does not match the spectrum");
  const Matrix u = matmul(s.u, rotation.r_u);
  const Matrix v = matmul(s.v, rotation.r_v);
  DecompositionRecord rec = decompose_with(u, s.sigma, v, query, keys, j, term_count(s, n_terms));
  rec.rotated = true;
  // The unrotated value; rotated terms need not sum to it.
  const DecompositionRecord plain = decompose_with(s.u, s.sigma, s.v, query, keys, j, k);
  rec.relative_attention = plain.relative_attention;
  finish_record(rec, rec.terms_sum());
  return rec;
}

DecompositionRecord rotated_baseline(const SvdResult& s, std::span<const double> query,
                                     const Matrix& keys, std::size_t j, std::uint64_t seed,
                                     std::size_t n_terms) {
  return rotated_baseline(s, query, keys, j, BasisRotation::sample(s.sigma.size(), seed), n_terms);
}

Vector rotated_spectrum(const SvdResult& s, const BasisRotation& rotation) {
  SvdResult r{matmul(s.u, rotation.r_u), s.sigma, matmul(s.v, rotation.r_v)};
  return svd(r.reconstruct()).sigma;
}

Matrix self_dynamics(const RunRecord& run, DynamicsKind kind, std::size_t index, bool left) {
  if (run.checkpoints.size() < 2) throw std::invalid_argument("training_dynamics: need >= 2 checkpoints");
  std::vector<Vector> vecs;
  for (const auto& c : run.checkpoints) {
    if (kind == DynamicsKind::feature_self) {
      if (index >= c.params.universe.w.cols()) throw std::out_of_range("training_dynamics: feature index");
      vecs.push_back(c.params.universe.w.col(index));
    } else if (kind == DynamicsKind::sv_self) {
      const SvdResult s = head_svd(c.params.head);
      if (index >= s.sigma.size()) throw std::out_of_range("training_dynamics: singular index");
      vecs.push_back(left ? s.u.col(index) : s.v.col(index));
    } else {
      throw std::invalid_argument("self_dynamics: use sv_feature_dynamics for sv_feature");
    }
  }
  return abs_cos(Matrix::from_columns(vecs), Matrix::from_columns(vecs));
}

std::optional<std::size_t> SvFeatureDynamics::first_crossing(std::size_t pair, double threshold) const {
  for (std::size_t t = 0; t < cos_u.rows(); ++t)
    if (cos_u(t, pair) > threshold && cos_v(t, pair) > threshold) return t;
  return std::nullopt;
}

SvFeatureDynamics sv_feature_dynamics(const RunRecord& run, const TargetSpec& spec) {
  if (run.checkpoints.size() < 2) throw std::invalid_argument("training_dynamics: need >= 2 checkpoints");
  SvFeatureDynamics d;
  const std::size_t t = run.checkpoints.size();
  d.cos_u = Matrix(t, spec.size());
  d.cos_v = Matrix(t, spec.size());
  for (std::size_t i = 0; i < t; ++i) {
    const auto& c = run.checkpoints[i];
    d.steps.push_back(c.step);
    const AlignmentReport rep = alignment(c.params.universe, c.params.head, spec);
    for (std::size_t p = 0; p < rep.pairs.size(); ++p) {
      d.cos_u(i, p) = rep.pairs[p].cos_u;
      d.cos_v(i, p) = rep.pairs[p].cos_v;
    }
  }
  return d;
}

const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::none: return "0";
    case Stratum::one: return "1";
    case Stratum::two_plus: return "2+";
  }
  return "?";
}

std::size_t pairs_present(const TargetSpec& spec, std::span<const double> f_query,
                          std::span<const double> f_key) {
  std::size_t n = 0;
  for (const auto& e : spec.entries())
    if (f_query[e.query_feature] * f_key[e.key_feature] > 0.0) ++n;
  return n;
}

Stratum stratum_of(std::size_t n_present) {
  return n_present == 0 ? Stratum::none : (n_present == 1 ? Stratum::one : Stratum::two_plus);
}

Matrix stratified_eval_strengths(const ModelConfig& cfg, const StratifiedOptions& opt) {
  Rng rng(opt.eval_seed);
  return sample_strengths(opt.n_eval_contexts * cfg.context_len, cfg.n_features, cfg.feature_prob, rng);
}

std::vector<StratifiedRecord> stratified_records(const ModelConfig& cfg, const ModelParams& params,
                                                 const TargetSpec& spec, const Matrix& strengths,
                                                 const StratifiedOptions& opt, bool rotated) {
  const std::size_t m = cfg.context_len;
  if (strengths.rows() % m != 0) throw std::invalid_argument("stratified_records: ragged contexts");
  const Matrix tokens = make_tokens(params.universe, strengths);
  const SvdResult s = head_svd(params.head);
  const BasisRotation rot = rotated ? BasisRotation::sample(s.sigma.size(), opt.rotation_seed)
                                    : BasisRotation::identity(s.sigma.size());
  std::vector<StratifiedRecord> out;
  const std::size_t n_ctx = strengths.rows() / m;
  Matrix keys(m, tokens.cols());
  for (std::size_t c = 0; c < n_ctx; ++c) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto row = tokens.row(c * m + j);
      std::copy(row.begin(), row.end(), keys.row(j).begin());
    }
    const auto query = tokens.row(c * m + m - 1);
    const auto f_query = strengths.row(c * m + m - 1);
    for (std::size_t j = 0; j < m; ++j) {
      StratifiedRecord r;
      r.record = rotated ? rotated_baseline(s, query, keys, j, rot, opt.n_terms)
                         : decompose(s, query, keys, j, opt.n_terms);
      r.record.query_idx = c * m + m - 1;
      r.record.key_idx = c * m + j;
      r.stratum = stratum_of(pairs_present(spec, f_query, strengths.row(c * m + j)));
      r.context = c;
      out.push_back(std::move(r));
    }
  }
  return out;
}

namespace {

std::array<StratumSummary, 3> summarize(const std::vector<StratifiedRecord>& recs,
                                        const StratifiedOptions& opt) {
  std::array<std::vector<double>, 3> vals;
  for (const auto& r : recs)
    if (r.record.sparsity_s && (!opt.attended_only || r.record.relative_attention > 0.0))
      vals[static_cast<std::size_t>(r.stratum)].push_back(*r.record.sparsity_s);
  std::array<StratumSummary, 3> out;
  for (std::size_t i = 0; i < 3; ++i) {
    out[i].count = vals[i].size();
    if (vals[i].empty()) continue;
    out[i].mean = mean(vals[i]);
    if (opt.bootstrap) out[i].ci = bootstrap_mean_ci(vals[i], opt.boot);
  }
  return out;
}

}  // namespace

std::vector<StratifiedRow> presence_stratified_sparsity(const RunRecord& run, const TargetSpec& spec,
                                                        const StratifiedOptions& opt) {
  if (spec.empty()) throw std::invalid_argument("presence_stratified_sparsity: empty target spec");
  const Matrix strengths = stratified_eval_strengths(run.model, opt);
  std::vector<StratifiedRow> rows;
  for (const auto& c : run.checkpoints) {
    StratifiedRow row;
    row.step = c.step;
    row.strata = summarize(stratified_records(run.model, c.params, spec, strengths, opt, false), opt);
    if (opt.with_rotated)
      row.rotated = summarize(stratified_records(run.model, c.params, spec, strengths, opt, true), opt);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace svf
