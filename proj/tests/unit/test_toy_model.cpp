#include <gtest/gtest.h>

#include <cmath>

#include "svf/toy_model.hpp"

using namespace svf;

namespace {

ModelConfig small_config(std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.n_features = 8;
  cfg.token_dim = 5;
  cfg.head_dim = 4;
  cfg.context_len = 3;
  cfg.feature_prob = 0.5;
  cfg.lambda = 2.5;
  cfg.seed = seed;
  return cfg;
}

// Straightforward per-token, per-context reimplementation of the total loss.
LossBreakdown reference_loss(const ModelConfig& cfg, const ModelParams& p, const TargetSpec& t,
                             const Matrix& strengths) {
  const std::size_t n = cfg.n_features, d = cfg.token_dim, h = cfg.head_dim, m = cfg.context_len;
  const std::size_t keys = strengths.rows();
  std::vector<Vector> tok(keys, Vector(d, 0.0));
  double recon = 0.0;
  for (std::size_t k = 0; k < keys; ++k) {
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t i = 0; i < n; ++i) tok[k][r] += p.universe.w(r, i) * strengths(k, i);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double pre = p.universe.bias[i];
      for (std::size_t r = 0; r < d; ++r) pre += p.universe.w(r, i) * tok[k][r];
      const double diff = std::max(0.0, pre) - strengths(k, i);
      err += diff * diff;
    }
    recon += cfg.recon_reduction == ReconReduction::mean ? err / n : err;
  }
  recon /= keys;

  double attn = 0.0;
  const std::size_t contexts = keys / m;
  for (std::size_t c = 0; c < contexts; ++c) {
    const std::size_t q = c * m + m - 1;
    Vector qv(h, 0.0);
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t r = 0; r < d; ++r) qv[a] += p.head.w_q(a, r) * tok[q][r];
    Vector student(m), teacher(m);
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t k = c * m + j;
      double l = 0.0;
      for (std::size_t a = 0; a < h; ++a) {
        double kv = 0.0;
        for (std::size_t r = 0; r < d; ++r) kv += p.head.w_k(a, r) * tok[k][r];
        l += qv[a] * kv;
      }
      student[j] = l;
      double tl = 0.0;
      for (const auto& e : t.entries()) tl += e.logit * strengths(q, e.query_feature) * strengths(k, e.key_feature);
      teacher[j] = tl;
    }
    double smax = -INFINITY, tmax = -INFINITY;
    for (std::size_t j = 0; j < m; ++j) smax = std::max(smax, student[j]), tmax = std::max(tmax, teacher[j]);
    double sz = 0.0, tz = 0.0;
    for (std::size_t j = 0; j < m; ++j) sz += std::exp(student[j] - smax), tz += std::exp(teacher[j] - tmax);
    for (std::size_t j = 0; j < m; ++j) {
      const double pt = std::exp(teacher[j] - tmax) / tz;
      attn -= pt * (student[j] - smax - std::log(sz));
    }
  }
  attn /= contexts;
  return {recon, attn, recon + cfg.lambda * attn};
}

ContextBatch batch_from(const ModelConfig& cfg, const ModelParams& p, Matrix strengths) {
  ContextBatch b;
  b.tokens = make_tokens(p.universe, strengths);
  b.strengths = std::move(strengths);
  b.context_len = cfg.context_len;
  return b;
}

template <class F>
double central_difference(double& x, F&& f, double h = 1e-5) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.head_dim = cfg.token_dim + 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.context_len = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.feature_prob = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(TargetSpec, RejectsBadEntries) {
  EXPECT_THROW(TargetSpec({{0, 1, 1.0}, {0, 1, 2.0}}), std::invalid_argument);
  TargetSpec t({{0, 9, 1.0}});
  EXPECT_THROW(t.validate(8), std::invalid_argument);
  EXPECT_NO_THROW(t.validate(10));
}

TEST(TargetSpec, DefaultPairsAndRanking) {
  const TargetSpec t = TargetSpec::default_four_pairs();
  ASSERT_EQ(t.size(), 4u);
  const auto r = t.ranked();
  EXPECT_EQ(r[0].query_feature, 0u);
  EXPECT_EQ(r[0].key_feature, 4u);
  EXPECT_EQ(r[0].logit, 24.0);
  EXPECT_EQ(r[3].logit, 15.0);
}

TEST(SampleBatch, NearOneProbabilityIsDense) {
  Rng rng(1);
  const Matrix f = sample_strengths(10000, 1, 0.999, rng);
  std::size_t nz = 0;
  for (double v : f.data()) nz += v != 0.0;
  EXPECT_GT(nz, 9900u);
}

TEST(SampleBatch, MeanActiveCountIsBinomial) {
  Rng rng(2);
  const std::size_t rows = 100000, n = 20;
  const double p = 0.52;
  const Matrix f = sample_strengths(rows, n, p, rng);
  double total = 0.0;
  for (double v : f.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    total += v != 0.0;
  }
  const double sd = std::sqrt(n * p * (1 - p) / rows);
  EXPECT_LT(std::abs(total / rows - n * p), 3.0 * sd);
}

TEST(SampleBatch, TokensAreLinearImages) {
  const ModelConfig cfg = small_config();
  Rng rng(3);
  const ModelParams p = init_params(cfg, rng);
  Matrix onehot(1, cfg.n_features);
  onehot(0, 3) = 1.0;
  const Matrix tok = make_tokens(p.universe, onehot);
  for (std::size_t r = 0; r < cfg.token_dim; ++r) EXPECT_EQ(tok(0, r), p.universe.w(r, 3));

  const ContextBatch b = sample_batch(cfg, p.universe, 30, rng);
  EXPECT_EQ(b.n_contexts(), 10u);
  const Matrix expected = matmul_nt(b.strengths, p.universe.w);
  EXPECT_LT(frobenius_norm(b.tokens - expected), 1e-12);
  EXPECT_THROW(sample_batch(cfg, p.universe, 31, rng), std::invalid_argument);
}

TEST(SampleBatch, SameSeedIsBitIdentical) {
  const ModelConfig cfg = small_config();
  Rng r0(4);
  const ModelParams p = init_params(cfg, r0);
  Rng a(99), b(99);
  EXPECT_EQ(sample_batch(cfg, p.universe, 300, a).strengths, sample_batch(cfg, p.universe, 300, b).strengths);
}

TEST(Reconstruct, OrthonormalAndSaturatedCases) {
  FeatureUniverse u{Matrix::identity(4), Vector(4, 0.0)};
  Matrix f(1, 4);
  f(0, 2) = 0.7;
  const Matrix out = reconstruct(u, make_tokens(u, f));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out(0, i), i == 2 ? 0.7 : 0.0);

  Rng rng(5);
  FeatureUniverse neg{gaussian_matrix(3, 6, rng, 0.3), Vector(6, -10.0)};
  Matrix tok = Matrix::from_rows({{0.5, -0.5, 0.5}});
  const Matrix saturated = reconstruct(neg, tok);
  for (double v : saturated.data()) EXPECT_EQ(v, 0.0);
}

TEST(Reconstruct, MatchesDirectFormula) {
  Rng rng(6);
  FeatureUniverse u{gaussian_matrix(5, 8, rng), Vector(8)};
  for (double& b : u.bias) b = std::normal_distribution<double>(0, 0.5)(rng);
  const Matrix f = sample_strengths(7, 8, 0.5, rng);
  const Matrix out = reconstruct(u, make_tokens(u, f));
  const Matrix wtw = matmul_tn(u.w, u.w);
  for (std::size_t k = 0; k < 7; ++k)
    for (std::size_t i = 0; i < 8; ++i) {
      double pre = u.bias[i];
      for (std::size_t j = 0; j < 8; ++j) pre += wtw(i, j) * f(k, j);
      EXPECT_NEAR(out(k, i), std::max(0.0, pre), 1e-12);
    }
}

TEST(AttentionLogits, Examples) {
  const ModelConfig cfg = small_config();
  Rng rng(7);
  ModelParams p = init_params(cfg, rng);
  const ContextBatch b = sample_batch(cfg, p.universe, 12, rng);

  AttentionHead zero{Matrix(4, 5), Matrix(4, 5)};
  const Matrix zl = attention_logits(zero, b);
  for (double v : zl.data()) EXPECT_EQ(v, 0.0);

  // Two-step evaluation: (W_Q r) . (W_K s).
  const Matrix logits = attention_logits(p.head, b);
  for (std::size_t c = 0; c < b.n_contexts(); ++c) {
    const Vector q = matvec(p.head.w_q, b.tokens.row(b.query_row(c)));
    for (std::size_t j = 0; j < cfg.context_len; ++j) {
      const Vector k = matvec(p.head.w_k, b.tokens.row(b.key_row(c, j)));
      EXPECT_NEAR(logits(c, j), dot(q, k), 1e-12);
    }
  }
}

TEST(AttentionLogits, IdentityOmegaGivesSquaredNorm) {
  ModelConfig cfg = small_config();
  cfg.head_dim = cfg.token_dim;
  Rng rng(8);
  const ModelParams p = init_params(cfg, rng);
  const Matrix q = haar_orthogonal(cfg.token_dim, rng);
  AttentionHead h{q, q};
  const ContextBatch b = sample_batch(cfg, p.universe, 9, rng);
  const Matrix l = attention_logits(h, b);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto r = b.tokens.row(b.query_row(c));
    EXPECT_NEAR(l(c, cfg.context_len - 1), dot(r, r), 1e-12);
  }
}

TEST(TargetLogits, Examples) {
  ContextBatch b;
  b.context_len = 2;
  b.strengths = Matrix(2, 3);
  b.tokens = Matrix(2, 1);
  b.strengths(0, 1) = 0.8;  // key
  b.strengths(1, 0) = 0.5;  // query (last key)
  const Matrix l = target_logits(TargetSpec({{0, 1, 1.0}}), b);
  EXPECT_NEAR(l(0, 0), 0.4, 1e-15);
  EXPECT_EQ(l(0, 1), 0.0);
  const Matrix empty = target_logits(TargetSpec{}, b);
  for (double v : empty.data()) EXPECT_EQ(v, 0.0);
}

TEST(TargetLogits, MatchesDenseBilinearForm) {
  ModelConfig cfg;
  Rng rng(9);
  const ModelParams p = init_params(cfg, rng);
  const TargetSpec t = TargetSpec::default_four_pairs();
  Matrix dense(cfg.n_features, cfg.n_features);
  for (const auto& e : t.entries()) dense(e.query_feature, e.key_feature) = e.logit;
  const ContextBatch b = sample_batch(cfg, p.universe, 64, rng);
  const Matrix l = target_logits(t, b);
  for (std::size_t c = 0; c < b.n_contexts(); ++c)
    for (std::size_t j = 0; j < cfg.context_len; ++j) {
      const Vector tf = matvec(dense, b.strengths.row(b.key_row(c, j)));
      EXPECT_NEAR(l(c, j), dot(b.strengths.row(b.query_row(c)), tf), 1e-12);
    }
}

TEST(Softmax, NormalizedAndShiftInvariant) {
  Rng rng(10);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector l(7);
    for (double& v : l) v = g(rng);
    const Vector s = softmax(l);
    double sum = 0.0;
    for (double v : s) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    Vector shifted = l;
    for (double& v : shifted) v += 123.25;
    const Vector s2 = softmax(shifted);
    for (std::size_t i = 0; i < l.size(); ++i) EXPECT_NEAR(s[i], s2[i], 1e-12);
  }
  EXPECT_NEAR(log_sum_exp(Vector{1000.0, 1000.0}), 1000.0 + std::log(2.0), 1e-12);
}

TEST(CrossEntropy, UniformBinaryAndEntropyAtEquality) {
  EXPECT_NEAR(cross_entropy_from_logits(Vector{0, 0}, Vector{0, 0}), std::log(2.0), 1e-15);
  const Vector l{0.3, -1.2, 2.0, 0.0};
  const Vector p = softmax(l);
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  EXPECT_NEAR(cross_entropy_from_logits(l, l), h, 1e-12);
  // CE - H = KL >= 0
  const Vector other{1.0, 1.0, -0.5, 0.2};
  const Vector q = softmax(other);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  EXPECT_NEAR(cross_entropy_from_logits(l, other) - h, kl, 1e-12);
  EXPECT_GT(kl, 0.0);
}

TEST(Loss, MatchesReferenceImplementation) {
  for (auto reduction : {ReconReduction::mean, ReconReduction::sum}) {
    ModelConfig cfg = small_config(3);
    cfg.recon_reduction = reduction;
    Rng rng(11);
    ModelParams p = init_params(cfg, rng);
    for (double& b : p.universe.bias) b = std::normal_distribution<double>(0, 0.3)(rng);
    const TargetSpec t({{0, 4, 6.0}, {1, 5, 3.0}, {2, 2, -1.0}});
    const ContextBatch b = sample_batch(cfg, p.universe, 24, rng);
    const LossBreakdown got = loss(cfg, p, t, b);
    const LossBreakdown want = reference_loss(cfg, p, t, b.strengths);
    EXPECT_NEAR(got.recon, want.recon, 1e-10);
    EXPECT_NEAR(got.attn, want.attn, 1e-10);
    EXPECT_NEAR(got.total, want.total, 1e-10);
    EXPECT_NEAR(got.total, got.recon + cfg.lambda * got.attn, 1e-12);
  }
}

TEST(Loss, PerfectReconstructionAndMatchedLogits) {
  ModelConfig cfg = small_config();
  cfg.n_features = cfg.token_dim = cfg.head_dim = 4;
  cfg.context_len = 2;
  ModelParams p;
  p.universe = {Matrix::identity(4), Vector(4, 0.0)};
  p.head = {Matrix(4, 4), Matrix(4, 4)};
  Rng rng(12);
  const ContextBatch b = sample_batch(cfg, p.universe, 8, rng);
  const LossBreakdown l = loss(cfg, p, TargetSpec{}, b);
  EXPECT_EQ(l.recon, 0.0);
  EXPECT_NEAR(l.attn, std::log(2.0), 1e-15);
}

TEST(Loss, InvariantUnderLogitShift) {
  Rng rng(13);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Vector t(4), s(4);
    for (std::size_t i = 0; i < 4; ++i) t[i] = 3 * g(rng), s[i] = 3 * g(rng);
    Vector shifted = s;
    const double c = 50 * g(rng);
    for (double& v : shifted) v += c;
    EXPECT_NEAR(cross_entropy_from_logits(t, s), cross_entropy_from_logits(t, shifted), 1e-12);
  }
}

TEST(Gradients, ZeroLambdaFreezesHead) {
  ModelConfig cfg = small_config();
  cfg.lambda = 0.0;
  Rng rng(14);
  const ModelParams p = init_params(cfg, rng);
  const ContextBatch b = sample_batch(cfg, p.universe, 24, rng);
  const ParamGradients g = gradients(cfg, p, TargetSpec::default_four_pairs(), b);
  for (double v : g.w_q.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.w_k.data()) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, StationaryAtPerfectReconstruction) {
  ModelConfig cfg = small_config();
  cfg.n_features = cfg.token_dim = cfg.head_dim = 5;
  cfg.lambda = 0.0;
  Rng rng(15);
  ModelParams p = init_params(cfg, rng);
  p.universe.w = haar_orthogonal(5, rng);
  p.universe.bias.assign(5, 0.0);
  const ContextBatch b = sample_batch(cfg, p.universe, 30, rng);
  const ParamGradients g = gradients(cfg, p, TargetSpec{}, b);
  EXPECT_LT(frobenius_norm(g.w), 1e-12);
}

class GradientCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const std::uint64_t seed = GetParam();
  ModelConfig cfg;  // defaults
  cfg.seed = seed;
  Rng rng(1000 + seed);
  ModelParams p = init_params(cfg, rng);
  for (double& b : p.universe.bias) b = std::normal_distribution<double>(0, 0.1)(rng);
  const TargetSpec t = TargetSpec::default_four_pairs();
  const ContextBatch b = sample_batch(cfg, p.universe, 64, rng);
  const ParamGradients g = gradients(cfg, p, t, b);

  // Tokens are rebuilt from W inside the closure so the W gradient includes
  // the path through the tokens.
  auto total = [&] {
    ContextBatch bb = batch_from(cfg, p, b.strengths);
    return loss(cfg, p, t, bb).total;
  };
  struct Block {
    std::span<double> param;
    std::span<const double> grad;
    const char* name;
  };
  std::vector<Block> blocks{{p.universe.w.data(), g.w.data(), "w"},
                            {p.universe.bias, g.bias, "bias"},
                            {p.head.w_q.data(), g.w_q.data(), "w_q"},
                            {p.head.w_k.data(), g.w_k.data(), "w_k"}};
  std::size_t checked = 0;
  for (auto& blk : blocks) {
    std::uniform_int_distribution<std::size_t> pick(0, blk.param.size() - 1);
    for (int s = 0; s < 25; ++s) {
      const std::size_t i = pick(rng);
      const double fd = central_difference(blk.param[i], total);
      const double an = blk.grad[i];
      // ReLU kinks make single coordinates occasionally nondifferentiable at
      // this step size; the absolute floor covers near-zero entries.
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-4});
      EXPECT_LT(std::abs(fd - an) / scale, 1e-5) << blk.name << "[" << i << "] fd=" << fd << " an=" << an;
      ++checked;
    }
  }
  EXPECT_EQ(checked, 100u);
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, GradientCheck, ::testing::Range<std::uint64_t>(0, 10));
