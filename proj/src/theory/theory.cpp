#include "svf/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "svf/trainer.hpp"

namespace svf::theory {

namespace {

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// -p log s(d) - (1-p) log(1 - s(d)), stable for large |d|.
double sigmoid_ce(double p, double d) {
  const double log1p_e = d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d));
  return -p * (d - log1p_e) + (1.0 - p) * log1p_e;
}

Matrix gram(const Matrix& x) { return matmul_nt(x, x); }

Matrix deviation(const Matrix& x, const Matrix& sigma) {
  const double scale = static_cast<double>(x.rows()) / static_cast<double>(x.cols());
  Matrix e = sigma * scale;
  e -= Matrix::identity(x.rows());
  return e;
}

void normalize_columns(Matrix& x) {
  for (std::size_t c = 0; c < x.cols(); ++c) {
    const Vector v = normalized(x.col(c));
    x.set_col(c, v);
  }
}

void sample_token(const Matrix& frame, double p, Rng& rng, Vector& out) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < frame.cols(); ++i) {
    if (unif(rng) >= p) continue;
    for (std::size_t r = 0; r < frame.rows(); ++r) out[r] += frame(r, i);
  }
}

void require_positive(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

std::string describe(std::initializer_list<std::pair<const char*, double>> kv) {
  std::ostringstream os;
  bool first = true;
  for (const auto& [k, v] : kv) {
    if (!first) os << ' ';
    os << k << '=' << v;
    first = false;
  }
  return os.str();
}

}  // namespace

bool TheoremVerdict::bound_satisfied() const {
  if (!applicable || checks.empty()) return false;
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.satisfied(); });
}

double TheoremVerdict::margin() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& c : checks) m = std::min(m, c.margin());
  return checks.empty() ? std::numeric_limits<double>::quiet_NaN() : m;
}

std::optional<double> TheoremVerdict::quantity(const std::string& name) const {
  for (const auto& q : quantities)
    if (q.name == name) return q.value;
  for (const auto& c : checks)
    if (c.name == name) return c.measured;
  return std::nullopt;
}

FramePair FramePair::from_features(Matrix x, Matrix y) {
  if (x.rows() != y.rows() || x.cols() != y.cols() || x.empty())
    throw std::invalid_argument("FramePair: X and Y must be nonempty with equal shape");
  FramePair f;
  f.sigma_x = gram(x);
  f.sigma_y = gram(y);
  f.e_x = deviation(x, f.sigma_x);
  f.e_y = deviation(y, f.sigma_y);
  f.e_x_norm = operator_norm(f.e_x);
  f.e_y_norm = operator_norm(f.e_y);
  f.x = std::move(x);
  f.y = std::move(y);
  return f;
}

TeacherSpec TeacherSpec::build(const FramePair& frames, double alpha, std::size_t feature) {
  if (feature >= frames.x.cols()) throw std::out_of_range("TeacherSpec: feature index");
  TeacherSpec t;
  t.alpha = alpha;
  t.detector_u = matvec(pseudo_inverse(frames.sigma_x), frames.x.col(feature));
  t.detector_v = matvec(pseudo_inverse(frames.sigma_y), frames.y.col(feature));
  t.omega_t = outer(t.detector_u, t.detector_v) * alpha;
  return t;
}

Matrix random_unit_frame(std::size_t d, std::size_t n, Rng& rng) {
  Matrix x = gaussian_matrix(d, n, rng);
  normalize_columns(x);
  return x;
}

Matrix union_of_bases_frame(std::size_t d, std::size_t n, Rng& rng) {
  if (d == 0 || n % d != 0)
    throw std::invalid_argument("union_of_bases_frame: n must be a positive multiple of d");
  Matrix x(d, n);
  for (std::size_t b = 0; b < n / d; ++b) {
    const Matrix q = haar_orthogonal(d, rng);
    for (std::size_t c = 0; c < d; ++c) x.set_col(b * d + c, q.col(c));
  }
  return x;
}

Matrix antipodal_tight_frame(std::size_t d, double scale, Rng& rng) {
  require_positive(scale > 0.0, "antipodal_tight_frame: scale must be positive");
  const Matrix q = haar_orthogonal(d, rng);
  Matrix x(d, 2 * d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      x(r, c) = scale * q(r, c);
      x(r, d + c) = -scale * q(r, c);
    }
  return x;
}

Matrix near_isotropic_frame(std::size_t d, std::size_t n, double target, Rng& rng) {
  if (!(target >= 0.0)) throw std::invalid_argument("near_isotropic_frame: target must be >= 0");
  const Matrix base = union_of_bases_frame(d, n, rng);
  if (target == 0.0) return base;
  Matrix s = gaussian_matrix(d, d, rng);
  s += s.transposed();
  s *= 1.0 / operator_norm(s);

  auto deform = [&](double t) {
    Matrix m = Matrix::identity(d) + s * t;
    Matrix x = matmul(m, base);
    normalize_columns(x);
    return x;
  };
  auto e_norm = [&](const Matrix& x) { return operator_norm(deviation(x, gram(x))); };

  double lo = 0.0, hi = target;
  while (e_norm(deform(hi)) < target) {
    hi *= 2.0;
    if (hi > 1e3) throw std::runtime_error("near_isotropic_frame: target deviation unreachable");
  }
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (e_norm(deform(mid)) < target ? lo : hi) = mid;
  }
  Matrix x = deform(0.5 * (lo + hi));
  const double got = e_norm(x);
  if (std::abs(got - target) > 0.01 * target)
    throw std::runtime_error("near_isotropic_frame: bisection missed target");
  return x;
}

IllConditioned::IllConditioned(double condition)
    : std::runtime_error("Gram matrix is ill-conditioned (condition number " +
                         std::to_string(condition) + ")"),
      condition_(condition) {}

StudentFit train_student(const FramePair& frames, const Matrix& omega_t, double p, std::size_t m,
                         const StudentBudget& budget) {
  require_positive(p > 0.0 && p < 1.0, "train_student: p must be in (0, 1)");
  require_positive(m >= 2, "train_student: m must be >= 2");
  require_positive(budget.steps > 0 && budget.batch_contexts > 0, "train_student: empty budget");
  const std::size_t d = frames.x.rows();
  Rng rng(budget.seed);

  StudentFit fit;
  fit.omega = budget.init_at_teacher ? omega_t : gaussian_matrix(d, d, rng, budget.init_scale);
  fit.init_sigma1 = operator_norm(fit.omega);
  fit.losses.reserve(budget.steps);

  Vector r(d), qt(d), qs(d);
  std::vector<Vector> keys(m, Vector(d));
  Vector lt(m), ls(m), coef(d);
  Matrix grad(d, d);
  Moments moments;
  AdamWHyper hyper;

  const std::size_t tail_from = budget.steps - std::max<std::size_t>(1, budget.steps / 10);
  double tail_sum = 0.0;

  for (std::size_t step = 0; step < budget.steps; ++step) {
    grad.fill(0.0);
    double loss = 0.0;
    for (std::size_t c = 0; c < budget.batch_contexts; ++c) {
      sample_token(frames.x, p, rng, r);
      for (auto& k : keys) sample_token(frames.y, p, rng, k);
      qt = matvec_t(omega_t, r);
      qs = matvec_t(fit.omega, r);
      for (std::size_t j = 0; j < m; ++j) {
        lt[j] = dot(qt, keys[j]);
        ls[j] = dot(qs, keys[j]);
      }
      const double mt = *std::max_element(lt.begin(), lt.end());
      const double ms = *std::max_element(ls.begin(), ls.end());
      double zt = 0.0, zs = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        zt += std::exp(lt[j] - mt);
        zs += std::exp(ls[j] - ms);
      }
      const double log_zs = ms + std::log(zs);
      std::fill(coef.begin(), coef.end(), 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double pt = std::exp(lt[j] - mt) / zt;
        const double ps = std::exp(ls[j] - log_zs);
        loss -= pt * (ls[j] - log_zs);
        for (std::size_t i = 0; i < d; ++i) coef[i] += (ps - pt) * keys[j][i];
      }
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) grad(a, b) += r[a] * coef[b];
    }
    const double inv = 1.0 / static_cast<double>(budget.batch_contexts);
    grad *= inv;
    loss *= inv;
    if (!std::isfinite(loss) || !grad.all_finite())
      throw std::runtime_error("train_student: non-finite loss at step " + std::to_string(step));
    const double gnorm = frobenius_norm(grad);
    if (step == 0) fit.init_grad_norm = gnorm;
    if (step >= tail_from) tail_sum += gnorm;
    fit.losses.push_back(loss);

    const double lr = budget.lr * 0.5 *
                      (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                      static_cast<double>(budget.steps)));
    adamw_step(fit.omega.data(), grad.data(), moments, step + 1, lr, hyper);
  }
  fit.plateau_grad_norm = tail_sum / static_cast<double>(budget.steps - tail_from);
  return fit;
}

Matrix estimate_key_difference_moment(const Matrix& y, double p, std::size_t m,
                                      std::size_t n_samples, std::uint64_t seed) {
  require_positive(p > 0.0 && p < 1.0, "verify_lemma3: p must be in (0, 1)");
  require_positive(m >= 2, "verify_lemma3: m must be >= 2");
  require_positive(n_samples > 0, "verify_lemma3: n_samples must be positive");
  const std::size_t n = y.cols();
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  // E[d d^T] = Y E[c c^T] Y^T with c = a_j - a_1 in {-1, 0, 1}^N; accumulate
  // the integer moments of c exactly.
  std::vector<std::int64_t> acc(n * n, 0);
  std::vector<int> a1(n), c(n);
  std::vector<std::size_t> nz;
  nz.reserve(n);
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) a1[i] = unif(rng) < p;
    for (std::size_t j = 1; j < m; ++j) {
      nz.clear();
      for (std::size_t i = 0; i < n; ++i) {
        c[i] = static_cast<int>(unif(rng) < p) - a1[i];
        if (c[i] != 0) nz.push_back(i);
      }
      for (std::size_t a : nz)
        for (std::size_t b : nz) acc[a * n + b] += c[a] * c[b];
    }
  }
  Matrix cm(n, n);
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (std::size_t i = 0; i < n * n; ++i) cm.data()[i] = static_cast<double>(acc[i]) * inv;
  return matmul_nt(matmul(y, cm), y);
}

TheoremVerdict verify_lemma3(const Matrix& y, double p, std::size_t m, std::size_t n_samples,
                             std::uint64_t seed) {
  const Matrix est = estimate_key_difference_moment(y, p, m, n_samples, seed);
  const Matrix sigma_y = gram(y);
  const double factor = 2.0 * static_cast<double>(m - 1) * p * (1.0 - p);
  const Matrix expected = sigma_y * factor;
  TheoremVerdict v;
  v.theorem_id = "lemma3";
  v.note = describe({{"D", double(y.rows())},
                     {"N", double(y.cols())},
                     {"p", p},
                     {"m", double(m)},
                     {"samples", double(n_samples)}});
  v.checks.push_back({"relative_frobenius_error",
                      frobenius_norm(est - expected) / frobenius_norm(sigma_y),
                      5.0 / std::sqrt(static_cast<double>(n_samples)), 0.0});
  v.quantities.push_back({"factor", factor});
  v.quantities.push_back({"estimate_frobenius", frobenius_norm(est)});
  v.quantities.push_back({"expected_frobenius", frobenius_norm(expected)});
  return v;
}

namespace {

void require_conditioned(const FramePair& frames, double max_condition) {
  for (const Matrix* s : {&frames.sigma_x, &frames.sigma_y}) {
    const double k = condition_number(*s);
    if (!(k < max_condition)) throw IllConditioned(k);
  }
}

void add_alignment_checks(TheoremVerdict& v, const SvdResult& s, std::span<const double> target_u,
                          std::span<const double> target_v, const AlignmentTolerance& tol) {
  v.checks.push_back({"sin_u1", sin_angle(s.u.col(0), target_u), tol.sine, 0.0});
  v.checks.push_back({"sin_v1", sin_angle(s.v.col(0), target_v), tol.sine, 0.0});
}

}  // namespace

TheoremVerdict verify_theorem1(const FramePair& frames, const TeacherSpec& teacher, double p,
                               std::size_t m, const StudentBudget& budget,
                               const AlignmentTolerance& tol) {
  require_conditioned(frames, tol.max_condition);
  const StudentFit fit = train_student(frames, teacher.omega_t, p, m, budget);
  const SvdResult s = svd(fit.omega);
  TheoremVerdict v;
  v.theorem_id = "theorem1";
  v.note = describe({{"D", double(frames.x.rows())},
                     {"N", double(frames.x.cols())},
                     {"alpha", teacher.alpha},
                     {"p", p},
                     {"m", double(m)},
                     {"steps", double(budget.steps)}});
  v.checks.push_back({"sigma2_over_sigma1", s.sigma[1] / s.sigma[0], tol.rank_ratio, 0.0});
  add_alignment_checks(v, s, teacher.detector_u, teacher.detector_v, tol);
  v.quantities.push_back({"sigma1", s.sigma[0]});
  v.quantities.push_back({"teacher_sigma1", operator_norm(teacher.omega_t)});
  v.quantities.push_back({"relative_error", frobenius_norm(fit.omega - teacher.omega_t) /
                                                frobenius_norm(teacher.omega_t)});
  v.quantities.push_back({"final_loss", fit.losses.back()});
  v.quantities.push_back({"plateau_grad_norm", fit.plateau_grad_norm});
  return v;
}

FramePair tight_frames(const TightFrameSpec& spec) {
  Rng rng(spec.seed);
  Matrix x = antipodal_tight_frame(spec.d, spec.x_scale, rng);
  Matrix y = spec.shared ? x * (spec.y_scale / spec.x_scale)
                         : antipodal_tight_frame(spec.d, spec.y_scale, rng);
  return FramePair::from_features(std::move(x), std::move(y));
}

TheoremVerdict verify_theorem2(const TightFrameSpec& spec, double alpha, double p, std::size_t m,
                               const StudentBudget& budget, const AlignmentTolerance& tol) {
  const FramePair frames = tight_frames(spec);
  require_conditioned(frames, tol.max_condition);
  const TeacherSpec teacher = TeacherSpec::build(frames, alpha);
  const StudentFit fit = train_student(frames, teacher.omega_t, p, m, budget);
  const SvdResult s = svd(fit.omega);

  const double a = 2.0 * spec.x_scale * spec.x_scale;
  const double b = 2.0 * spec.y_scale * spec.y_scale;
  const Vector x1 = frames.x.col(0), y1 = frames.y.col(0);
  const double expected_sigma1 = alpha / (a * b) * norm2(x1) * norm2(y1);
  const double rel = std::abs(s.sigma[0] - expected_sigma1) / expected_sigma1;

  TheoremVerdict v;
  v.theorem_id = "theorem2";
  v.note = describe({{"D", double(spec.d)},
                     {"N", double(2 * spec.d)},
                     {"a", a},
                     {"b", b},
                     {"alpha", alpha},
                     {"steps", double(budget.steps)}});
  add_alignment_checks(v, s, x1, y1, tol);
  v.quantities.push_back({"sigma1", s.sigma[0]});
  v.quantities.push_back({"expected_sigma1", expected_sigma1});
  v.quantities.push_back({"sigma1_relative_error", rel});
  v.quantities.push_back({"scale_consistent", rel < tol.rank_ratio ? 1.0 : 0.0});
  v.quantities.push_back({"sigma2_over_sigma1", s.sigma[1] / s.sigma[0]});
  v.quantities.push_back(
      {"asymmetry", frobenius_norm(fit.omega - fit.omega.transposed()) / frobenius_norm(fit.omega)});
  return v;
}

double theorem3_bound(double ex, double ey) { return 8.0 * ex * ey + 4.0 * ex + 4.0 * ey; }

TheoremVerdict verify_theorem3(const FramePair& frames, double alpha) {
  require_positive(alpha > 0.0, "verify_theorem3: alpha must be positive");
  const double ex = frames.e_x_norm, ey = frames.e_y_norm;
  const double tau = 4.0 * ex * ey + 2.0 * ex + 2.0 * ey;
  TheoremVerdict v;
  v.theorem_id = "theorem3";
  v.note = describe({{"D", double(frames.x.rows())}, {"N", double(frames.x.cols())}});
  v.quantities.push_back({"e_x_norm", ex});
  v.quantities.push_back({"e_y_norm", ey});
  v.quantities.push_back({"tau", tau});
  if (!(ex < 0.5 && ey < 0.5 && tau < 0.5)) {
    v.applicable = false;
    v.note += " precondition violated";
    return v;
  }
  const TeacherSpec t = TeacherSpec::build(frames, alpha);
  const SvdResult s = svd(t.omega_t);
  const double bound = theorem3_bound(ex, ey);
  // Rounding floor on the angle of an exactly aligned rank-1 matrix.
  constexpr double kTol = 1e-10;
  v.checks.push_back({"sin_u1_x1", sin_angle(s.u.col(0), frames.x.col(0)), bound, kTol});
  v.checks.push_back({"sin_v1_y1", sin_angle(s.v.col(0), frames.y.col(0)), bound, kTol});
  v.quantities.push_back({"bound", bound});
  return v;
}

TheoremVerdict verify_theorem3(std::size_t d, std::size_t n, double target_ex, double target_ey,
                               double alpha, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x = near_isotropic_frame(d, n, target_ex, rng);
  Matrix y = near_isotropic_frame(d, n, target_ey, rng);
  return verify_theorem3(FramePair::from_features(std::move(x), std::move(y)), alpha);
}

Theorem3Audit audit_theorem3(std::size_t d, std::size_t n, double ex, double ey, std::size_t draws,
                             std::uint64_t seed) {
  Theorem3Audit a;
  a.worst_margin = std::numeric_limits<double>::infinity();
  Rng seeds(seed);
  std::uniform_real_distribution<double> alpha(0.5, 16.0);
  for (std::size_t i = 0; i < draws; ++i) {
    const TheoremVerdict v = verify_theorem3(d, n, ex, ey, alpha(seeds), seeds());
    ++a.draws;
    if (!v.applicable) continue;
    ++a.applicable;
    if (!v.bound_satisfied()) ++a.violations;
    a.worst_margin = std::min(a.worst_margin, v.margin());
  }
  return a;
}

// ---- orthogonalization -----------------------------------------------------

namespace {

struct TwoKeyTeacher {
  Matrix omega;
  Vector x1, y1;
};

TwoKeyTeacher two_key_teacher(const OrthogonalizationSetup& s) {
  if (!(s.sigma1 > s.sigma2 && s.sigma2 > 0.0))
    throw std::invalid_argument("verify_theorem4: need sigma1 > sigma2 > 0");
  if (s.d < 3) throw std::invalid_argument("verify_theorem4: d must be >= 3");
  if (!(s.p_star_a > 0.0 && s.p_star_a < 1.0 && s.p_star_b > 0.0 && s.p_star_b < 1.0))
    throw std::invalid_argument("verify_theorem4: teacher probabilities must be in (0, 1)");
  TwoKeyTeacher t;
  t.omega = Matrix(s.d, s.d);
  t.omega(0, 0) = s.sigma1;
  t.omega(1, 1) = s.sigma2;
  t.x1 = Vector(s.d, 0.0);
  t.x1[0] = 1.0;
  t.y1 = t.x1;
  return t;
}

struct Eval {
  double ce = 0.0;
  double objective = 0.0;
  Vector gx, gy;  // Euclidean gradients of the objective
};

Eval evaluate(const OrthogonalizationSetup& s, const TwoKeyTeacher& t, double lambda,
              const Vector& x2, const Vector& y2) {
  const std::size_t d = s.d;
  Vector diff(d);
  for (std::size_t i = 0; i < d; ++i) diff[i] = t.y1[i] - y2[i];
  const Vector od = matvec(t.omega, diff);
  const double da = dot(t.x1, od);
  const double db = dot(x2, od);
  const double c = dot(y2, t.y1);
  Eval e;
  e.ce = sigmoid_ce(s.p_star_a, da) + sigmoid_ce(s.p_star_b, db);
  e.objective = e.ce + 0.5 * lambda * c * c;
  const double ga = sigmoid(da) - s.p_star_a;
  const double gb = sigmoid(db) - s.p_star_b;
  const Vector otx1 = matvec_t(t.omega, t.x1);
  const Vector otx2 = matvec_t(t.omega, x2);
  e.gx.resize(d);
  e.gy.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    e.gx[i] = gb * od[i];
    e.gy[i] = -ga * otx1[i] - gb * otx2[i] + lambda * c * t.y1[i];
  }
  return e;
}

// Orthonormal basis (columns) of the complement of span(vs) in R^d.
Matrix complement_basis(std::size_t d, const std::vector<Vector>& vs) {
  std::vector<Vector> basis;
  auto orthogonalize = [&](Vector w, const std::vector<Vector>& against) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : against) {
        const double k = dot(w, b);
        for (std::size_t i = 0; i < d; ++i) w[i] -= k * b[i];
      }
    return w;
  };
  std::vector<Vector> span;
  for (const auto& v : vs) {
    Vector w = orthogonalize(v, span);
    const double n = norm2(w);
    if (n > 1e-12) {
      for (double& x : w) x /= n;
      span.push_back(std::move(w));
    }
  }
  for (std::size_t k = 0; k < d && span.size() + basis.size() < d; ++k) {
    Vector e(d, 0.0);
    e[k] = 1.0;
    std::vector<Vector> all = span;
    all.insert(all.end(), basis.begin(), basis.end());
    Vector w = orthogonalize(e, all);
    const double n = norm2(w);
    if (n > 1e-6) {
      for (double& x : w) x /= n;
      basis.push_back(std::move(w));
    }
  }
  return Matrix::from_columns(basis);
}

// Cholesky solve of (H + mu I) z = -g; false if not positive definite.
bool damped_solve(const Matrix& h, double mu, const Vector& g, Vector& z) {
  const std::size_t n = g.size();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = h(i, j) + (i == j ? mu : 0.0);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(acc > 0.0)) return false;
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  Vector w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = -g[i];
    for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * w[k];
    w[i] = acc / l(i, i);
  }
  z.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = w[i];
    for (std::size_t k = i + 1; k < n; ++k) acc -= l(k, i) * z[k];
    z[i] = acc / l(i, i);
  }
  return true;
}

// Damped Newton on the product of spheres, in a chart x = normalize(x0 + Bx z).
// With the constraint, y's chart basis also excludes y1 so iterates stay
// orthogonal to it.
struct SphereNewton {
  const OrthogonalizationSetup& s;
  const TwoKeyTeacher& t;
  double lambda;
  bool constrained;

  struct Chart {
    Vector x0, y0;
    Matrix bx, by;
  };

  Chart chart_at(const Vector& x, const Vector& y) const {
    Chart c{x, y, complement_basis(s.d, {x}), {}};
    c.by = constrained ? complement_basis(s.d, {t.y1, y}) : complement_basis(s.d, {y});
    return c;
  }

  std::size_t dims(const Chart& c) const { return c.bx.cols() + c.by.cols(); }

  void point(const Chart& c, const Vector& z, Vector& x, Vector& y, double& nx, double& ny) const {
    x = c.x0;
    y = c.y0;
    for (std::size_t k = 0; k < c.bx.cols(); ++k)
      for (std::size_t i = 0; i < s.d; ++i) x[i] += c.bx(i, k) * z[k];
    for (std::size_t k = 0; k < c.by.cols(); ++k)
      for (std::size_t i = 0; i < s.d; ++i) y[i] += c.by(i, k) * z[c.bx.cols() + k];
    nx = norm2(x);
    ny = norm2(y);
    for (double& v : x) v /= nx;
    for (double& v : y) v /= ny;
  }

  double value(const Chart& c, const Vector& z) const {
    Vector x, y;
    double nx, ny;
    point(c, z, x, y, nx, ny);
    return evaluate(s, t, lambda, x, y).objective;
  }

  Vector gradient(const Chart& c, const Vector& z) const {
    Vector x, y;
    double nx, ny;
    point(c, z, x, y, nx, ny);
    Eval e = evaluate(s, t, lambda, x, y);
    // d normalize(w) = (I - w^ w^T) / |w|
    const double px = dot(e.gx, x), py = dot(e.gy, y);
    for (std::size_t i = 0; i < s.d; ++i) {
      e.gx[i] = (e.gx[i] - px * x[i]) / nx;
      e.gy[i] = (e.gy[i] - py * y[i]) / ny;
    }
    Vector g(dims(c));
    const Vector gx = matvec_t(c.bx, e.gx);
    const Vector gy = matvec_t(c.by, e.gy);
    std::copy(gx.begin(), gx.end(), g.begin());
    std::copy(gy.begin(), gy.end(), g.begin() + static_cast<std::ptrdiff_t>(gx.size()));
    return g;
  }

  OrthogonalizationResult run(Vector x, Vector y, std::size_t iterations) const {
    OrthogonalizationResult out;
    double f = evaluate(s, t, lambda, x, y).objective;
    out.trace.push_back(f);
    for (std::size_t it = 0; it < iterations; ++it) {
      const Chart c = chart_at(x, y);
      const std::size_t n = dims(c);
      const Vector zero(n, 0.0);
      const Vector g = gradient(c, zero);
      if (norm2(g) < 1e-14) break;
      Matrix h(n, n);
      constexpr double kStep = 1e-6;
      for (std::size_t k = 0; k < n; ++k) {
        Vector zp = zero, zm = zero;
        zp[k] = kStep;
        zm[k] = -kStep;
        const Vector gp = gradient(c, zp), gm = gradient(c, zm);
        for (std::size_t r = 0; r < n; ++r) h(r, k) = (gp[r] - gm[r]) / (2.0 * kStep);
      }
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < a; ++b) h(a, b) = h(b, a) = 0.5 * (h(a, b) + h(b, a));
      Vector z;
      double mu = 0.0;
      while (!damped_solve(h, mu, g, z)) mu = mu == 0.0 ? 1e-10 * (1.0 + frobenius_norm(h)) : mu * 4.0;
      if (dot(z, g) >= 0.0) {
        z = g;
        for (double& v : z) v = -v;
      }
      // Armijo backtracking.
      double step = 1.0;
      const double slope = dot(z, g);
      bool moved = false;
      for (int k = 0; k < 60; ++k) {
        Vector zs = z;
        for (double& v : zs) v *= step;
        const double fn = value(c, zs);
        if (!std::isfinite(fn)) throw std::runtime_error("verify_theorem4: optimization diverged");
        if (fn <= f + 1e-4 * step * slope) {
          double nx, ny;
          point(c, zs, x, y, nx, ny);
          moved = fn < f;
          f = fn;
          break;
        }
        step *= 0.5;
      }
      out.trace.push_back(f);
      if (!moved) break;
    }
    out.x2 = std::move(x);
    out.y2 = std::move(y);
    out.objective = f;
    out.ce = evaluate(s, t, 0.0, out.x2, out.y2).ce;
    return out;
  }
};

}  // namespace

double orthogonalization_ce(const OrthogonalizationSetup& s, const Vector& x2, const Vector& y2) {
  return evaluate(s, two_key_teacher(s), 0.0, x2, y2).ce;
}

double orthogonalization_objective(const OrthogonalizationSetup& s, const Vector& x2,
                                   const Vector& y2) {
  return evaluate(s, two_key_teacher(s), s.lambda, x2, y2).objective;
}

OrthogonalizationResult minimize_orthogonalization(const OrthogonalizationSetup& s, double lambda,
                                                   Constraint c, const OrthogonalizationBudget& b) {
  const TwoKeyTeacher t = two_key_teacher(s);
  const bool constrained = c == Constraint::y2_orthogonal_to_y1;
  const SphereNewton solver{s, t, lambda, constrained};
  Rng rng(b.seed);

  auto project = [&](Vector y) {
    if (constrained) {
      const double k = dot(y, t.y1);
      for (std::size_t i = 0; i < s.d; ++i) y[i] -= k * t.y1[i];
    }
    return normalized(y);
  };

  std::vector<std::pair<Vector, Vector>> starts;
  if (b.init) starts.push_back({normalized(b.init->first), project(b.init->second)});
  for (std::size_t i = 0; i < b.starts; ++i) {
    Vector x = gaussian_matrix(s.d, 1, rng).col(0);
    Vector y = gaussian_matrix(s.d, 1, rng).col(0);
    starts.push_back({normalized(x), project(y)});
  }
  std::optional<OrthogonalizationResult> best;
  for (const auto& [x, y] : starts) {
    OrthogonalizationResult r = solver.run(x, y, b.iterations);
    if (!best || r.objective < best->objective) best = std::move(r);
  }
  return *best;
}

TheoremVerdict verify_theorem4(const OrthogonalizationSetup& s, const OrthogonalizationBudget& b) {
  const TwoKeyTeacher t = two_key_teacher(s);
  const OrthogonalizationResult sol =
      minimize_orthogonalization(s, s.lambda, Constraint::none, b);
  const double overlap = std::abs(dot(sol.y2, t.y1));

  TheoremVerdict v;
  v.theorem_id = "theorem4";
  v.note = describe({{"sigma1", s.sigma1},
                     {"sigma2", s.sigma2},
                     {"p_star_a", s.p_star_a},
                     {"p_star_b", s.p_star_b},
                     {"lambda", s.lambda}});
  v.quantities.push_back({"objective", sol.objective});
  v.quantities.push_back({"ce", sol.ce});
  if (s.lambda <= 0.0) {
    v.applicable = false;
    v.note += " penalty disabled";
    v.quantities.push_back({"y2_dot_y1", overlap});
    return v;
  }
  const OrthogonalizationResult free_ce = minimize_orthogonalization(s, 0.0, Constraint::none, b);
  const OrthogonalizationResult comparison =
      minimize_orthogonalization(s, 0.0, Constraint::y2_orthogonal_to_y1, b);
  const double inf_ce = std::min(free_ce.ce, sol.ce);
  const double gap = std::max(0.0, comparison.ce - inf_ce);
  // Slack for the finite precision of the three inner optimizations.
  constexpr double kTol = 1e-9;
  v.checks.push_back({"y2_dot_y1", overlap, std::sqrt(2.0 / s.lambda * gap), kTol});
  v.quantities.push_back({"inf_ce", inf_ce});
  v.quantities.push_back({"comparison_ce", comparison.ce});
  v.quantities.push_back({"gap", gap});
  return v;
}

std::vector<TheoremVerdict> verify_all(std::size_t lemma3_samples,
                                       const std::vector<std::string>& only) {
  auto wanted = [&](const std::string& id) {
    return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
  };
  std::vector<TheoremVerdict> out;

  if (wanted("lemma3")) {
    out.push_back(verify_lemma3(Matrix::identity(8), 0.5, 4, lemma3_samples, 101));
    Rng rng(102);
    out.push_back(verify_lemma3(random_unit_frame(6, 9, rng), 0.3, 2, lemma3_samples, 103));
    out.push_back(verify_lemma3(random_unit_frame(5, 12, rng), 0.1, 8, lemma3_samples, 104));
  }
  if (wanted("theorem1")) {
    Rng rng(201);
    Matrix x = random_unit_frame(6, 9, rng);
    Matrix y = random_unit_frame(6, 9, rng);
    const FramePair frames = FramePair::from_features(std::move(x), std::move(y));
    out.push_back(verify_theorem1(frames, TeacherSpec::build(frames, 8.0), 0.5, 4, {}));
  }
  if (wanted("theorem2")) {
    out.push_back(verify_theorem2(TightFrameSpec{}, 8.0, 0.5, 4, {}));
  }
  if (wanted("theorem3")) {
    out.push_back(verify_theorem3(4, 8, 0.1, 0.0, 8.0, 301));
    const Theorem3Audit audit = audit_theorem3(4, 8, 0.05, 0.05, 100, 302);
    TheoremVerdict v;
    v.theorem_id = "theorem3";
    v.note = "audit of 100 draws at |E_X| = |E_Y| = 0.05";
    v.checks.push_back({"violations", static_cast<double>(audit.violations), 0.0, 0.0});
    v.quantities.push_back({"draws", static_cast<double>(audit.draws)});
    v.quantities.push_back({"applicable", static_cast<double>(audit.applicable)});
    v.quantities.push_back({"worst_margin", audit.worst_margin});
    v.applicable = audit.applicable == audit.draws;
    out.push_back(std::move(v));
  }
  if (wanted("theorem4")) {
    out.push_back(verify_theorem4(OrthogonalizationSetup{}));
  }
  return out;
}

}  // namespace svf::theory
