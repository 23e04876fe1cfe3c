#pragma once

// Numerical checks of the student-teacher results: the key-difference moment
// identity, rank-1 minimizer, exact alignment for tight frames, the
// near-isotropy angle bound and the orthogonalization bound.
//
// Tokens here are unweighted sums of unit features: r = sum of a random subset
// of X (each kept with probability p), keys likewise from Y.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "svf/linalg.hpp"

namespace svf::theory {

struct Check {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  double tolerance = 0.0;

  bool satisfied() const { return measured <= bound + tolerance; }
  double margin() const { return bound - measured; }
};

struct Quantity {
  std::string name;
  double value = 0.0;
};

struct TheoremVerdict {
  std::string theorem_id;
  bool applicable = true;
  std::string note;
  std::vector<Check> checks;
  std::vector<Quantity> quantities;

  // Recomputed from the stored checks on every call.
  bool bound_satisfied() const;
  double margin() const;
  std::optional<double> quantity(const std::string& name) const;
};

struct FramePair {
  Matrix x;  // D x N
  Matrix y;  // D x N
  Matrix sigma_x;
  Matrix sigma_y;
  Matrix e_x;  // (D/N) sigma_x - I
  Matrix e_y;
  double e_x_norm = 0.0;
  double e_y_norm = 0.0;

  static FramePair from_features(Matrix x, Matrix y);
};

struct TeacherSpec {
  double alpha = 8.0;
  Vector detector_u;  // Sigma_X^+ x_1
  Vector detector_v;  // Sigma_Y^+ y_1
  Matrix omega_t;

  static TeacherSpec build(const FramePair& frames, double alpha, std::size_t feature = 0);
};

// D x N with unit columns drawn uniformly on the sphere.
Matrix random_unit_frame(std::size_t d, std::size_t n, Rng& rng);
// Union of n / d random orthonormal bases (n must be a multiple of d): X X^T = (n/d) I.
Matrix union_of_bases_frame(std::size_t d, std::size_t n, Rng& rng);
// c * [Q, -Q] for a random orthogonal Q: X X^T = 2 c^2 I.
Matrix antipodal_tight_frame(std::size_t d, double scale, Rng& rng);
// Tight frame deformed by (I + tS), columns renormalized, with t bisected so
// that ||E||_2 lands within 1% of target.
Matrix near_isotropic_frame(std::size_t d, std::size_t n, double target_e_norm, Rng& rng);

struct StudentBudget {
  std::size_t steps = 3000;
  std::size_t batch_contexts = 2048;
  double lr = 0.05;
  std::uint64_t seed = 11;
  bool init_at_teacher = false;
  double init_scale = 0.1;
};

struct StudentFit {
  Matrix omega;
  double init_sigma1 = 0.0;
  double init_grad_norm = 0.0;
  // Mean gradient norm over the last tenth of training.
  double plateau_grad_norm = 0.0;
  std::vector<double> losses;
};

class IllConditioned : public std::runtime_error {
 public:
  explicit IllConditioned(double condition);
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

// Trains an unconstrained D x D student against the teacher by minibatch
// cross-entropy with AdamW and cosine decay.
StudentFit train_student(const FramePair& frames, const Matrix& omega_t, double p, std::size_t m,
                         const StudentBudget& budget);

// Monte-Carlo E[Delta Delta^T] for key differences d_j = s_j - s_1.
Matrix estimate_key_difference_moment(const Matrix& y, double p, std::size_t m,
                                      std::size_t n_samples, std::uint64_t seed);

TheoremVerdict verify_lemma3(const Matrix& y, double p, std::size_t m, std::size_t n_samples,
                             std::uint64_t seed);

struct AlignmentTolerance {
  double rank_ratio = 0.05;
  double sine = 0.05;
  double max_condition = 1e6;
};

TheoremVerdict verify_theorem1(const FramePair& frames, const TeacherSpec& teacher, double p,
                               std::size_t m, const StudentBudget& budget,
                               const AlignmentTolerance& tol = {});

struct TightFrameSpec {
  std::size_t d = 4;
  double x_scale = 1.0;
  double y_scale = 1.0;
  std::uint64_t seed = 5;
  bool shared = false;  // Y = X
};

FramePair tight_frames(const TightFrameSpec& spec);

TheoremVerdict verify_theorem2(const TightFrameSpec& spec, double alpha, double p, std::size_t m,
                               const StudentBudget& budget, const AlignmentTolerance& tol = {});

// 8 ex ey + 4 ex + 4 ey
double theorem3_bound(double ex, double ey);

TheoremVerdict verify_theorem3(const FramePair& frames, double alpha);
TheoremVerdict verify_theorem3(std::size_t d, std::size_t n, double target_ex, double target_ey,
                               double alpha, std::uint64_t seed);

struct Theorem3Audit {
  std::size_t draws = 0;
  std::size_t applicable = 0;
  std::size_t violations = 0;
  double worst_margin = 0.0;
};

Theorem3Audit audit_theorem3(std::size_t d, std::size_t n, double ex, double ey, std::size_t draws,
                             std::uint64_t seed);

struct OrthogonalizationSetup {
  std::size_t d = 4;
  double sigma1 = 3.0;
  double sigma2 = 1.0;
  double p_star_a = 0.8807970779778823;  // sigmoid(2)
  double p_star_b = 0.7310585786300049;  // sigmoid(1)
  double lambda = 1e4;
};

struct OrthogonalizationBudget {
  std::size_t starts = 16;
  std::size_t iterations = 4000;
  std::uint64_t seed = 3;
  // Optional starting point (x2, y2) tried in addition to random starts.
  std::optional<std::pair<Vector, Vector>> init;
};

struct OrthogonalizationResult {
  Vector x2;
  Vector y2;
  double objective = 0.0;
  double ce = 0.0;
  std::vector<double> trace;  // objective per iteration of the winning start
};

// Two-key cross-entropy terms for contexts A (query x1) and B (query x2).
double orthogonalization_ce(const OrthogonalizationSetup& s, const Vector& x2, const Vector& y2);
double orthogonalization_objective(const OrthogonalizationSetup& s, const Vector& x2,
                                   const Vector& y2);

enum class Constraint { none, y2_orthogonal_to_y1 };
OrthogonalizationResult minimize_orthogonalization(const OrthogonalizationSetup& s, double lambda,
                                                   Constraint c, const OrthogonalizationBudget& b);

TheoremVerdict verify_theorem4(const OrthogonalizationSetup& s, const OrthogonalizationBudget& b = {});

// Every check at its default parameter points.
std::vector<TheoremVerdict> verify_all(std::size_t lemma3_samples = 1000000,
                                       const std::vector<std::string>& only = {});

}  // namespace svf::theory
