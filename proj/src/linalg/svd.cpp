#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "svf/kernels.hpp"
#include "svf/linalg.hpp"

namespace svf {
namespace {

// Extends the orthonormal rows already present in basis (rows [0, filled))
// with unit vectors orthogonal to them, in place for each row flagged missing.
void complete_orthonormal_rows(Matrix& basis, const std::vector<bool>& missing) {
  const std::size_t dim = basis.cols();
  const auto& k = kernels::active();
  std::vector<std::size_t> done;
  for (std::size_t r = 0; r < basis.rows(); ++r)
    if (!missing[r]) done.push_back(r);

  for (std::size_t r = 0; r < basis.rows(); ++r) {
    if (!missing[r]) continue;
    Vector best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < dim; ++e) {
      Vector cand(dim, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t d : done) {
          const double proj = k.dot(basis.row(d).data(), cand.data(), dim);
          k.axpy(-proj, basis.row(d).data(), cand.data(), dim);
        }
      }
      const double n = std::sqrt(k.dot(cand.data(), cand.data(), dim));
      if (n > best_norm) {
        best_norm = n;
        best = std::move(cand);
      }
      if (best_norm > 0.5) break;
    }
    for (double& x : best) x /= best_norm;
    std::copy(best.begin(), best.end(), basis.row(r).begin());
    done.push_back(r);
  }
}

// Jacobi on the rows of g (the columns of the original tall matrix); the
// same rotations are applied to the rows of vt.
void jacobi_sweeps(Matrix& g, Matrix& vt, const SvdOptions& opt, double scale) {
  const auto& k = kernels::active();
  const std::size_t n = g.rows();
  const std::size_t len = g.cols();
  const double negligible = std::pow(std::numeric_limits<double>::epsilon() * scale, 2);

  double worst = 0.0;
  for (std::size_t sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    bool rotated = false;
    worst = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double* gi = g.row(i).data();
        double* gj = g.row(j).data();
        const kernels::Gram2 gr = k.gram2(gi, gj, len);
        if (gr.xx <= negligible || gr.yy <= negligible || gr.xy == 0.0) continue;
        const double off = std::abs(gr.xy) / std::sqrt(gr.xx * gr.yy);
        worst = std::max(worst, off);
        if (off <= opt.tolerance) continue;
        const double zeta = (gr.yy - gr.xx) / (2.0 * gr.xy);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        k.rotate(gi, gj, c, s, len);
        k.rotate(vt.row(i).data(), vt.row(j).data(), c, s, vt.cols());
        rotated = true;
      }
    }
    if (!rotated) return;
  }
  throw SvdNoConvergence(opt.max_sweeps, worst);
}

SvdResult svd_tall(const Matrix& a, const SvdOptions& opt) {
  const std::size_t n = a.cols();
  const std::size_t m = a.rows();
  Matrix g = a.transposed();
  Matrix vt = Matrix::identity(n);
  const double scale = std::max(frobenius_norm(a), std::numeric_limits<double>::min());
  jacobi_sweeps(g, vt, opt, scale);

  Vector norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = norm2(g.row(i));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double zero_cut = std::numeric_limits<double>::epsilon() * scale * 8.0;
  Matrix ut(n, m);
  Matrix vt_sorted(n, n);
  Vector sigma(n);
  std::vector<bool> missing(n, false);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = order[r];
    const auto vrow = vt.row(src);
    std::copy(vrow.begin(), vrow.end(), vt_sorted.row(r).begin());
    if (norms[src] > zero_cut) {
      sigma[r] = norms[src];
      const auto grow = g.row(src);
      for (std::size_t c = 0; c < m; ++c) ut(r, c) = grow[c] / norms[src];
    } else {
      sigma[r] = 0.0;
      missing[r] = true;
    }
  }
  if (std::any_of(missing.begin(), missing.end(), [](bool b) { return b; }))
    complete_orthonormal_rows(ut, missing);

  for (std::size_t r = 0; r < n; ++r) {
    auto urow = ut.row(r);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < m; ++c)
      if (std::abs(urow[c]) > std::abs(urow[arg])) arg = c;
    if (urow[arg] < 0.0) {
      for (double& x : urow) x = -x;
      for (double& x : vt_sorted.row(r)) x = -x;
    }
  }
  return SvdResult{ut.transposed(), std::move(sigma), vt_sorted.transposed()};
}

}  // namespace

SvdNoConvergence::SvdNoConvergence(std::size_t sweeps, double off_diagonal)
    : std::runtime_error("svd: Jacobi iteration did not converge after " + std::to_string(sweeps) +
                         " sweeps (max off-diagonal " + std::to_string(off_diagonal) + ")"),
      sweeps_(sweeps),
      off_diagonal_(off_diagonal) {}

Matrix SvdResult::reconstruct() const {
  Matrix us = u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= sigma[c];
  return matmul_nt(us, v);
}

SvdResult svd(const Matrix& a, const SvdOptions& options) {
  if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("svd: empty matrix");
  if (!a.all_finite()) throw std::invalid_argument("svd: non-finite entries");
  if (a.rows() >= a.cols()) return svd_tall(a, options);

  SvdResult t = svd_tall(a.transposed(), options);
  SvdResult out{std::move(t.v), std::move(t.sigma), std::move(t.u)};
  apply_sign_convention(out);
  return out;
}

void apply_sign_convention(SvdResult& s) {
  for (std::size_t c = 0; c < s.u.cols(); ++c) {
    std::size_t arg = 0;
    for (std::size_t r = 1; r < s.u.rows(); ++r)
      if (std::abs(s.u(r, c)) > std::abs(s.u(arg, c))) arg = r;
    if (s.u(arg, c) < 0.0) {
      for (std::size_t r = 0; r < s.u.rows(); ++r) s.u(r, c) = -s.u(r, c);
      for (std::size_t r = 0; r < s.v.rows(); ++r) s.v(r, c) = -s.v(r, c);
    }
  }
}

SvdResult svd_product_tn(const Matrix& a, const Matrix& b, const SvdOptions& options) {
  if (a.rows() != b.rows()) throw std::invalid_argument("svd_product_tn: row counts differ");
  if (a.rows() > a.cols() || b.rows() > b.cols())
    throw std::invalid_argument("svd_product_tn: factors must be wide");
  // a^T = Ua Sa Va^T, b^T = Ub Sb Vb^T, so a^T b = Ua (Sa Va^T Vb Sb) Ub^T.
  const SvdResult fa = svd(a.transposed(), options);
  const SvdResult fb = svd(b.transposed(), options);
  Matrix core = matmul_tn(fa.v, fb.v);
  for (std::size_t r = 0; r < core.rows(); ++r)
    for (std::size_t c = 0; c < core.cols(); ++c) core(r, c) *= fa.sigma[r] * fb.sigma[c];
  const SvdResult fc = svd(core, options);
  SvdResult out{matmul(fa.u, fc.u), fc.sigma, matmul(fb.u, fc.v)};
  apply_sign_convention(out);
  return out;
}

double operator_norm(const Matrix& a) { return svd(a).sigma.front(); }

Matrix pseudo_inverse(const Matrix& a, double rel_threshold) {
  const SvdResult s = svd(a);
  Matrix vs = s.v;
  const double cut = rel_threshold * s.sigma.front();
  for (std::size_t c = 0; c < vs.cols(); ++c) {
    const double inv = (s.sigma[c] > cut && s.sigma[c] > 0.0) ? 1.0 / s.sigma[c] : 0.0;
    for (std::size_t r = 0; r < vs.rows(); ++r) vs(r, c) *= inv;
  }
  return matmul_nt(vs, s.u);
}

double condition_number(const Matrix& a) {
  const SvdResult s = svd(a);
  if (s.sigma.back() <= 0.0) return std::numeric_limits<double>::infinity();
  return s.sigma.front() / s.sigma.back();
}

}  // namespace svf
