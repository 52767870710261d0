#include "gtp/nnls.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include <Eigen/Jacobi>

namespace gtp {
namespace {

// A column is treated as dependent on the passive set when its component
// orthogonal to the current factor is below this fraction of its norm.
constexpr double kDependentTol = 1e-12;

// Thin QR of the passive columns, updated by appends (two-pass Gram-Schmidt)
// and deletions (Givens re-triangularization). Also tracks Q^T b.
class IncrementalQr {
 public:
  IncrementalQr(const Eigen::Ref<const Vector>& b, Index capacity)
      : b_(b), q_(b.size(), capacity), r_(Matrix::Zero(capacity, capacity)), qtb_(Vector::Zero(capacity)) {}

  Index size() const noexcept { return k_; }

  bool append(const Eigen::Ref<const Vector>& col) {
    if (k_ == q_.cols()) return false;
    const double norm = col.norm();
    if (norm == 0.0) return false;
    Vector v = col;
    Vector h = Vector::Zero(k_);
    const auto qk = q_.leftCols(k_);
    for (int pass = 0; pass < 2; ++pass) {
      const Vector c = qk.transpose() * v;
      v.noalias() -= qk * c;
      h += c;
    }
    const double diag = v.norm();
    if (diag <= kDependentTol * norm) return false;
    q_.col(k_) = v / diag;
    r_.col(k_).head(k_) = h;
    r_(k_, k_) = diag;
    qtb_(k_) = q_.col(k_).dot(b_);
    ++k_;
    return true;
  }

  void remove(Index pos) {
    for (Index c = pos; c + 1 < k_; ++c) r_.col(c).head(k_) = r_.col(c + 1).head(k_);
    r_.col(k_ - 1).setZero();
    for (Index c = pos; c + 1 < k_; ++c) {
      Eigen::JacobiRotation<double> g;
      g.makeGivens(r_(c, c), r_(c + 1, c));
      r_.topLeftCorner(k_, k_ - 1).applyOnTheLeft(c, c + 1, g.adjoint());
      r_(c + 1, c) = 0.0;
      q_.leftCols(k_).applyOnTheRight(c, c + 1, g);
      qtb_.head(k_).applyOnTheLeft(c, c + 1, g.adjoint());
    }
    --k_;
    r_.row(k_).setZero();
    qtb_(k_) = 0.0;
  }

  Vector solve() const {
    return r_.topLeftCorner(k_, k_).triangularView<Eigen::Upper>().solve(qtb_.head(k_));
  }

 private:
  Eigen::Ref<const Vector> b_;
  Matrix q_;
  Matrix r_;
  Vector qtb_;
  Index k_ = 0;
};

}  // namespace

double kkt_violation(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& b, const Vector& w) {
  const Vector grad = a.transpose() * (a * w - b);
  const double scale = (a.transpose() * b).cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (Index j = 0; j < w.size(); ++j) {
    worst = std::max(worst, w(j) > 0.0 ? std::abs(grad(j)) : std::max(0.0, -grad(j)));
  }
  return scale > 0.0 ? worst / scale : worst;
}

NnlsResult solve_nnls(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& b,
                      const NnlsOptions& options, std::span<const Index> warm_start) {
  const Index m = a.rows();
  const Index k = a.cols();
  if (m < 1 || k < 1) throw ValidationError("solve_nnls: empty system");
  if (b.size() != m) throw ValidationError("solve_nnls: b length does not match rows of A");
  if (!a.allFinite() || !b.allFinite()) throw ValidationError("solve_nnls: non-finite input");
  if (options.max_iter < 0) throw ValidationError("solve_nnls: max_iter must be positive");
  if (!(options.tol >= 0.0)) throw ValidationError("solve_nnls: tol must be non-negative");

  const Index max_iter = options.max_iter > 0 ? options.max_iter : 3 * k;
  NnlsResult res;
  res.weights = Vector::Zero(k);

  if (b.isZero(0.0)) {
    res.converged = true;
    return res;
  }

  const double scale = (a.transpose() * b).cwiseAbs().maxCoeff();
  const double threshold = options.tol * scale;

  Vector& x = res.weights;
  IncrementalQr qr(b, std::min(m, k));
  std::vector<Index> passive;  // column index per QR position
  std::vector<char> in_passive(static_cast<std::size_t>(k), 0);
  std::vector<char> rejected(static_cast<std::size_t>(k), 0);

  auto drop_position = [&](std::size_t p) {
    in_passive[static_cast<std::size_t>(passive[p])] = 0;
    x(passive[p]) = 0.0;
    qr.remove(static_cast<Index>(p));
    passive.erase(passive.begin() + static_cast<std::ptrdiff_t>(p));
  };

  Vector z;
  if (!warm_start.empty()) {
    for (Index j : warm_start) {
      if (j < 0 || j >= k) throw ValidationError("solve_nnls: warm start index out of range");
      if (in_passive[static_cast<std::size_t>(j)] || !qr.append(a.col(j))) continue;
      passive.push_back(j);
      in_passive[static_cast<std::size_t>(j)] = 1;
    }
    // Shrink until the unconstrained passive solution is strictly positive.
    while (!passive.empty()) {
      z = qr.solve();
      ++res.iterations;
      Index worst = 0;
      for (Index p = 1; p < z.size(); ++p) {
        if (z(p) < z(worst)) worst = p;
      }
      if (z(worst) > 0.0) break;
      drop_position(static_cast<std::size_t>(worst));
    }
    for (std::size_t p = 0; p < passive.size(); ++p) x(passive[p]) = z(static_cast<Index>(p));
  }

  Vector resid = b - a * x;
  double last_norm = resid.norm();
  Index stalled = 0;
  bool clean_exit = false;

  while (res.iterations < max_iter) {
    const Vector grad = a.transpose() * resid;
    Index enter = -1;
    double best = threshold;
    bool blocked = false;
    for (Index j = 0; j < k; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      if (in_passive[ju] || grad(j) <= threshold) continue;
      if (rejected[ju]) {
        blocked = true;
        continue;
      }
      if (grad(j) > best) {
        best = grad(j);
        enter = j;
      }
    }
    if (enter < 0) {
      clean_exit = !blocked;
      break;
    }

    if (!qr.append(a.col(enter))) {
      rejected[static_cast<std::size_t>(enter)] = 1;
      continue;
    }
    passive.push_back(enter);
    in_passive[static_cast<std::size_t>(enter)] = 1;
    z = qr.solve();
    ++res.iterations;
    if (z(z.size() - 1) <= 0.0) {
      // Roundoff made the entering column useless; undo and skip it.
      passive.pop_back();
      in_passive[static_cast<std::size_t>(enter)] = 0;
      qr.remove(qr.size() - 1);
      rejected[static_cast<std::size_t>(enter)] = 1;
      continue;
    }

    // Inner loop: step toward z until feasible, dropping columns that hit 0.
    while (z.minCoeff() <= 0.0 && res.iterations < max_iter) {
      double alpha = std::numeric_limits<double>::infinity();
      std::size_t blocking = 0;
      for (std::size_t p = 0; p < passive.size(); ++p) {
        const double zp = z(static_cast<Index>(p));
        if (zp > 0.0) continue;
        const double xp = x(passive[p]);
        const double step = xp / (xp - zp);
        if (step < alpha) {
          alpha = step;
          blocking = p;
        }
      }
      for (std::size_t p = 0; p < passive.size(); ++p) {
        const Index j = passive[p];
        x(j) += alpha * (z(static_cast<Index>(p)) - x(j));
      }
      x(passive[blocking]) = 0.0;
      for (std::size_t p = passive.size(); p-- > 0;) {
        if (x(passive[p]) <= 0.0) drop_position(p);
      }
      if (passive.empty()) {
        z.resize(0);
        break;
      }
      z = qr.solve();
      ++res.iterations;
    }
    if (z.size() > 0 && z.minCoeff() <= 0.0) break;  // out of iterations mid-step; x is the feasible iterate
    for (std::size_t p = 0; p < passive.size(); ++p) x(passive[p]) = z(static_cast<Index>(p));
    std::fill(rejected.begin(), rejected.end(), 0);

    resid = b;
    for (Index j : passive) resid.noalias() -= x(j) * a.col(j);
    const double norm = resid.norm();
    if (norm < last_norm) {
      stalled = 0;
    } else if (++stalled >= k) {
      break;
    }
    last_norm = norm;
  }

  for (Index j = 0; j < k; ++j) {
    if (!(x(j) > 0.0)) x(j) = 0.0;
  }
  res.residual_norm = (a * x - b).norm();
  res.converged = clean_exit;
  res.kkt_violation = kkt_violation(a, b, x);
  return res;
}

}  // namespace gtp
