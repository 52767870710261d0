#pragma once

#include <span>

#include "gtp/types.hpp"

namespace gtp {

inline constexpr double kDefaultNnlsTol = 1e-10;

struct NnlsOptions {
  // Relative to ||A^T b||_inf.
  double tol = kDefaultNnlsTol;
  // Total least-squares solves (outer + inner steps); 0 means 3 * k.
  Index max_iter = 0;
};

struct NnlsResult {
  Vector weights;  // all >= 0, exactly +0.0 off the passive set
  double residual_norm = 0.0;
  Index iterations = 0;
  bool converged = false;
  double kkt_violation = 0.0;  // relative, see kkt_violation()
};

// Lawson-Hanson active-set solve of min ||A w - b|| subject to w >= 0.
//
// A column enters the passive set only if its reduced gradient
// (A^T (b - A w))_j exceeds tol * ||A^T b||_inf; ties go to the lowest
// column index. The passive least-squares problem is kept as an
// incrementally updated QR factorization. warm_start optionally seeds the
// passive set; it only changes the path, not the optimality conditions.
NnlsResult solve_nnls(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& b,
                      const NnlsOptions& options = {}, std::span<const Index> warm_start = {});

// Largest violation of the NNLS optimality conditions at w, divided by
// ||A^T b||_inf (or unscaled when that is zero). With G = A^T (A w - b):
// |G_j| for w_j > 0, max(0, -G_j) for w_j = 0.
double kkt_violation(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& b, const Vector& w);

}  // namespace gtp
