#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gtp/design.hpp"
#include "gtp/nnls.hpp"
#include "gtp/types.hpp"

namespace gtp {

enum class CorrelationMode {
  residual,        // p = A^T r^{k-1}
  target_literal,  // p = A^T b on every iteration
};

const char* to_string(CorrelationMode mode);
CorrelationMode parse_correlation_mode(std::string_view name);

inline constexpr double kEarlyExitTol = 1e-8;

struct PursuitConfig {
  Index budget = 1;      // M
  Index iterations = 1;  // K
  CorrelationMode correlation_mode = CorrelationMode::residual;
  double nnls_tol = kDefaultNnlsTol;
  Index nnls_max_iter = 0;  // 0: solver default
  std::uint64_t seed = 0;   // random baseline only
  bool early_exit = false;  // stop once |r^k - r^{k-1}| / ||b|| < kEarlyExitTol
  unsigned n_threads = 1;   // correlation product only

  NnlsOptions nnls() const { return {nnls_tol, nnls_max_iter}; }
};

struct Selection {
  std::string algorithm;
  IndexList indices;
  Vector weights;  // aligned with indices

  // residual_history.back() is the residual of the reported selection, except
  // for distributed runs, where history holds the per-iteration residuals of
  // the machines' local fits and final_residual comes from the global refit.
  // The last per_iteration_supports.size() entries correspond one-to-one with
  // per_iteration_supports / per_iteration_weights.
  std::vector<double> residual_history;
  std::vector<IndexList> per_iteration_supports;
  std::vector<Vector> per_iteration_weights;

  // Distributed runs only: gather-summed local weights of the last
  // iteration, aligned with indices.
  Vector aggregated_weights;

  double final_residual = 0.0;  // ||b - A_S w|| for indices / weights
  bool pool_clamped = false;    // 2M > N
  Index padded_iterations = 0;  // iterations whose NNLS left < M positive weights
  Index nnls_nonconverged = 0;

  PursuitConfig config;
  std::vector<std::pair<std::string, double>> timings;  // phase -> seconds
};

// p_j = A.col(j) . c, computed column by column with a fixed summation order
// so results are bit-identical for any thread count.
Vector correlate(const Matrix& a, const Vector& c, unsigned n_threads = 1);
double column_dot(const double* x, const double* y, Index n);

// The `count` largest scores, largest first; equal scores go to the lower index.
IndexList top_indices(const Vector& scores, Index count);

Matrix gather_columns(const Matrix& a, std::span<const Index> indices);

// Omega (top pool_size of p) united with the previous support, sorted ascending.
IndexList candidate_pool(const Vector& correlations, Index pool_size, std::span<const Index> previous);

// Top `budget` of the pool by weight among strictly positive entries; padded
// with the highest-correlation indices not yet chosen. Sorted ascending.
IndexList prune_support(std::span<const Index> pool, const Vector& pool_weights, const Vector& correlations,
                        Index budget, bool* padded = nullptr);

Selection iter_cosamp(const DesignSystem& design, const PursuitConfig& config);
Selection top_k_select(const DesignSystem& design, Index budget, const NnlsOptions& nnls = {});
Selection omp_select(const DesignSystem& design, Index budget, const NnlsOptions& nnls = {});

IndexList random_indices(Index n, Index budget, std::uint64_t seed);
Selection random_select(const DesignSystem& design, Index budget, std::uint64_t seed, const NnlsOptions& nnls = {});

// ||b - A_S w||; an empty support gives ||b||.
double compute_residual(const DesignSystem& design, std::span<const Index> indices, const Vector& weights);

}  // namespace gtp
