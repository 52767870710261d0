#include "gtp/pursuit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "gtp/rng.hpp"

namespace gtp {

const char* to_string(CorrelationMode mode) {
  return mode == CorrelationMode::residual ? "residual" : "target_literal";
}

CorrelationMode parse_correlation_mode(std::string_view name) {
  if (name == "residual") return CorrelationMode::residual;
  if (name == "target_literal") return CorrelationMode::target_literal;
  throw ValidationError("unknown correlation mode '" + std::string(name) + "'");
}

namespace {

using Clock = std::chrono::steady_clock;

class PhaseTimer {
 public:
  explicit PhaseTimer(std::vector<std::pair<std::string, double>>& sink) : sink_(sink) {}

  template <typename F>
  decltype(auto) run(const std::string& phase, F&& f) {
    const auto start = Clock::now();
    struct Record {
      PhaseTimer* self;
      const std::string& phase;
      Clock::time_point start;
      ~Record() { self->add(phase, std::chrono::duration<double>(Clock::now() - start).count()); }
    } record{this, phase, start};
    return f();
  }

  void add(const std::string& phase, double seconds) {
    for (auto& [name, total] : sink_) {
      if (name == phase) {
        total += seconds;
        return;
      }
    }
    sink_.emplace_back(phase, seconds);
  }

 private:
  std::vector<std::pair<std::string, double>>& sink_;
};

void check_budget(const DesignSystem& design, Index budget) {
  if (budget < 1 || budget > design.cols()) {
    throw ValidationError("budget M = " + std::to_string(budget) + " outside [1, N = " +
                          std::to_string(design.cols()) + "]");
  }
}

}  // namespace

double column_dot(const double* x, const double* y, Index n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  Index i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += x[i] * y[i];
    s1 += x[i + 1] * y[i + 1];
    s2 += x[i + 2] * y[i + 2];
    s3 += x[i + 3] * y[i + 3];
  }
  for (; i < n; ++i) s0 += x[i] * y[i];
  return (s0 + s1) + (s2 + s3);
}

Vector correlate(const Matrix& a, const Vector& c, unsigned n_threads) {
  if (c.size() != a.rows()) throw ValidationError("correlate: vector length does not match rows");
  const Index n = a.cols();
  const Index m = a.rows();
  Vector p(n);
  auto range = [&](Index lo, Index hi) {
    for (Index j = lo; j < hi; ++j) p(j) = column_dot(a.col(j).data(), c.data(), m);
  };
  const Index workers = std::clamp<Index>(n_threads, 1, std::max<Index>(1, n / 256));
  if (workers == 1) {
    range(0, n);
    return p;
  }
  std::vector<std::jthread> pool;
  const Index chunk = (n + workers - 1) / workers;
  for (Index w = 0; w < workers; ++w) {
    const Index lo = w * chunk;
    const Index hi = std::min(n, lo + chunk);
    if (lo < hi) pool.emplace_back(range, lo, hi);
  }
  for (auto& t : pool) t.join();
  return p;
}

IndexList top_indices(const Vector& scores, Index count) {
  const Index n = scores.size();
  count = std::clamp<Index>(count, 0, n);
  IndexList idx(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) idx[static_cast<std::size_t>(j)] = j;
  auto better = [&](Index x, Index y) { return scores(x) > scores(y) || (scores(x) == scores(y) && x < y); };
  std::partial_sort(idx.begin(), idx.begin() + count, idx.end(), better);
  idx.resize(static_cast<std::size_t>(count));
  return idx;
}

Matrix gather_columns(const Matrix& a, std::span<const Index> indices) {
  Matrix out(a.rows(), static_cast<Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index j = indices[i];
    if (j < 0 || j >= a.cols()) throw ValidationError("column index " + std::to_string(j) + " out of range");
    out.col(static_cast<Index>(i)) = a.col(j);
  }
  return out;
}

IndexList candidate_pool(const Vector& correlations, Index pool_size, std::span<const Index> previous) {
  IndexList pool = top_indices(correlations, pool_size);
  pool.insert(pool.end(), previous.begin(), previous.end());
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
  return pool;
}

IndexList prune_support(std::span<const Index> pool, const Vector& pool_weights, const Vector& correlations,
                        Index budget, bool* padded) {
  // Rank positive weights: larger first, ties to lower column index.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool_weights(static_cast<Index>(i)) > 0.0) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const double wx = pool_weights(static_cast<Index>(x));
    const double wy = pool_weights(static_cast<Index>(y));
    return wx > wy || (wx == wy && pool[x] < pool[y]);
  });
  if (order.size() > static_cast<std::size_t>(budget)) order.resize(static_cast<std::size_t>(budget));

  IndexList support;
  for (auto i : order) support.push_back(pool[i]);
  const bool short_support = static_cast<Index>(support.size()) < budget;
  if (short_support) {
    IndexList chosen = support;
    std::sort(chosen.begin(), chosen.end());
    for (Index j : top_indices(correlations, budget)) {
      if (static_cast<Index>(support.size()) == budget) break;
      if (!std::binary_search(chosen.begin(), chosen.end(), j)) support.push_back(j);
    }
  }
  if (padded) *padded = short_support;
  std::sort(support.begin(), support.end());
  return support;
}

double compute_residual(const DesignSystem& design, std::span<const Index> indices, const Vector& weights) {
  if (static_cast<Index>(indices.size()) != weights.size()) {
    throw ValidationError("compute_residual: weights not aligned with indices");
  }
  IndexList sorted(indices.begin(), indices.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("compute_residual: repeated index");
  }
  Vector r = design.b;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Index j = indices[i];
    if (j < 0 || j >= design.cols()) {
      throw ValidationError("compute_residual: index " + std::to_string(j) + " out of range");
    }
    r -= weights(static_cast<Index>(i)) * design.a.col(j);
  }
  return r.norm();
}

Selection iter_cosamp(const DesignSystem& design, const PursuitConfig& config) {
  require_valid(design);
  check_budget(design, config.budget);
  if (config.iterations < 1) throw ValidationError("iterations K must be >= 1");

  Selection sel;
  sel.algorithm = "gtp";
  sel.config = config;
  PhaseTimer timer(sel.timings);

  const Index n = design.cols();
  const Index budget = config.budget;
  Index pool_size = 2 * budget;
  if (pool_size > n) {
    pool_size = n;
    sel.pool_clamped = true;
  }

  const double b_norm = design.b.norm();
  Vector resid = design.b;
  IndexList support;
  Vector weights;
  sel.residual_history.push_back(b_norm);

  for (Index k = 1; k <= config.iterations; ++k) {
    const Vector& probe = config.correlation_mode == CorrelationMode::residual ? resid : design.b;
    const Vector p = timer.run("correlate", [&] { return correlate(design.a, probe, config.n_threads); });
    const IndexList pool = timer.run("select", [&] { return candidate_pool(p, pool_size, support); });

    const NnlsResult pool_fit =
        timer.run("nnls", [&] { return solve_nnls(gather_columns(design.a, pool), design.b, config.nnls()); });
    if (!pool_fit.converged) ++sel.nnls_nonconverged;

    bool padded = false;
    support = timer.run("select", [&] { return prune_support(pool, pool_fit.weights, p, budget, &padded); });
    if (padded) ++sel.padded_iterations;

    const Matrix a_support = gather_columns(design.a, support);
    const NnlsResult fit = timer.run("nnls", [&] { return solve_nnls(a_support, design.b, config.nnls()); });
    if (!fit.converged) ++sel.nnls_nonconverged;
    weights = fit.weights;

    resid = timer.run("residual", [&] { return Vector(design.b - a_support * weights); });
    const double rn = resid.norm();
    const double prev = sel.residual_history.back();
    sel.residual_history.push_back(rn);
    sel.per_iteration_supports.push_back(support);
    sel.per_iteration_weights.push_back(weights);

    if (config.early_exit && b_norm > 0.0 && std::abs(rn - prev) / b_norm < kEarlyExitTol) break;
  }

  sel.indices = support;
  sel.weights = weights;
  sel.final_residual = sel.residual_history.back();
  return sel;
}

Selection top_k_select(const DesignSystem& design, Index budget, const NnlsOptions& nnls) {
  require_valid(design);
  check_budget(design, budget);
  Selection sel;
  sel.algorithm = "topk";
  sel.config.budget = budget;
  sel.config.nnls_tol = nnls.tol;
  sel.config.nnls_max_iter = nnls.max_iter;
  PhaseTimer timer(sel.timings);

  const Vector p = timer.run("correlate", [&] { return correlate(design.a, design.b); });
  sel.indices = timer.run("select", [&] { return top_indices(p, budget); });
  const NnlsResult fit =
      timer.run("nnls", [&] { return solve_nnls(gather_columns(design.a, sel.indices), design.b, nnls); });
  if (!fit.converged) ++sel.nnls_nonconverged;
  sel.weights = fit.weights;
  sel.final_residual = compute_residual(design, sel.indices, sel.weights);
  sel.residual_history.push_back(sel.final_residual);
  sel.per_iteration_supports.push_back(sel.indices);
  sel.per_iteration_weights.push_back(sel.weights);
  return sel;
}

Selection omp_select(const DesignSystem& design, Index budget, const NnlsOptions& nnls) {
  require_valid(design);
  check_budget(design, budget);
  Selection sel;
  sel.algorithm = "omp";
  sel.config.budget = budget;
  sel.config.iterations = budget;
  sel.config.nnls_tol = nnls.tol;
  sel.config.nnls_max_iter = nnls.max_iter;
  PhaseTimer timer(sel.timings);

  const Index n = design.cols();
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  Vector resid = design.b;
  Matrix a_support(design.rows(), 0);
  Vector weights;
  sel.residual_history.push_back(design.b.norm());

  for (Index it = 0; it < budget; ++it) {
    const Vector p = timer.run("correlate", [&] { return correlate(design.a, resid); });
    Index pick = -1;
    for (Index j = 0; j < n; ++j) {
      if (!taken[static_cast<std::size_t>(j)] && (pick < 0 || p(j) > p(pick))) pick = j;
    }
    taken[static_cast<std::size_t>(pick)] = 1;
    sel.indices.push_back(pick);
    a_support.conservativeResize(Eigen::NoChange, a_support.cols() + 1);
    a_support.col(a_support.cols() - 1) = design.a.col(pick);

    // Restart from the previous passive set; the optimum reached is the same.
    IndexList warm;
    for (Index i = 0; i < weights.size(); ++i) {
      if (weights(i) > 0.0) warm.push_back(i);
    }
    const NnlsResult fit = timer.run("nnls", [&] { return solve_nnls(a_support, design.b, nnls, warm); });
    if (!fit.converged) ++sel.nnls_nonconverged;
    weights = fit.weights;
    resid = timer.run("residual", [&] { return Vector(design.b - a_support * weights); });

    sel.residual_history.push_back(resid.norm());
    sel.per_iteration_supports.push_back(sel.indices);
    sel.per_iteration_weights.push_back(weights);
  }
  sel.weights = weights;
  sel.final_residual = sel.residual_history.back();
  return sel;
}

IndexList random_indices(Index n, Index budget, std::uint64_t seed) {
  if (budget < 1 || budget > n) throw ValidationError("random_select: budget outside [1, n]");
  Rng rng(seed);
  return sample_without_replacement(rng, n, budget);
}

Selection random_select(const DesignSystem& design, Index budget, std::uint64_t seed, const NnlsOptions& nnls) {
  require_valid(design);
  check_budget(design, budget);
  Selection sel;
  sel.algorithm = "random";
  sel.config.budget = budget;
  sel.config.seed = seed;
  sel.config.nnls_tol = nnls.tol;
  sel.config.nnls_max_iter = nnls.max_iter;
  PhaseTimer timer(sel.timings);

  sel.indices = timer.run("select", [&] { return random_indices(design.cols(), budget, seed); });
  const NnlsResult fit =
      timer.run("nnls", [&] { return solve_nnls(gather_columns(design.a, sel.indices), design.b, nnls); });
  if (!fit.converged) ++sel.nnls_nonconverged;
  sel.weights = fit.weights;
  sel.final_residual = compute_residual(design, sel.indices, sel.weights);
  sel.residual_history.push_back(sel.final_residual);
  sel.per_iteration_supports.push_back(sel.indices);
  sel.per_iteration_weights.push_back(sel.weights);
  return sel;
}

}  // namespace gtp
