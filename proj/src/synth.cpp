#include "gtp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gtp/pursuit.hpp"
#include "gtp/rng.hpp"

namespace gtp {
namespace {

Matrix unit_gaussian_columns(Rng& rng, Index m, Index n) {
  Matrix a = gaussian_matrix(rng, m, n);
  for (Index j = 0; j < n; ++j) a.col(j).normalize();
  return a;
}

Vector scaled_noise(Rng& rng, Index m, double target_norm) {
  Vector e(m);
  for (Index i = 0; i < m; ++i) e(i) = rng.normal();
  const double en = e.norm();
  if (target_norm > 0.0 && en > 0.0) return e * (target_norm / en);
  return Vector::Zero(m);
}

}  // namespace

PlantedInstance gen_sparse_instance(Index n, Index m, Index sparsity, double noise_level, std::uint64_t seed) {
  if (n < 1 || m < 1) throw ValidationError("gen_sparse_instance: n and m must be >= 1");
  if (sparsity < 0 || sparsity > n) throw ValidationError("gen_sparse_instance: sparsity must be in [0, n]");
  if (!(noise_level >= 0.0)) throw ValidationError("gen_sparse_instance: noise_level must be >= 0");

  Rng rng(seed);
  PlantedInstance inst;
  Matrix a = unit_gaussian_columns(rng, m, n);
  inst.support = sample_without_replacement(rng, n, sparsity);
  std::sort(inst.support.begin(), inst.support.end());
  inst.true_weights = Vector::Zero(n);
  for (Index j : inst.support) inst.true_weights(j) = rng.uniform(0.5, 1.5);

  const Vector clean = a * inst.true_weights;
  inst.noise_level = noise_level;
  inst.noise = scaled_noise(rng, m, noise_level * clean.norm());
  inst.design = make_design(std::move(a), clean + inst.noise);
  return inst;
}

PlantedInstance gen_duplicated_instance(Index n, Index m, Index n_groups, Index copies_per_group,
                                        std::uint64_t seed) {
  if (n < 1 || m < 1) throw ValidationError("gen_duplicated_instance: n and m must be >= 1");
  if (n_groups < 0 || copies_per_group < 1 || n_groups * copies_per_group > n) {
    throw ValidationError("gen_duplicated_instance: n_groups * copies_per_group must be <= n");
  }

  Rng rng(seed);
  PlantedInstance inst;
  Matrix a = unit_gaussian_columns(rng, m, n);
  const IndexList positions = sample_without_replacement(rng, n, n_groups * copies_per_group);

  inst.true_weights = Vector::Zero(n);
  Vector clean = Vector::Zero(m);
  for (Index g = 0; g < n_groups; ++g) {
    IndexList group(positions.begin() + g * copies_per_group, positions.begin() + (g + 1) * copies_per_group);
    std::sort(group.begin(), group.end());
    const Vector base = a.col(group.front());
    for (Index j : group) a.col(j) = base;
    inst.true_weights(group.front()) = 1.0;
    inst.support.push_back(group.front());
    clean += base;
    inst.groups.push_back(std::move(group));
  }
  std::sort(inst.support.begin(), inst.support.end());

  inst.noise_level = kDuplicateTailLevel;
  inst.noise = scaled_noise(rng, m, kDuplicateTailLevel * clean.norm());
  inst.design = make_design(std::move(a), clean + inst.noise);
  return inst;
}

double binomial(Index n, Index k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (Index i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

BestSubset brute_force_best_subset(const DesignSystem& design, Index budget, const NnlsOptions& nnls) {
  require_valid(design);
  const Index n = design.cols();
  if (budget < 1 || budget > n) throw ValidationError("brute_force_best_subset: budget outside [1, N]");
  if (binomial(n, budget) > kBruteForceMaxSupports) {
    throw ValidationError("brute_force_best_subset: C(" + std::to_string(n) + ", " + std::to_string(budget) +
                          ") supports exceeds the exhaustive-search guard");
  }

  IndexList combo(static_cast<std::size_t>(budget));
  for (Index i = 0; i < budget; ++i) combo[static_cast<std::size_t>(i)] = i;
  BestSubset best;
  best.residual = std::numeric_limits<double>::infinity();
  Matrix sub(design.rows(), budget);

  while (true) {
    for (Index i = 0; i < budget; ++i) sub.col(i) = design.a.col(combo[static_cast<std::size_t>(i)]);
    const NnlsResult fit = solve_nnls(sub, design.b, nnls);
    if (fit.residual_norm < best.residual) {
      best.residual = fit.residual_norm;
      best.indices = combo;
      best.weights = fit.weights;
    }
    // next combination in lexicographic order
    Index i = budget - 1;
    while (i >= 0 && combo[static_cast<std::size_t>(i)] == n - budget + i) --i;
    if (i < 0) break;
    ++combo[static_cast<std::size_t>(i)];
    for (Index k = i + 1; k < budget; ++k) combo[static_cast<std::size_t>(k)] = combo[static_cast<std::size_t>(k - 1)] + 1;
  }
  return best;
}

SyntheticTrajectories gen_synthetic_trajectory(Index n, Index t, Index d, Index n_clusters, std::uint64_t seed) {
  if (n < 1 || t < 1 || d < 1) throw ValidationError("gen_synthetic_trajectory: n, t, d must be >= 1");
  if (n_clusters < 1 || n_clusters > n) throw ValidationError("gen_synthetic_trajectory: n_clusters must be in [1, n]");

  constexpr double kDrift = 0.3;  // radians per checkpoint
  const double noise_sd = 0.02 / std::sqrt(static_cast<double>(d));
  Rng rng(seed);

  std::vector<Vector> u(static_cast<std::size_t>(n_clusters)), v(static_cast<std::size_t>(n_clusters));
  for (Index k = 0; k < n_clusters; ++k) {
    Vector a(d), b(d);
    for (Index i = 0; i < d; ++i) a(i) = rng.normal();
    for (Index i = 0; i < d; ++i) b(i) = rng.normal();
    a.normalize();
    b -= a * a.dot(b);
    if (b.norm() > 0.0) b.normalize();
    u[static_cast<std::size_t>(k)] = a;
    v[static_cast<std::size_t>(k)] = b;
  }
  auto center = [&](Index k, Index s) -> Vector {
    const double th = kDrift * static_cast<double>(s);
    return std::cos(th) * u[static_cast<std::size_t>(k)] + std::sin(th) * v[static_cast<std::size_t>(k)];
  };

  auto build = [&](Index count, Index clusters, Role role, const std::string& prefix) {
    TrajectoryGradients g;
    auto& mf = g.manifest;
    mf.n_samples = static_cast<std::size_t>(count);
    mf.n_timesteps = static_cast<std::size_t>(t);
    mf.grad_dim = static_cast<std::size_t>(d);
    mf.role = role;
    for (Index j = 0; j < count; ++j) mf.sample_ids.push_back(prefix + std::to_string(j));
    for (Index s = 0; s < t; ++s) mf.checkpoint_tags.push_back("ckpt-" + std::to_string(s));
    std::vector<double> scale(static_cast<std::size_t>(count));
    for (auto& sc : scale) sc = rng.uniform(0.5, 1.5);
    for (Index s = 0; s < t; ++s) {
      FloatBlock blk(count, d);
      for (Index j = 0; j < count; ++j) {
        const Vector c = center(j % clusters, s);
        for (Index i = 0; i < d; ++i) {
          blk(j, i) = static_cast<float>(scale[static_cast<std::size_t>(j)] * c(i) + noise_sd * rng.normal());
        }
      }
      g.blocks.push_back(std::move(blk));
    }
    return g;
  };

  SyntheticTrajectories out;
  out.train = build(n, n_clusters, Role::train, "train-");
  const Index target_clusters = (n_clusters + 1) / 2;
  out.target = build(std::max<Index>(2, n / 4), target_clusters, Role::target, "target-");
  return out;
}

DesignSystem with_timesteps(DesignSystem design, Index n_timesteps) {
  if (n_timesteps < 1 || design.rows() % n_timesteps != 0) {
    throw ValidationError("with_timesteps: rows not divisible by timestep count");
  }
  design.n_timesteps = n_timesteps;
  design.subspace_dim = design.rows() / n_timesteps;
  return design;
}

}  // namespace gtp
