#pragma once

#include <cstdint>
#include <vector>

#include "gtp/design.hpp"
#include "gtp/nnls.hpp"
#include "gtp/trajectory_store.hpp"
#include "gtp/types.hpp"

namespace gtp {

// Synthetic fixtures and exhaustive oracles. Every generator draws from a
// single Rng(seed) in a fixed order, so outputs are bit-reproducible.

struct PlantedInstance {
  DesignSystem design;
  Vector true_weights;  // length N, non-negative
  Vector noise;         // b = A * true_weights + noise
  double noise_level = 0.0;
  IndexList support;                // sorted support of true_weights
  std::vector<IndexList> groups;    // duplicate groups (sorted), if any
};

// A: m x n standard Gaussian, columns scaled to unit norm. Support uniform
// without replacement, values uniform in [0.5, 1.5]. The noise vector is
// Gaussian rescaled to exactly noise_level * ||A w*||.
// Draw order: A (column-major), support, values, noise.
PlantedInstance gen_sparse_instance(Index n, Index m, Index sparsity, double noise_level, std::uint64_t seed);

inline constexpr double kDuplicateTailLevel = 0.01;

// Same A as gen_sparse_instance, then n_groups * copies_per_group random
// positions are overwritten so each group holds bit-identical copies of the
// column at its lowest position. b is the sum of one copy per group plus a
// Gaussian tail of norm kDuplicateTailLevel * ||sum||.
// Draw order: A, group positions, tail.
PlantedInstance gen_duplicated_instance(Index n, Index m, Index n_groups, Index copies_per_group,
                                        std::uint64_t seed);

inline constexpr double kBruteForceMaxSupports = 1e6;

struct BestSubset {
  IndexList indices;  // sorted
  Vector weights;
  double residual = 0.0;
};

// Scores every size-M support by NNLS; minimum residual, ties to the
// lexicographically smallest index set.
BestSubset brute_force_best_subset(const DesignSystem& design, Index budget, const NnlsOptions& nnls = {});

double binomial(Index n, Index k);

struct SyntheticTrajectories {
  TrajectoryGradients train;
  TrajectoryGradients target;
};

// Train sample j follows cluster j mod n_clusters; its gradient at checkpoint
// s is scale_j * center_k(s) plus small isotropic noise, where each center
// rotates smoothly in a random 2-plane. Target samples (max(2, n/4) of them)
// come from the first ceil(n_clusters/2) clusters.
SyntheticTrajectories gen_synthetic_trajectory(Index n, Index t, Index d, Index n_clusters, std::uint64_t seed);

// Reinterprets the rows of a single-block design as n_timesteps blocks.
DesignSystem with_timesteps(DesignSystem design, Index n_timesteps);

}  // namespace gtp
