#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "gtp/design.hpp"
#include "gtp/trajectory_store.hpp"
#include "gtp/types.hpp"

namespace gtp {

enum class SubspaceMethod : std::uint8_t {
  pca_uncentered = 0,
  pca_centered = 1,
  random_projection = 2,
  identity = 3,
};

const char* to_string(SubspaceMethod method);
SubspaceMethod parse_subspace_method(std::string_view name);

enum class PcaSolver {
  automatic,   // dense below kDenseSvdMaxDim, randomized above
  dense,
  randomized,  // range finder, fixed seed, two power iterations
};

inline constexpr Index kDenseSvdMaxDim = 4096;
inline constexpr double kOrthonormalityTol = 1e-6;

struct BasisFit {
  Matrix basis;     // d x d_s, orthonormal columns
  Vector spectrum;  // top d_s singular values; empty for random_projection / identity
  bool rank_deficient = false;
};

// grads is N_tar x d, one gradient per row.
BasisFit fit_subspace(const Matrix& grads, Index subspace_dim, SubspaceMethod method, std::uint64_t seed,
                      PcaSolver solver = PcaSolver::automatic);

struct SubspaceBasis {
  SubspaceMethod method = SubspaceMethod::pca_uncentered;
  std::uint64_t seed = 0;
  Index grad_dim = 0;
  Index subspace_dim = 0;
  std::vector<Matrix> bases;
  std::vector<Vector> spectrum;
  std::vector<bool> rank_deficient;

  Index n_timesteps() const noexcept { return static_cast<Index>(bases.size()); }
};

// One independent fit per timestep. Timestep t uses derive_seed(seed, t), so
// the result does not depend on n_workers.
SubspaceBasis fit_evolving_subspace(const TrajectoryGradients& target, Index subspace_dim,
                                    SubspaceMethod method, std::uint64_t seed, unsigned n_workers = 1);

// Row j of the result is basis^T * grads.row(j).
Matrix project(const Matrix& grads, const Matrix& basis);
Matrix project(const FloatBlock& grads, const Matrix& basis);

double orthonormality_error(const Matrix& basis);

// ||grads * basis||_F^2: energy of the rows captured by the subspace.
double captured_variance(const Matrix& grads, const Matrix& basis);

struct AssembleOptions {
  bool normalize_columns = false;
};

DesignSystem assemble_design(const TrajectoryGradients& train, const TrajectoryGradients& target,
                             const SubspaceBasis& basis, const AssembleOptions& options = {});

// Layout: magic "GTPBASIS", u8 version, u64 d, u64 d_s, u64 T, u8 method,
// u64 seed, then per timestep: u8 rank_deficient, u64 spectrum length,
// f64 spectrum, f64 basis (column-major d x d_s).
inline constexpr char kBasisMagic[8] = {'G', 'T', 'P', 'B', 'A', 'S', 'I', 'S'};
inline constexpr std::uint8_t kBasisVersion = 1;

void write_basis(const SubspaceBasis& basis, const std::filesystem::path& path);
SubspaceBasis read_basis(const std::filesystem::path& path);

}  // namespace gtp
