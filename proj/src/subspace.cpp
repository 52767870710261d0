#include "gtp/subspace.hpp"

#include <atomic>
#include <cstring>
#include <exception>
#include <limits>
#include <thread>

#include <Eigen/SVD>

#include "gtp/binary_io.hpp"
#include "gtp/rng.hpp"

namespace gtp {

const char* to_string(SubspaceMethod method) {
  switch (method) {
    case SubspaceMethod::pca_uncentered: return "pca_uncentered";
    case SubspaceMethod::pca_centered: return "pca_centered";
    case SubspaceMethod::random_projection: return "random_projection";
    case SubspaceMethod::identity: return "identity";
  }
  return "unknown";
}

SubspaceMethod parse_subspace_method(std::string_view name) {
  for (auto m : {SubspaceMethod::pca_uncentered, SubspaceMethod::pca_centered,
                 SubspaceMethod::random_projection, SubspaceMethod::identity}) {
    if (name == to_string(m)) return m;
  }
  throw ValidationError("unknown subspace method '" + std::string(name) + "'");
}

namespace {

Matrix orthonormal_columns(const Matrix& m) {
  Eigen::HouseholderQR<Matrix> qr(m);
  return qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
}

// Extends the first `rank` columns of basis to `target` orthonormal columns by
// Gram-Schmidt on e_0, e_1, ... (two passes each), skipping dependent ones.
Matrix complete_basis(Matrix basis, Index rank, Index target) {
  const Index d = basis.rows();
  Matrix out(d, target);
  out.leftCols(rank) = basis.leftCols(rank);
  Index filled = rank;
  for (Index i = 0; i < d && filled < target; ++i) {
    Vector v = Vector::Unit(d, i);
    for (int pass = 0; pass < 2; ++pass) {
      v -= out.leftCols(filled) * (out.leftCols(filled).transpose() * v);
    }
    const double n = v.norm();
    if (n > 1e-8) out.col(filled++) = v / n;
  }
  return out;
}

struct Svd {
  Matrix v;  // right singular vectors, leading columns first
  Vector sigma;
};

Svd dense_svd(const Matrix& x) {
  Eigen::BDCSVD<Matrix> svd(x, Eigen::ComputeThinV);
  return {svd.matrixV(), svd.singularValues()};
}

Svd randomized_svd(const Matrix& x, Index k, std::uint64_t seed) {
  const Index l = std::min<Index>(k + 10, std::min(x.rows(), x.cols()));
  Rng rng(seed);
  Matrix q = orthonormal_columns(x * gaussian_matrix(rng, x.cols(), l));
  for (int it = 0; it < 2; ++it) {
    Matrix z = orthonormal_columns(x.transpose() * q);
    q = orthonormal_columns(x * z);
  }
  Matrix small = q.transpose() * x;  // l x d
  Eigen::BDCSVD<Matrix> svd(small, Eigen::ComputeThinV);
  return {svd.matrixV(), svd.singularValues()};
}

}  // namespace

BasisFit fit_subspace(const Matrix& grads, Index subspace_dim, SubspaceMethod method, std::uint64_t seed,
                      PcaSolver solver) {
  const Index n = grads.rows();
  const Index d = grads.cols();
  if (n < 1 || d < 1) throw ValidationError("fit_subspace: empty gradient matrix");
  if (!grads.allFinite()) throw ValidationError("fit_subspace: non-finite gradients");

  BasisFit fit;
  switch (method) {
    case SubspaceMethod::identity: {
      if (subspace_dim < 1 || subspace_dim > d) throw ValidationError("fit_subspace: d_s out of range [1, d]");
      fit.basis = Matrix::Identity(d, subspace_dim);
      return fit;
    }
    case SubspaceMethod::random_projection: {
      if (subspace_dim < 1 || subspace_dim > d) throw ValidationError("fit_subspace: d_s out of range [1, d]");
      Rng rng(seed);
      fit.basis = orthonormal_columns(gaussian_matrix(rng, d, subspace_dim));
      break;
    }
    case SubspaceMethod::pca_uncentered:
    case SubspaceMethod::pca_centered: {
      if (subspace_dim < 1 || subspace_dim > std::min(n, d)) {
        throw ValidationError("fit_subspace: d_s = " + std::to_string(subspace_dim) +
                              " out of range [1, min(N_tar, d) = " + std::to_string(std::min(n, d)) + "]");
      }
      Matrix x = grads;
      if (method == SubspaceMethod::pca_centered) x.rowwise() -= x.colwise().mean();

      const bool randomized =
          solver == PcaSolver::randomized || (solver == PcaSolver::automatic && d > kDenseSvdMaxDim);
      const Svd svd = randomized ? randomized_svd(x, subspace_dim, seed) : dense_svd(x);

      const double smax = svd.sigma.size() > 0 ? svd.sigma(0) : 0.0;
      const double tol = smax * static_cast<double>(std::max(n, d)) * std::numeric_limits<double>::epsilon();
      Index rank = 0;
      while (rank < svd.sigma.size() && svd.sigma(rank) > tol) ++rank;

      fit.spectrum = svd.sigma.head(subspace_dim);
      if (rank < subspace_dim) {
        fit.rank_deficient = true;
        fit.basis = complete_basis(svd.v, rank, subspace_dim);
        fit.spectrum.tail(subspace_dim - rank).setZero();
      } else {
        fit.basis = svd.v.leftCols(subspace_dim);
      }
      break;
    }
  }

  if (const double err = orthonormality_error(fit.basis); err > kOrthonormalityTol) {
    throw Error("fit_subspace: basis orthonormality error " + std::to_string(err) + " exceeds tolerance");
  }
  return fit;
}

SubspaceBasis fit_evolving_subspace(const TrajectoryGradients& target, Index subspace_dim,
                                    SubspaceMethod method, std::uint64_t seed, unsigned n_workers) {
  if (auto v = validate(target); !v.empty()) throw ValidationError("target trajectory invalid: " + v.front());
  const auto n_t = target.n_timesteps();

  SubspaceBasis out;
  out.method = method;
  out.seed = seed;
  out.grad_dim = static_cast<Index>(target.grad_dim());
  out.subspace_dim = subspace_dim;
  out.bases.resize(n_t);
  out.spectrum.resize(n_t);
  out.rank_deficient.resize(n_t);

  std::vector<BasisFit> fits(n_t);
  std::vector<std::exception_ptr> errors(n_t);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t t = next++; t < n_t; t = next++) {
      try {
        fits[t] = fit_subspace(target.blocks[t].cast<double>(), subspace_dim, method, derive_seed(seed, t));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(n_workers, static_cast<unsigned>(n_t)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  for (std::size_t t = 0; t < n_t; ++t) {
    if (errors[t]) {
      try {
        std::rethrow_exception(errors[t]);
      } catch (const std::exception& e) {
        throw ValidationError("timestep " + std::to_string(t) + ": " + e.what());
      }
    }
    out.bases[t] = std::move(fits[t].basis);
    out.spectrum[t] = std::move(fits[t].spectrum);
    out.rank_deficient[t] = fits[t].rank_deficient;
  }
  return out;
}

Matrix project(const Matrix& grads, const Matrix& basis) {
  if (grads.cols() != basis.rows()) {
    throw ValidationError("project: gradient dim " + std::to_string(grads.cols()) + " != basis dim " +
                          std::to_string(basis.rows()));
  }
  return grads * basis;
}

Matrix project(const FloatBlock& grads, const Matrix& basis) { return project(Matrix(grads.cast<double>()), basis); }

double orthonormality_error(const Matrix& basis) {
  const Matrix gram = basis.transpose() * basis;
  return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

double captured_variance(const Matrix& grads, const Matrix& basis) { return (grads * basis).squaredNorm(); }

DesignSystem assemble_design(const TrajectoryGradients& train, const TrajectoryGradients& target,
                             const SubspaceBasis& basis, const AssembleOptions& options) {
  if (auto v = validate(train); !v.empty()) throw ValidationError("train trajectory invalid: " + v.front());
  if (auto v = validate(target); !v.empty()) throw ValidationError("target trajectory invalid: " + v.front());
  const auto n_t = train.n_timesteps();
  if (target.n_timesteps() != n_t || static_cast<std::size_t>(basis.n_timesteps()) != n_t) {
    throw ValidationError("assemble_design: timestep counts disagree (train " + std::to_string(n_t) + ", target " +
                          std::to_string(target.n_timesteps()) + ", basis " +
                          std::to_string(basis.n_timesteps()) + ")");
  }
  if (train.grad_dim() != target.grad_dim() || static_cast<Index>(train.grad_dim()) != basis.grad_dim) {
    throw ValidationError("assemble_design: gradient dimensions disagree");
  }

  const Index ds = basis.subspace_dim;
  const Index n = static_cast<Index>(train.n_samples());
  DesignSystem d;
  d.n_timesteps = static_cast<Index>(n_t);
  d.subspace_dim = ds;
  d.a.resize(d.n_timesteps * ds, n);
  d.b.resize(d.n_timesteps * ds);
  d.column_ids = train.manifest.sample_ids;

  for (std::size_t t = 0; t < n_t; ++t) {
    const Matrix& u = basis.bases[t];
    const Index r0 = static_cast<Index>(t) * ds;
    d.a.middleRows(r0, ds) = (train.blocks[t].cast<double>() * u).transpose();
    d.b.segment(r0, ds) = (target.blocks[t].cast<double>() * u).colwise().mean().transpose();
  }
  d.refresh_norms();
  if (options.normalize_columns) {
    for (Index j = 0; j < n; ++j) {
      if (d.col_norms(j) > 0) d.a.col(j) /= d.col_norms(j);
    }
    d.normalized_columns = true;
    d.refresh_norms();
  }
  return d;
}

void write_basis(const SubspaceBasis& basis, const std::filesystem::path& path) {
  ByteWriter w;
  w.raw(std::string_view(kBasisMagic, sizeof(kBasisMagic)));
  w.u8(kBasisVersion);
  w.u64(static_cast<std::uint64_t>(basis.grad_dim));
  w.u64(static_cast<std::uint64_t>(basis.subspace_dim));
  w.u64(static_cast<std::uint64_t>(basis.n_timesteps()));
  w.u8(static_cast<std::uint8_t>(basis.method));
  w.u64(basis.seed);
  for (Index t = 0; t < basis.n_timesteps(); ++t) {
    const auto& u = basis.bases[static_cast<std::size_t>(t)];
    const auto& s = basis.spectrum[static_cast<std::size_t>(t)];
    if (u.rows() != basis.grad_dim || u.cols() != basis.subspace_dim) {
      throw ValidationError("write_basis: basis " + std::to_string(t) + " has the wrong shape");
    }
    w.u8(basis.rank_deficient[static_cast<std::size_t>(t)] ? 1 : 0);
    w.u64(static_cast<std::uint64_t>(s.size()));
    w.f64_array(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())));
    w.f64_array(std::span<const double>(u.data(), static_cast<std::size_t>(u.size())));
  }
  write_file_atomic(path, w.bytes());
}

SubspaceBasis read_basis(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < sizeof(kBasisMagic) || std::memcmp(bytes.data(), kBasisMagic, sizeof(kBasisMagic)) != 0) {
    throw FormatError(FormatErrc::bad_magic, path.string() + " is not a basis file");
  }
  ByteReader r(bytes);
  r.raw(sizeof(kBasisMagic));
  if (auto v = r.u8("version"); v != kBasisVersion) {
    throw FormatError(FormatErrc::version_mismatch, "basis version " + std::to_string(v));
  }
  SubspaceBasis b;
  b.grad_dim = static_cast<Index>(r.u64("basis header"));
  b.subspace_dim = static_cast<Index>(r.u64("basis header"));
  const auto n_t = r.u64("basis header");
  const auto method = r.u8("basis header");
  if (method > 3) throw FormatError(FormatErrc::shape_inconsistency, "unknown subspace method code");
  b.method = static_cast<SubspaceMethod>(method);
  b.seed = r.u64("basis header");
  if (b.grad_dim < 1 || b.subspace_dim < 1 || b.subspace_dim > b.grad_dim || n_t == 0 || n_t > r.remaining()) {
    throw FormatError(FormatErrc::shape_inconsistency, "basis header is inconsistent");
  }
  for (std::uint64_t t = 0; t < n_t; ++t) {
    const std::string ctx = "timestep " + std::to_string(t);
    b.rank_deficient.push_back(r.u8(ctx) != 0);
    const auto len = r.u64(ctx);
    if (len > static_cast<std::uint64_t>(b.subspace_dim)) {
      throw FormatError(FormatErrc::shape_inconsistency, ctx + ": spectrum longer than d_s");
    }
    Vector s(static_cast<Index>(len));
    r.f64_array(std::span<double>(s.data(), static_cast<std::size_t>(s.size())), ctx);
    Matrix u(b.grad_dim, b.subspace_dim);
    r.f64_array(std::span<double>(u.data(), static_cast<std::size_t>(u.size())), ctx);
    b.spectrum.push_back(std::move(s));
    b.bases.push_back(std::move(u));
  }
  if (r.remaining() != 0) throw FormatError(FormatErrc::shape_inconsistency, "trailing bytes in basis file");
  return b;
}

}  // namespace gtp
