#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstring>

#include "doctest.h"
#include "gtp/rng.hpp"
#include "gtp/subspace.hpp"
#include "gtp/synth.hpp"
#include "temp_dir.hpp"

using namespace gtp;

namespace {

TrajectoryGradients trajectory_from(const std::vector<Matrix>& blocks, const std::string& prefix, Role role) {
  TrajectoryGradients g;
  g.manifest.n_samples = static_cast<std::size_t>(blocks.front().rows());
  g.manifest.n_timesteps = blocks.size();
  g.manifest.grad_dim = static_cast<std::size_t>(blocks.front().cols());
  g.manifest.role = role;
  for (Index j = 0; j < blocks.front().rows(); ++j) g.manifest.sample_ids.push_back(prefix + std::to_string(j));
  for (std::size_t t = 0; t < blocks.size(); ++t) g.manifest.checkpoint_tags.push_back("t" + std::to_string(t));
  for (const auto& b : blocks) g.blocks.push_back(b.cast<float>());
  return g;
}

double top_eigen_sum(const Matrix& x, Index k) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(x.transpose() * x);
  return eig.eigenvalues().reverse().head(k).sum();
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(), [](double x, double y) {
           return std::memcmp(&x, &y, sizeof x) == 0;
         });
}

}  // namespace

TEST_CASE("rank 2 input is reconstructed from a 2-dimensional basis") {
  Rng rng(3);
  const Matrix x = gaussian_matrix(rng, 30, 2) * gaussian_matrix(rng, 2, 9);
  const auto fit = fit_subspace(x, 2, SubspaceMethod::pca_uncentered, 0);
  CHECK_FALSE(fit.rank_deficient);
  const Matrix back = project(x, fit.basis) * fit.basis.transpose();
  CHECK((back - x).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("full dimension basis is an isometry") {
  Rng rng(4);
  const Matrix x = gaussian_matrix(rng, 20, 6);
  const auto fit = fit_subspace(x, 6, SubspaceMethod::pca_uncentered, 0);
  CHECK(fit.basis.rows() == 6);
  CHECK(fit.basis.cols() == 6);
  CHECK(orthonormality_error(fit.basis) < 1e-6);
  const Matrix p = project(x, fit.basis);
  CHECK((p.rowwise().norm() - x.rowwise().norm()).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("captured variance matches the dense eigensolver oracle") {
  Rng rng(5);
  const Matrix x = gaussian_matrix(rng, 50, 8);
  const auto fit = fit_subspace(x, 3, SubspaceMethod::pca_uncentered, 0);
  const double oracle = top_eigen_sum(x, 3);
  CHECK(std::abs(captured_variance(x, fit.basis) - oracle) / oracle < 1e-8);
  CHECK(std::abs(fit.spectrum.squaredNorm() - oracle) / oracle < 1e-8);
  for (Index i = 1; i < fit.spectrum.size(); ++i) CHECK(fit.spectrum(i) <= fit.spectrum(i - 1));
}

TEST_CASE("centered PCA captures the top components of the centered data") {
  Rng rng(6);
  Matrix x = gaussian_matrix(rng, 40, 7);
  x.rowwise() += Eigen::RowVectorXd::Constant(7, 5.0);
  const auto fit = fit_subspace(x, 2, SubspaceMethod::pca_centered, 0);
  Matrix centered = x;
  centered.rowwise() -= centered.colwise().mean();
  const double oracle = top_eigen_sum(centered, 2);
  CHECK(std::abs(captured_variance(centered, fit.basis) - oracle) / oracle < 1e-8);
}

TEST_CASE("randomized solver agrees with the dense solver on low rank input") {
  Rng rng(7);
  const Matrix x = gaussian_matrix(rng, 80, 4) * gaussian_matrix(rng, 4, 60);
  const auto dense = fit_subspace(x, 4, SubspaceMethod::pca_uncentered, 0, PcaSolver::dense);
  const auto rand = fit_subspace(x, 4, SubspaceMethod::pca_uncentered, 11, PcaSolver::randomized);
  CHECK(orthonormality_error(rand.basis) < 1e-6);
  const double ref = captured_variance(x, dense.basis);
  CHECK(std::abs(captured_variance(x, rand.basis) - ref) / ref < 1e-8);
}

TEST_CASE("PCA captures at least as much as random projections") {
  Rng rng(8);
  const Matrix x = gaussian_matrix(rng, 60, 12);
  const double pca = captured_variance(x, fit_subspace(x, 4, SubspaceMethod::pca_uncentered, 0).basis);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto rp = fit_subspace(x, 4, SubspaceMethod::random_projection, seed);
    CHECK(orthonormality_error(rp.basis) < 1e-6);
    CHECK(rp.spectrum.size() == 0);
    CHECK(pca >= captured_variance(x, rp.basis));
  }
}

TEST_CASE("identity method takes the leading coordinates") {
  Rng rng(9);
  const Matrix x = gaussian_matrix(rng, 5, 6);
  const auto fit = fit_subspace(x, 3, SubspaceMethod::identity, 0);
  CHECK(fit.basis == Matrix::Identity(6, 3));
  CHECK(project(x, fit.basis) == x.leftCols(3));
}

TEST_CASE("rank deficient input is completed and flagged") {
  Matrix x = Matrix::Zero(4, 5);
  x.col(1).setOnes();
  const auto fit = fit_subspace(x, 3, SubspaceMethod::pca_uncentered, 0);
  CHECK(fit.rank_deficient);
  CHECK(orthonormality_error(fit.basis) < 1e-6);
  CHECK(fit.spectrum(1) == 0.0);
  CHECK(fit.spectrum(2) == 0.0);
  CHECK(std::abs(std::abs(fit.basis(1, 0)) - 1.0) < 1e-12);
}

TEST_CASE("subspace dimension out of range is rejected") {
  Rng rng(10);
  const Matrix x = gaussian_matrix(rng, 3, 5);
  CHECK_THROWS_AS(fit_subspace(x, 4, SubspaceMethod::pca_uncentered, 0), ValidationError);
  CHECK_THROWS_AS(fit_subspace(x, 0, SubspaceMethod::pca_uncentered, 0), ValidationError);
  CHECK_THROWS_AS(fit_subspace(x, 6, SubspaceMethod::random_projection, 0), ValidationError);
  CHECK_NOTHROW(fit_subspace(x, 5, SubspaceMethod::random_projection, 0));
}

TEST_CASE("project examples") {
  Matrix row(1, 3);
  row << 1, 2, 3;
  Matrix basis = Matrix::Zero(3, 2);
  basis(0, 0) = 1;
  basis(2, 1) = 1;
  const Matrix p = project(row, basis);
  CHECK(p(0, 0) == 1.0);
  CHECK(p(0, 1) == 3.0);
  CHECK_THROWS_AS(project(Matrix(Matrix::Ones(2, 4)), basis), ValidationError);

  Rng rng(12);
  const Matrix x = gaussian_matrix(rng, 25, 9);
  const auto fit = fit_subspace(x, 4, SubspaceMethod::random_projection, 3);
  const Vector before = x.rowwise().norm();
  const Vector after = project(x, fit.basis).rowwise().norm();
  for (Index i = 0; i < x.rows(); ++i) CHECK(after(i) <= before(i) + 1e-9);
}

TEST_CASE("evolving subspace is independent of worker count") {
  const auto traj = gen_synthetic_trajectory(40, 10, 16, 4, 21);
  for (auto method : {SubspaceMethod::pca_uncentered, SubspaceMethod::random_projection}) {
    const auto one = fit_evolving_subspace(traj.target, 3, method, 99, 1);
    const auto ten = fit_evolving_subspace(traj.target, 3, method, 99, 10);
    REQUIRE(one.n_timesteps() == 10);
    for (Index t = 0; t < 10; ++t) {
      CHECK(bit_equal(one.bases[t], ten.bases[t]));
      CHECK(orthonormality_error(one.bases[t]) < 1e-6);
    }
  }
}

TEST_CASE("a single timestep reduces to fit_subspace") {
  const auto traj = gen_synthetic_trajectory(20, 1, 8, 2, 22);
  const auto evolving = fit_evolving_subspace(traj.target, 2, SubspaceMethod::pca_uncentered, 5);
  const auto direct = fit_subspace(traj.target.blocks[0].cast<double>(), 2, SubspaceMethod::pca_uncentered, 5);
  CHECK(bit_equal(evolving.bases[0], direct.basis));
}

TEST_CASE("identity evolving subspace") {
  const auto traj = gen_synthetic_trajectory(6, 3, 5, 2, 23);
  const auto basis = fit_evolving_subspace(traj.target, 2, SubspaceMethod::identity, 0);
  for (const auto& u : basis.bases) CHECK(u == Matrix::Identity(5, 2));
}

TEST_CASE("fit errors name the timestep") {
  auto traj = gen_synthetic_trajectory(8, 3, 4, 2, 24);
  try {
    fit_evolving_subspace(traj.target, 4, SubspaceMethod::pca_uncentered, 0);
    FAIL("expected failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("timestep 0") != std::string::npos);
  }
}

TEST_CASE("assemble with identity basis gives raw gradients and mean target") {
  const auto traj = gen_synthetic_trajectory(7, 1, 5, 3, 25);
  const auto basis = fit_evolving_subspace(traj.target, 5, SubspaceMethod::identity, 0);
  const auto design = assemble_design(traj.train, traj.target, basis);
  CHECK(design.a == Matrix(traj.train.blocks[0].cast<double>().transpose()));
  const Vector mean = traj.target.blocks[0].cast<double>().colwise().mean().transpose();
  CHECK((design.b - mean).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(design.column_ids == traj.train.manifest.sample_ids);
  CHECK(validate(design).empty());
}

TEST_CASE("design shape is T * d_s by N") {
  const auto traj = gen_synthetic_trajectory(1000, 10, 160, 8, 26);
  const auto basis = fit_evolving_subspace(traj.target, 128, SubspaceMethod::pca_uncentered, 0);
  const auto design = assemble_design(traj.train, traj.target, basis);
  CHECK(design.rows() == 1280);
  CHECK(design.cols() == 1000);
  CHECK(design.b.size() == 1280);
  CHECK(design.n_timesteps == 10);
  CHECK(design.subspace_dim == 128);
}

TEST_CASE("opposite target gradients cancel in b") {
  Rng rng(27);
  const Matrix v = gaussian_matrix(rng, 1, 4);
  Matrix t0(2, 4), t1(2, 4);
  t0 << v, -v;
  t1 = gaussian_matrix(rng, 2, 4);
  const auto target = trajectory_from({t0, t1}, "tar", Role::target);
  const auto train = trajectory_from({gaussian_matrix(rng, 3, 4), gaussian_matrix(rng, 3, 4)}, "tr", Role::train);
  const auto basis = fit_evolving_subspace(train, 2, SubspaceMethod::random_projection, 1);
  const auto design = assemble_design(train, target, basis);
  CHECK(design.b.head(2).isZero(0.0));
  CHECK_FALSE(design.b.tail(2).isZero(1e-12));
}

TEST_CASE("assembly is linear in the train set") {
  Rng rng(28);
  std::vector<Matrix> left, right, both;
  for (int t = 0; t < 3; ++t) {
    left.push_back(gaussian_matrix(rng, 4, 6));
    right.push_back(gaussian_matrix(rng, 5, 6));
    Matrix cat(9, 6);
    cat << left.back(), right.back();
    both.push_back(cat);
  }
  const auto target = trajectory_from({gaussian_matrix(rng, 3, 6), gaussian_matrix(rng, 3, 6),
                                       gaussian_matrix(rng, 3, 6)}, "tar", Role::target);
  const auto basis = fit_evolving_subspace(target, 2, SubspaceMethod::pca_uncentered, 0);
  const auto l = assemble_design(trajectory_from(left, "l", Role::train), target, basis);
  const auto r = assemble_design(trajectory_from(right, "r", Role::train), target, basis);
  auto all_train = trajectory_from(both, "x", Role::train);
  const auto joined = concat_columns(l, r);
  const auto all = assemble_design(all_train, target, basis);
  CHECK((joined.a - all.a).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(joined.b == all.b);
}

TEST_CASE("normalized assembly has unit columns") {
  const auto traj = gen_synthetic_trajectory(12, 2, 6, 3, 29);
  const auto basis = fit_evolving_subspace(traj.target, 3, SubspaceMethod::pca_uncentered, 0);
  const auto design = assemble_design(traj.train, traj.target, basis, {.normalize_columns = true});
  CHECK(design.normalized_columns);
  CHECK((design.col_norms.array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("mismatched inputs are rejected") {
  const auto a = gen_synthetic_trajectory(6, 2, 5, 2, 30);
  const auto b = gen_synthetic_trajectory(6, 3, 5, 2, 31);
  const auto basis = fit_evolving_subspace(a.target, 2, SubspaceMethod::identity, 0);
  CHECK_THROWS_AS(assemble_design(a.train, b.target, basis), ValidationError);
  const auto c = gen_synthetic_trajectory(6, 2, 7, 2, 32);
  CHECK_THROWS_AS(assemble_design(c.train, a.target, basis), ValidationError);
}

TEST_CASE("basis and design files round trip") {
  TempDir dir;
  const auto traj = gen_synthetic_trajectory(10, 3, 6, 2, 33);
  const auto basis = fit_evolving_subspace(traj.target, 2, SubspaceMethod::pca_uncentered, 4);
  write_basis(basis, dir / "u.bin");
  const auto back = read_basis(dir / "u.bin");
  CHECK(back.method == basis.method);
  CHECK(back.seed == 4);
  REQUIRE(back.n_timesteps() == 3);
  for (Index t = 0; t < 3; ++t) {
    CHECK(bit_equal(back.bases[t], basis.bases[t]));
    CHECK(back.spectrum[t] == basis.spectrum[t]);
  }
  const auto design = assemble_design(traj.train, traj.target, basis);
  write_design(design, dir / "d.bin");
  const auto d2 = read_design(dir / "d.bin");
  CHECK(bit_equal(d2.a, design.a));
  CHECK(d2.b == design.b);
  CHECK(d2.column_ids == design.column_ids);
  CHECK(d2.n_timesteps == 3);
  CHECK_THROWS_AS(read_basis(dir / "d.bin"), FormatError);
  CHECK_THROWS_AS(read_design(dir / "u.bin"), FormatError);
}
