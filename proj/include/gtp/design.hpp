#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gtp/types.hpp"

namespace gtp {

// The matching system A w ~= b. Columns of A are samples: column j stacks,
// over timesteps, the projected train gradient of sample j, so A has
// n_timesteps * subspace_dim rows. b stacks the per-timestep mean projected
// target gradient.
struct DesignSystem {
  Matrix a;
  Vector b;
  std::vector<std::string> column_ids;
  Vector col_norms;
  Index n_timesteps = 1;
  Index subspace_dim = 0;
  bool normalized_columns = false;

  Index rows() const noexcept { return a.rows(); }
  Index cols() const noexcept { return a.cols(); }

  // Recomputes col_norms from a.
  void refresh_norms();
};

// Builds a design from a raw matrix and target vector with a single
// timestep block and generated ids "s0", "s1", ...
DesignSystem make_design(Matrix a, Vector b, Index n_timesteps = 1);

std::vector<std::string> validate(const DesignSystem& design);

// Throws ValidationError listing the first violation.
void require_valid(const DesignSystem& design);

// Rows [t_begin * d_s, t_end * d_s) as a standalone design.
DesignSystem timestep_slice(const DesignSystem& design, Index t_begin, Index t_end);

// Horizontal concatenation; both inputs must share rows and b.
DesignSystem concat_columns(const DesignSystem& left, const DesignSystem& right);

// Layout: magic "GTPDESGN", u8 version, u64 m, u64 N, u64 T, u64 d_s,
// u8 normalized, N ids, A column-major f64, b f64.
inline constexpr char kDesignMagic[8] = {'G', 'T', 'P', 'D', 'E', 'S', 'G', 'N'};
inline constexpr std::uint8_t kDesignVersion = 1;

void write_design(const DesignSystem& design, const std::filesystem::path& path);
DesignSystem read_design(const std::filesystem::path& path);

class ByteWriter;
class ByteReader;
void encode_design(ByteWriter& w, const DesignSystem& design);
DesignSystem decode_design(ByteReader& r);

}  // namespace gtp
