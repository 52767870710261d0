#include <cstring>

#include "gtp/binary_io.hpp"
#include "gtp/design.hpp"

namespace gtp {

void DesignSystem::refresh_norms() { col_norms = a.colwise().norm().transpose(); }

DesignSystem make_design(Matrix a, Vector b, Index n_timesteps) {
  if (n_timesteps < 1 || a.rows() % n_timesteps != 0) {
    throw ValidationError("row count " + std::to_string(a.rows()) + " is not divisible by " +
                          std::to_string(n_timesteps) + " timesteps");
  }
  DesignSystem d;
  d.subspace_dim = a.rows() / n_timesteps;
  d.n_timesteps = n_timesteps;
  d.a = std::move(a);
  d.b = std::move(b);
  d.column_ids.reserve(static_cast<std::size_t>(d.a.cols()));
  for (Index j = 0; j < d.a.cols(); ++j) d.column_ids.push_back("s" + std::to_string(j));
  d.refresh_norms();
  return d;
}

std::vector<std::string> validate(const DesignSystem& d) {
  std::vector<std::string> out;
  if (d.a.rows() < 1 || d.a.cols() < 1) out.push_back("design matrix is empty");
  if (d.n_timesteps < 1 || d.subspace_dim < 1 || d.a.rows() != d.n_timesteps * d.subspace_dim) {
    out.push_back("row count " + std::to_string(d.a.rows()) + " != T*d_s = " +
                  std::to_string(d.n_timesteps) + "*" + std::to_string(d.subspace_dim));
  }
  if (d.b.size() != d.a.rows()) out.push_back("b length does not match row count");
  if (static_cast<Index>(d.column_ids.size()) != d.a.cols()) out.push_back("column_ids length mismatch");
  if (d.col_norms.size() != d.a.cols()) out.push_back("col_norms length mismatch");
  if (!d.a.allFinite()) out.push_back("A contains non-finite entries");
  if (!d.b.allFinite()) out.push_back("b contains non-finite entries");
  return out;
}

void require_valid(const DesignSystem& design) {
  if (auto v = validate(design); !v.empty()) throw ValidationError("invalid design: " + v.front());
}

DesignSystem timestep_slice(const DesignSystem& d, Index t_begin, Index t_end) {
  if (t_begin < 0 || t_end > d.n_timesteps || t_begin >= t_end) {
    throw ValidationError("timestep range out of bounds");
  }
  DesignSystem s;
  const Index r0 = t_begin * d.subspace_dim;
  const Index nr = (t_end - t_begin) * d.subspace_dim;
  s.a = d.a.middleRows(r0, nr);
  s.b = d.b.segment(r0, nr);
  s.column_ids = d.column_ids;
  s.n_timesteps = t_end - t_begin;
  s.subspace_dim = d.subspace_dim;
  s.normalized_columns = d.normalized_columns;
  s.refresh_norms();
  return s;
}

DesignSystem concat_columns(const DesignSystem& left, const DesignSystem& right) {
  if (left.rows() != right.rows()) throw ValidationError("cannot concatenate designs with different row counts");
  DesignSystem out;
  out.a.resize(left.rows(), left.cols() + right.cols());
  out.a << left.a, right.a;
  out.b = left.b;
  out.column_ids = left.column_ids;
  out.column_ids.insert(out.column_ids.end(), right.column_ids.begin(), right.column_ids.end());
  out.n_timesteps = left.n_timesteps;
  out.subspace_dim = left.subspace_dim;
  out.normalized_columns = left.normalized_columns;
  out.refresh_norms();
  return out;
}

void encode_design(ByteWriter& w, const DesignSystem& d) {
  w.u64(static_cast<std::uint64_t>(d.rows()));
  w.u64(static_cast<std::uint64_t>(d.cols()));
  w.u64(static_cast<std::uint64_t>(d.n_timesteps));
  w.u64(static_cast<std::uint64_t>(d.subspace_dim));
  w.u8(d.normalized_columns ? 1 : 0);
  for (const auto& id : d.column_ids) w.str(id);
  w.f64_array(std::span<const double>(d.a.data(), static_cast<std::size_t>(d.a.size())));
  w.f64_array(std::span<const double>(d.b.data(), static_cast<std::size_t>(d.b.size())));
}

DesignSystem decode_design(ByteReader& r) {
  DesignSystem d;
  const auto m = r.u64("design header");
  const auto n = r.u64("design header");
  d.n_timesteps = static_cast<Index>(r.u64("design header"));
  d.subspace_dim = static_cast<Index>(r.u64("design header"));
  d.normalized_columns = r.u8("design header") != 0;
  if (m == 0 || n == 0 || n > r.remaining() / 4) {
    throw FormatError(FormatErrc::shape_inconsistency, "design header declares " + std::to_string(m) + "x" +
                                                           std::to_string(n));
  }
  if (m != static_cast<std::uint64_t>(d.n_timesteps * d.subspace_dim)) {
    throw FormatError(FormatErrc::shape_inconsistency, "row count is not T*d_s");
  }
  d.column_ids.reserve(n);
  for (std::uint64_t j = 0; j < n; ++j) d.column_ids.push_back(r.str("design ids"));
  if (r.remaining() / 8 < m * n + m) {
    throw FormatError(FormatErrc::truncated_payload, "design payload shorter than m*N + m doubles");
  }
  d.a.resize(static_cast<Index>(m), static_cast<Index>(n));
  r.f64_array(std::span<double>(d.a.data(), static_cast<std::size_t>(d.a.size())), "design matrix");
  d.b.resize(static_cast<Index>(m));
  r.f64_array(std::span<double>(d.b.data(), static_cast<std::size_t>(d.b.size())), "design target");
  d.refresh_norms();
  return d;
}

void write_design(const DesignSystem& design, const std::filesystem::path& path) {
  require_valid(design);
  ByteWriter w;
  w.raw(std::string_view(kDesignMagic, sizeof(kDesignMagic)));
  w.u8(kDesignVersion);
  encode_design(w, design);
  write_file_atomic(path, w.bytes());
}

DesignSystem read_design(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < sizeof(kDesignMagic) || std::memcmp(bytes.data(), kDesignMagic, sizeof(kDesignMagic)) != 0) {
    throw FormatError(FormatErrc::bad_magic, path.string() + " is not a design file");
  }
  ByteReader r(bytes);
  r.raw(sizeof(kDesignMagic));
  if (auto v = r.u8("version"); v != kDesignVersion) {
    throw FormatError(FormatErrc::version_mismatch, "design version " + std::to_string(v));
  }
  auto d = decode_design(r);
  if (r.remaining() != 0) throw FormatError(FormatErrc::shape_inconsistency, "trailing bytes in design file");
  if (auto v = validate(d); !v.empty()) throw FormatError(FormatErrc::invariant, v.front());
  return d;
}

}  // namespace gtp
