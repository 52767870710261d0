#include <cstring>

#include "gtp/binary_io.hpp"
#include "gtp/dist.hpp"

namespace gtp::dist {

const char* to_string(WeightAggregation aggregation) {
  return aggregation == WeightAggregation::sum ? "sum" : "mean";
}

WeightAggregation parse_weight_aggregation(std::string_view name) {
  if (name == "sum") return WeightAggregation::sum;
  if (name == "mean") return WeightAggregation::mean;
  throw ValidationError("unknown weight aggregation '" + std::string(name) + "'");
}

std::vector<ShardAssignment> plan_partition(Index n_timesteps, Index subspace_dim, Index n_columns,
                                            Index n_machines) {
  if (n_machines < 1 || n_machines > n_timesteps) {
    throw ValidationError("n_machines = " + std::to_string(n_machines) + " must be in [1, T = " +
                          std::to_string(n_timesteps) + "]");
  }
  std::vector<ShardAssignment> out;
  const Index base = n_timesteps / n_machines;
  const Index extra = n_timesteps % n_machines;
  Index t = 0;
  for (Index i = 0; i < n_machines; ++i) {
    ShardAssignment s;
    s.machine_id = static_cast<std::uint32_t>(i);
    s.n_machines = static_cast<std::uint32_t>(n_machines);
    s.timestep_begin = t;
    t += base + (i < extra ? 1 : 0);
    s.timestep_end = t;
    s.row_begin = s.timestep_begin * subspace_dim;
    s.row_end = s.timestep_end * subspace_dim;
    s.n_columns = n_columns;
    out.push_back(s);
  }
  return out;
}

std::vector<Shard> partition_design(const DesignSystem& design, Index n_machines) {
  require_valid(design);
  std::vector<Shard> shards;
  for (const auto& s : plan_partition(design.n_timesteps, design.subspace_dim, design.cols(), n_machines)) {
    shards.push_back({s, timestep_slice(design, s.timestep_begin, s.timestep_end)});
  }
  return shards;
}

void validate_partition(const std::vector<ShardAssignment>& assignments, Index subspace_dim) {
  if (assignments.empty()) throw ValidationError("empty partition");
  Index t = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const auto& s = assignments[i];
    const std::string who = "machine " + std::to_string(i);
    if (s.machine_id != i) throw ValidationError(who + " reports machine_id " + std::to_string(s.machine_id));
    if (s.timestep_begin != t || s.timestep_end <= s.timestep_begin) {
      throw ValidationError(who + " timestep range [" + std::to_string(s.timestep_begin) + ", " +
                            std::to_string(s.timestep_end) + ") leaves a gap or overlap");
    }
    if (s.row_begin != s.timestep_begin * subspace_dim || s.row_end != s.timestep_end * subspace_dim) {
      throw ValidationError(who + " row range is not its timestep range scaled by d_s");
    }
    if (s.n_columns != assignments.front().n_columns) throw ValidationError(who + " disagrees on column count");
    t = s.timestep_end;
  }
}

void write_shard(const Shard& shard, const std::filesystem::path& path) {
  require_valid(shard.design);
  const auto& s = shard.assignment;
  if (shard.design.rows() != s.row_end - s.row_begin || shard.design.cols() != s.n_columns) {
    throw ValidationError("shard payload does not match its assignment");
  }
  ByteWriter w;
  w.raw(std::string_view(kShardMagic, sizeof(kShardMagic)));
  w.u8(kShardVersion);
  w.u32(s.machine_id);
  w.u32(s.n_machines);
  w.u64(static_cast<std::uint64_t>(s.timestep_begin));
  w.u64(static_cast<std::uint64_t>(s.timestep_end));
  w.u64(static_cast<std::uint64_t>(s.row_begin));
  w.u64(static_cast<std::uint64_t>(s.row_end));
  w.u64(static_cast<std::uint64_t>(s.n_columns));
  encode_design(w, shard.design);
  write_file_atomic(path, w.bytes());
}

Shard read_shard(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < sizeof(kShardMagic) || std::memcmp(bytes.data(), kShardMagic, sizeof(kShardMagic)) != 0) {
    throw FormatError(FormatErrc::bad_magic, path.string() + " is not a shard file");
  }
  ByteReader r(bytes);
  r.raw(sizeof(kShardMagic));
  if (auto v = r.u8("version"); v != kShardVersion) {
    throw FormatError(FormatErrc::version_mismatch, "shard version " + std::to_string(v));
  }
  Shard shard;
  auto& s = shard.assignment;
  s.machine_id = r.u32("shard header");
  s.n_machines = r.u32("shard header");
  s.timestep_begin = static_cast<Index>(r.u64("shard header"));
  s.timestep_end = static_cast<Index>(r.u64("shard header"));
  s.row_begin = static_cast<Index>(r.u64("shard header"));
  s.row_end = static_cast<Index>(r.u64("shard header"));
  s.n_columns = static_cast<Index>(r.u64("shard header"));
  shard.design = decode_design(r);
  if (r.remaining() != 0) throw FormatError(FormatErrc::shape_inconsistency, "trailing bytes in shard file");
  if (shard.design.rows() != s.row_end - s.row_begin || shard.design.cols() != s.n_columns ||
      shard.design.n_timesteps != s.timestep_end - s.timestep_begin) {
    throw FormatError(FormatErrc::shape_inconsistency, "shard payload does not match its assignment");
  }
  return shard;
}

}  // namespace gtp::dist
