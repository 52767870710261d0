#include "gtp/trajectory_store.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "gtp/binary_io.hpp"

namespace gtp {

const char* to_string(Role role) { return role == Role::train ? "train" : "target"; }

bool operator==(const TrajectoryGradients& a, const TrajectoryGradients& b) {
  if (!(a.manifest == b.manifest) || a.blocks.size() != b.blocks.size()) return false;
  for (std::size_t t = 0; t < a.blocks.size(); ++t) {
    const auto& x = a.blocks[t];
    const auto& y = b.blocks[t];
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    // bitwise, so NaN payloads and signed zeros count
    if (x.size() > 0 && std::memcmp(x.data(), y.data(), sizeof(float) * x.size()) != 0) return false;
  }
  return true;
}

std::vector<std::string> validate(const TrajectoryGradients& grads) {
  std::vector<std::string> out;
  const auto& m = grads.manifest;
  if (m.n_samples < 1) out.push_back("n_samples must be >= 1");
  if (m.n_timesteps < 1) out.push_back("n_timesteps must be >= 1");
  if (m.grad_dim < 1) out.push_back("grad_dim must be >= 1");
  if (m.sample_ids.size() != m.n_samples) {
    out.push_back("sample_ids has " + std::to_string(m.sample_ids.size()) + " entries, expected " +
                  std::to_string(m.n_samples));
  }
  if (m.checkpoint_tags.size() != m.n_timesteps) {
    out.push_back("checkpoint_tags has " + std::to_string(m.checkpoint_tags.size()) +
                  " entries, expected " + std::to_string(m.n_timesteps));
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : m.sample_ids) {
    if (!seen.insert(id).second) {
      out.push_back("duplicate sample id '" + id + "'");
      break;
    }
  }
  if (grads.blocks.size() != m.n_timesteps) {
    out.push_back("expected " + std::to_string(m.n_timesteps) + " blocks, found " +
                  std::to_string(grads.blocks.size()));
  }
  for (std::size_t t = 0; t < grads.blocks.size(); ++t) {
    const auto& blk = grads.blocks[t];
    if (static_cast<std::size_t>(blk.rows()) != m.n_samples ||
        static_cast<std::size_t>(blk.cols()) != m.grad_dim) {
      out.push_back("block " + std::to_string(t) + " has shape " + std::to_string(blk.rows()) + "x" +
                    std::to_string(blk.cols()) + ", expected " + std::to_string(m.n_samples) + "x" +
                    std::to_string(m.grad_dim));
      continue;
    }
    if (!blk.allFinite()) out.push_back("block " + std::to_string(t) + " contains non-finite entries");
  }
  return out;
}

std::uint64_t trajectory_file_size(const TrajectoryManifest& manifest) {
  std::uint64_t size = sizeof(kTrajectoryMagic) + 1 + 3 * 8 + 1;
  for (const auto& id : manifest.sample_ids) size += 4 + id.size();
  for (const auto& tag : manifest.checkpoint_tags) size += 4 + tag.size();
  size += static_cast<std::uint64_t>(manifest.n_timesteps) * manifest.n_samples * manifest.grad_dim *
          sizeof(float);
  return size;
}

std::filesystem::path manifest_sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".manifest.json";
  return p;
}

nlohmann::json manifest_to_json(const TrajectoryManifest& manifest) {
  return {
      {"n_samples", manifest.n_samples},
      {"n_timesteps", manifest.n_timesteps},
      {"grad_dim", manifest.grad_dim},
      {"role", to_string(manifest.role)},
      {"dtype", "float32"},
      {"sample_ids", manifest.sample_ids},
      {"checkpoint_tags", manifest.checkpoint_tags},
  };
}

void write_trajectory(const TrajectoryGradients& grads, const std::filesystem::path& path) {
  if (auto violations = validate(grads); !violations.empty()) {
    std::string msg = "refusing to write invalid trajectory:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw FormatError(FormatErrc::invariant, msg);
  }
  const auto& m = grads.manifest;
  ByteWriter w;
  w.raw(std::string_view(kTrajectoryMagic, sizeof(kTrajectoryMagic)));
  w.u8(kTrajectoryVersion);
  w.u64(m.n_samples);
  w.u64(m.n_timesteps);
  w.u64(m.grad_dim);
  w.u8(static_cast<std::uint8_t>(m.role));
  for (const auto& id : m.sample_ids) w.str(id);
  for (const auto& tag : m.checkpoint_tags) w.str(tag);
  for (const auto& blk : grads.blocks) {
    w.f32_array(std::span<const float>(blk.data(), static_cast<std::size_t>(blk.size())));
  }
  write_file_atomic(path, w.bytes());

  const auto sidecar = manifest_to_json(m).dump(2);
  write_file_atomic(manifest_sidecar_path(path), std::span<const char>(sidecar.data(), sidecar.size()));
}

TrajectoryGradients read_trajectory(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);

  if (bytes.size() < sizeof(kTrajectoryMagic) ||
      std::memcmp(bytes.data(), kTrajectoryMagic, sizeof(kTrajectoryMagic)) != 0) {
    throw FormatError(FormatErrc::bad_magic, path.string() + " is not a trajectory file");
  }
  r.raw(sizeof(kTrajectoryMagic));
  const auto version = r.u8("version");
  if (version != kTrajectoryVersion) {
    throw FormatError(FormatErrc::version_mismatch, "file version " + std::to_string(version) +
                                                        ", supported " +
                                                        std::to_string(kTrajectoryVersion));
  }

  TrajectoryGradients g;
  auto& m = g.manifest;
  m.n_samples = r.u64("header");
  m.n_timesteps = r.u64("header");
  m.grad_dim = r.u64("header");
  const auto role = r.u8("header");
  if (role > 1) throw FormatError(FormatErrc::shape_inconsistency, "unknown role " + std::to_string(role));
  m.role = static_cast<Role>(role);
  if (m.n_samples == 0 || m.n_timesteps == 0 || m.grad_dim == 0) {
    throw FormatError(FormatErrc::shape_inconsistency, "header declares an empty dimension");
  }
  // Guard the id-table loop against absurd counts before allocating.
  if (m.n_samples > r.remaining() / 4 || m.n_timesteps > r.remaining() / 4) {
    throw FormatError(FormatErrc::truncated_payload, "id table larger than file");
  }

  m.sample_ids.reserve(m.n_samples);
  for (std::size_t j = 0; j < m.n_samples; ++j) m.sample_ids.push_back(r.str("sample id table"));
  m.checkpoint_tags.reserve(m.n_timesteps);
  for (std::size_t t = 0; t < m.n_timesteps; ++t) m.checkpoint_tags.push_back(r.str("checkpoint tags"));

  const std::uint64_t block_bytes = static_cast<std::uint64_t>(m.n_samples) * m.grad_dim * sizeof(float);
  const std::uint64_t expected_payload = block_bytes * m.n_timesteps;
  if (r.remaining() > expected_payload) {
    throw FormatError(FormatErrc::shape_inconsistency,
                      std::to_string(r.remaining() - expected_payload) +
                          " trailing bytes beyond the declared N x T x d payload");
  }

  g.blocks.reserve(m.n_timesteps);
  for (std::size_t t = 0; t < m.n_timesteps; ++t) {
    if (r.remaining() < block_bytes) {
      throw FormatError(FormatErrc::truncated_payload,
                        "timestep " + std::to_string(t) + " block needs " + std::to_string(block_bytes) +
                            " bytes, " + std::to_string(r.remaining()) + " remain");
    }
    FloatBlock blk(static_cast<Index>(m.n_samples), static_cast<Index>(m.grad_dim));
    r.f32_array(std::span<float>(blk.data(), static_cast<std::size_t>(blk.size())));
    g.blocks.push_back(std::move(blk));
  }

  if (auto violations = validate(g); !violations.empty()) {
    throw FormatError(FormatErrc::invariant, violations.front());
  }
  return g;
}

}  // namespace gtp
