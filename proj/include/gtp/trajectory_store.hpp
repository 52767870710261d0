#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtp/types.hpp"

namespace gtp {

enum class Role : std::uint8_t { train = 0, target = 1 };

const char* to_string(Role role);

struct TrajectoryManifest {
  std::size_t n_samples = 0;
  std::size_t n_timesteps = 0;
  std::size_t grad_dim = 0;
  Role role = Role::train;
  std::vector<std::string> sample_ids;
  std::vector<std::string> checkpoint_tags;

  bool operator==(const TrajectoryManifest&) const = default;
};

// Per-checkpoint, per-sample gradients. blocks[t] is n_samples x grad_dim;
// row j is the flattened gradient of sample j at checkpoint t.
struct TrajectoryGradients {
  TrajectoryManifest manifest;
  std::vector<FloatBlock> blocks;

  std::size_t n_samples() const noexcept { return manifest.n_samples; }
  std::size_t n_timesteps() const noexcept { return manifest.n_timesteps; }
  std::size_t grad_dim() const noexcept { return manifest.grad_dim; }
};

bool operator==(const TrajectoryGradients& a, const TrajectoryGradients& b);

// Human-readable invariant violations; empty means the value is well formed.
std::vector<std::string> validate(const TrajectoryGradients& grads);

// File layout (all integers little-endian):
//   8-byte magic "GTPTRAJ\0", u8 version,
//   u64 N, u64 T, u64 d, u8 role,
//   N x (u32 len, id bytes), T x (u32 len, tag bytes),
//   T row-major N x d blocks of f32.
inline constexpr char kTrajectoryMagic[8] = {'G', 'T', 'P', 'T', 'R', 'A', 'J', '\0'};
inline constexpr std::uint8_t kTrajectoryVersion = 1;

std::uint64_t trajectory_file_size(const TrajectoryManifest& manifest);

// Rejects invalid input before touching the filesystem. Also writes the
// sidecar manifest next to path.
void write_trajectory(const TrajectoryGradients& grads, const std::filesystem::path& path);
TrajectoryGradients read_trajectory(const std::filesystem::path& path);

std::filesystem::path manifest_sidecar_path(const std::filesystem::path& path);
nlohmann::json manifest_to_json(const TrajectoryManifest& manifest);

}  // namespace gtp
