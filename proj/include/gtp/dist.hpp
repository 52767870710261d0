#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gtp/design.hpp"
#include "gtp/dist_transport.hpp"
#include "gtp/pursuit.hpp"

namespace gtp::dist {

// Distributed pursuit over a star topology: one coordinator, n_machines
// workers. Each worker owns a contiguous block of timesteps, i.e. a band of
// rows of (A, b), and sees every column.

struct ShardAssignment {
  std::uint32_t machine_id = 0;
  std::uint32_t n_machines = 1;
  Index timestep_begin = 0;  // [begin, end)
  Index timestep_end = 0;
  Index row_begin = 0;
  Index row_end = 0;
  Index n_columns = 0;

  bool operator==(const ShardAssignment&) const = default;
};

struct Shard {
  ShardAssignment assignment;
  DesignSystem design;  // rows [row_begin, row_end) of the full design
};

// Timesteps split as evenly as possible; earlier machines take the extra.
std::vector<ShardAssignment> plan_partition(Index n_timesteps, Index subspace_dim, Index n_columns,
                                            Index n_machines);
std::vector<Shard> partition_design(const DesignSystem& design, Index n_machines);

// Checks that the assignments tile [0, T) in machine order.
void validate_partition(const std::vector<ShardAssignment>& assignments, Index subspace_dim);

// Layout: magic "GTPSHARD", u8 version, u32 machine_id, u32 n_machines,
// u64 t_begin, u64 t_end, u64 row_begin, u64 row_end, u64 n_columns, then
// the embedded design payload (as in the design file, without magic).
inline constexpr char kShardMagic[8] = {'G', 'T', 'P', 'S', 'H', 'A', 'R', 'D'};
inline constexpr std::uint8_t kShardVersion = 1;

void write_shard(const Shard& shard, const std::filesystem::path& path);
Shard read_shard(const std::filesystem::path& path);

// Raised by the coordinator when a worker fails, times out, or breaks the
// protocol. The message carries the iteration and support reached so far.
class DistError : public Error {
 public:
  DistError(std::uint32_t machine_id, const std::string& detail)
      : Error("machine " + std::to_string(machine_id) + ": " + detail), machine_id_(machine_id), detail_(detail) {}
  std::uint32_t machine_id() const noexcept { return machine_id_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::uint32_t machine_id_;
  std::string detail_;
};

enum class WeightAggregation { sum, mean };

const char* to_string(WeightAggregation aggregation);
WeightAggregation parse_weight_aggregation(std::string_view name);

struct DistConfig {
  PursuitConfig pursuit;
  WeightAggregation aggregation = WeightAggregation::sum;
  Millis timeout{60000};
};

// Per-iteration coordinator state, for verification.
struct DistTrace {
  std::vector<Vector> gathered_correlations;
  std::vector<IndexList> pools;
  std::vector<IndexList> supports;
  std::vector<std::vector<Vector>> local_final_weights;  // [iteration][machine]
};

// Drives the synchronous rounds over already-connected channels, ordered by
// machine id.
Selection run_coordinator(std::vector<std::unique_ptr<Channel>>& channels, const DistConfig& config,
                          DistTrace* trace = nullptr);

// Connects to each endpoint (machine i = endpoints[i]) and runs the rounds.
Selection run_coordinator(const std::vector<Endpoint>& endpoints, const DistConfig& config,
                          DistTrace* trace = nullptr);

struct WorkerOptions {
  // Fault injection: drop the connection after this many requests.
  std::optional<int> fail_after_requests;
};

// Serves requests on one channel until Done or the peer disconnects.
void serve_worker(Channel& channel, const Shard& shard, const WorkerOptions& options = {});

// Listens on endpoint, accepts one coordinator, serves until Done.
// on_listening receives the bound port (useful with port 0).
void run_worker(const Endpoint& endpoint, const Shard& shard, const WorkerOptions& options = {},
                const std::function<void(std::uint16_t)>& on_listening = {});

enum class Transport { in_process, socket };

// Partitions nothing: runs coordinator and one worker thread per shard in
// this process over the chosen transport.
Selection dist_cosamp(const std::vector<Shard>& shards, const DistConfig& config,
                      Transport transport = Transport::in_process, DistTrace* trace = nullptr,
                      const std::vector<WorkerOptions>& worker_options = {});

}  // namespace gtp::dist
