#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gtp/types.hpp"

namespace gtp::dist {

// Frame: u32 length of everything after it, u8 protocol version, u8 tag,
// payload. Integers little-endian; vectors are u64 length + IEEE-754 binary64
// values; index lists are u64 length + u64 entries.
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 1u << 30;

enum class Tag : std::uint8_t {
  init = 1,
  shard_info = 2,
  correlate_request = 3,
  partial_correlation = 4,
  nnls_request = 5,
  partial_weights = 6,
  residual_update = 7,
  residual_ack = 8,
  columns_request = 9,
  column_block = 10,
  done = 11,
  error = 12,
};

enum class NnlsStage : std::uint8_t { pool = 0, final = 1 };

// coordinator -> worker
struct Init {
  std::uint32_t machine_id = 0;
  std::uint32_t n_machines = 1;
  std::uint8_t correlation_mode = 0;  // CorrelationMode as integer
  double nnls_tol = 0.0;
  std::uint64_t nnls_max_iter = 0;
  bool operator==(const Init&) const = default;
};

// worker -> coordinator, answers Init
struct ShardInfo {
  std::uint32_t machine_id = 0;
  std::uint64_t timestep_begin = 0;
  std::uint64_t timestep_end = 0;
  std::uint64_t row_begin = 0;
  std::uint64_t row_end = 0;
  std::uint64_t n_columns = 0;
  double target_sq_norm = 0.0;  // ||b_i||^2
  bool operator==(const ShardInfo&) const = default;
};

struct CorrelateRequest {
  std::uint64_t iteration = 0;
  bool operator==(const CorrelateRequest&) const = default;
};

struct PartialCorrelation {
  Vector values;  // length N
};

struct NnlsRequest {
  std::uint64_t iteration = 0;
  NnlsStage stage = NnlsStage::pool;
  IndexList support;
  bool operator==(const NnlsRequest&) const = default;
};

struct PartialWeights {
  Vector weights;  // aligned with the request's support
  bool converged = true;
};

// Sets the worker's residual segment to b_i - A_i|support * weights.
struct ResidualUpdate {
  std::uint64_t iteration = 0;
  IndexList support;
  Vector weights;
};

struct ResidualAck {
  double sq_norm = 0.0;  // ||r_i||^2 after the update
  bool operator==(const ResidualAck&) const = default;
};

struct ColumnsRequest {
  IndexList support;
  bool operator==(const ColumnsRequest&) const = default;
};

// The worker's rows of A restricted to the requested columns, plus b_i.
struct ColumnBlock {
  Matrix columns;
  Vector target;
};

struct Done {
  bool operator==(const Done&) const = default;
};

struct ErrorMsg {
  std::uint32_t code = 0;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};

enum class ErrorCode : std::uint32_t {
  internal = 1,
  bad_request = 2,
  shard_mismatch = 3,
  version_mismatch = 4,
};

using Message = std::variant<Init, ShardInfo, CorrelateRequest, PartialCorrelation, NnlsRequest, PartialWeights,
                             ResidualUpdate, ResidualAck, ColumnsRequest, ColumnBlock, Done, ErrorMsg>;

Tag tag_of(const Message& msg);
const char* to_string(Tag tag);

// Full frame including the length prefix.
std::vector<char> encode(const Message& msg);

// Decodes the bytes after the length prefix. Throws FormatError with
// version_mismatch for a foreign protocol version, shape_inconsistency for
// an unknown tag or leftover bytes, truncated_payload for short payloads.
Message decode(std::span<const char> body);

bool operator==(const PartialCorrelation& a, const PartialCorrelation& b);
bool operator==(const PartialWeights& a, const PartialWeights& b);
bool operator==(const ResidualUpdate& a, const ResidualUpdate& b);
bool operator==(const ColumnBlock& a, const ColumnBlock& b);

}  // namespace gtp::dist
