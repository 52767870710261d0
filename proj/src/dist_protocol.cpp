#include "gtp/dist_protocol.hpp"

#include <cstring>

#include "gtp/binary_io.hpp"

namespace gtp::dist {
namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void put_vector(ByteWriter& w, const Vector& v) {
  w.u64(static_cast<std::uint64_t>(v.size()));
  w.f64_array(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

Vector get_vector(ByteReader& r) {
  const auto n = r.u64("vector length");
  if (n > r.remaining() / 8) throw FormatError(FormatErrc::truncated_payload, "vector longer than frame");
  Vector v(static_cast<Index>(n));
  r.f64_array(std::span<double>(v.data(), static_cast<std::size_t>(n)), "vector");
  return v;
}

void put_indices(ByteWriter& w, const IndexList& idx) {
  w.u64(idx.size());
  for (Index i : idx) w.u64(static_cast<std::uint64_t>(i));
}

IndexList get_indices(ByteReader& r) {
  const auto n = r.u64("index list length");
  if (n > r.remaining() / 8) throw FormatError(FormatErrc::truncated_payload, "index list longer than frame");
  IndexList idx(n);
  for (auto& i : idx) i = static_cast<Index>(r.u64("index list"));
  return idx;
}

bool same_bits(const double* a, const double* b, Index n) {
  return n == 0 || std::memcmp(a, b, sizeof(double) * static_cast<std::size_t>(n)) == 0;
}

}  // namespace

Tag tag_of(const Message& msg) {
  return std::visit(overloaded{
                        [](const Init&) { return Tag::init; },
                        [](const ShardInfo&) { return Tag::shard_info; },
                        [](const CorrelateRequest&) { return Tag::correlate_request; },
                        [](const PartialCorrelation&) { return Tag::partial_correlation; },
                        [](const NnlsRequest&) { return Tag::nnls_request; },
                        [](const PartialWeights&) { return Tag::partial_weights; },
                        [](const ResidualUpdate&) { return Tag::residual_update; },
                        [](const ResidualAck&) { return Tag::residual_ack; },
                        [](const ColumnsRequest&) { return Tag::columns_request; },
                        [](const ColumnBlock&) { return Tag::column_block; },
                        [](const Done&) { return Tag::done; },
                        [](const ErrorMsg&) { return Tag::error; },
                    },
                    msg);
}

const char* to_string(Tag tag) {
  switch (tag) {
    case Tag::init: return "Init";
    case Tag::shard_info: return "ShardInfo";
    case Tag::correlate_request: return "CorrelateRequest";
    case Tag::partial_correlation: return "PartialCorrelation";
    case Tag::nnls_request: return "NnlsRequest";
    case Tag::partial_weights: return "PartialWeights";
    case Tag::residual_update: return "ResidualUpdate";
    case Tag::residual_ack: return "ResidualAck";
    case Tag::columns_request: return "ColumnsRequest";
    case Tag::column_block: return "ColumnBlock";
    case Tag::done: return "Done";
    case Tag::error: return "Error";
  }
  return "?";
}

std::vector<char> encode(const Message& msg) {
  ByteWriter w;
  w.u32(0);  // length placeholder
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(tag_of(msg)));
  std::visit(overloaded{
                 [&](const Init& m) {
                   w.u32(m.machine_id);
                   w.u32(m.n_machines);
                   w.u8(m.correlation_mode);
                   w.f64(m.nnls_tol);
                   w.u64(m.nnls_max_iter);
                 },
                 [&](const ShardInfo& m) {
                   w.u32(m.machine_id);
                   w.u64(m.timestep_begin);
                   w.u64(m.timestep_end);
                   w.u64(m.row_begin);
                   w.u64(m.row_end);
                   w.u64(m.n_columns);
                   w.f64(m.target_sq_norm);
                 },
                 [&](const CorrelateRequest& m) { w.u64(m.iteration); },
                 [&](const PartialCorrelation& m) { put_vector(w, m.values); },
                 [&](const NnlsRequest& m) {
                   w.u64(m.iteration);
                   w.u8(static_cast<std::uint8_t>(m.stage));
                   put_indices(w, m.support);
                 },
                 [&](const PartialWeights& m) {
                   put_vector(w, m.weights);
                   w.u8(m.converged ? 1 : 0);
                 },
                 [&](const ResidualUpdate& m) {
                   w.u64(m.iteration);
                   put_indices(w, m.support);
                   put_vector(w, m.weights);
                 },
                 [&](const ResidualAck& m) { w.f64(m.sq_norm); },
                 [&](const ColumnsRequest& m) { put_indices(w, m.support); },
                 [&](const ColumnBlock& m) {
                   w.u64(static_cast<std::uint64_t>(m.columns.rows()));
                   w.u64(static_cast<std::uint64_t>(m.columns.cols()));
                   w.f64_array(std::span<const double>(m.columns.data(), static_cast<std::size_t>(m.columns.size())));
                   put_vector(w, m.target);
                 },
                 [&](const Done&) {},
                 [&](const ErrorMsg& m) {
                   w.u32(m.code);
                   w.str(m.detail);
                 },
             },
             msg);
  auto frame = w.release();
  const auto body = frame.size() - 4;
  if (body > kMaxFrameBytes) throw ValidationError("protocol frame exceeds the size limit");
  for (int i = 0; i < 4; ++i) frame[static_cast<std::size_t>(i)] = static_cast<char>((body >> (8 * i)) & 0xFF);
  return frame;
}

Message decode(std::span<const char> body) {
  ByteReader r(body);
  const auto version = r.u8("frame header");
  if (version != kProtocolVersion) {
    throw FormatError(FormatErrc::version_mismatch, "protocol version " + std::to_string(version) +
                                                        ", expected " + std::to_string(kProtocolVersion));
  }
  const auto tag = static_cast<Tag>(r.u8("frame header"));
  Message msg;
  switch (tag) {
    case Tag::init: {
      Init m;
      m.machine_id = r.u32();
      m.n_machines = r.u32();
      m.correlation_mode = r.u8();
      m.nnls_tol = r.f64();
      m.nnls_max_iter = r.u64();
      msg = m;
      break;
    }
    case Tag::shard_info: {
      ShardInfo m;
      m.machine_id = r.u32();
      m.timestep_begin = r.u64();
      m.timestep_end = r.u64();
      m.row_begin = r.u64();
      m.row_end = r.u64();
      m.n_columns = r.u64();
      m.target_sq_norm = r.f64();
      msg = m;
      break;
    }
    case Tag::correlate_request: msg = CorrelateRequest{r.u64()}; break;
    case Tag::partial_correlation: msg = PartialCorrelation{get_vector(r)}; break;
    case Tag::nnls_request: {
      NnlsRequest m;
      m.iteration = r.u64();
      const auto stage = r.u8();
      if (stage > 1) throw FormatError(FormatErrc::shape_inconsistency, "unknown NNLS stage");
      m.stage = static_cast<NnlsStage>(stage);
      m.support = get_indices(r);
      msg = std::move(m);
      break;
    }
    case Tag::partial_weights: {
      PartialWeights m;
      m.weights = get_vector(r);
      m.converged = r.u8() != 0;
      msg = std::move(m);
      break;
    }
    case Tag::residual_update: {
      ResidualUpdate m;
      m.iteration = r.u64();
      m.support = get_indices(r);
      m.weights = get_vector(r);
      msg = std::move(m);
      break;
    }
    case Tag::residual_ack: msg = ResidualAck{r.f64()}; break;
    case Tag::columns_request: msg = ColumnsRequest{get_indices(r)}; break;
    case Tag::column_block: {
      const auto rows = r.u64();
      const auto cols = r.u64();
      if (cols != 0 && rows > r.remaining() / 8 / cols) {
        throw FormatError(FormatErrc::truncated_payload, "column block larger than frame");
      }
      ColumnBlock m;
      m.columns.resize(static_cast<Index>(rows), static_cast<Index>(cols));
      r.f64_array(std::span<double>(m.columns.data(), static_cast<std::size_t>(m.columns.size())), "column block");
      m.target = get_vector(r);
      msg = std::move(m);
      break;
    }
    case Tag::done: msg = Done{}; break;
    case Tag::error: {
      ErrorMsg m;
      m.code = r.u32();
      m.detail = r.str();
      msg = std::move(m);
      break;
    }
    default:
      throw FormatError(FormatErrc::shape_inconsistency, "unknown message tag " + std::to_string(static_cast<int>(tag)));
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrc::shape_inconsistency,
                      std::to_string(r.remaining()) + " trailing bytes after " + to_string(tag));
  }
  return msg;
}

bool operator==(const PartialCorrelation& a, const PartialCorrelation& b) {
  return a.values.size() == b.values.size() && same_bits(a.values.data(), b.values.data(), a.values.size());
}

bool operator==(const PartialWeights& a, const PartialWeights& b) {
  return a.converged == b.converged && a.weights.size() == b.weights.size() &&
         same_bits(a.weights.data(), b.weights.data(), a.weights.size());
}

bool operator==(const ResidualUpdate& a, const ResidualUpdate& b) {
  return a.iteration == b.iteration && a.support == b.support && a.weights.size() == b.weights.size() &&
         same_bits(a.weights.data(), b.weights.data(), a.weights.size());
}

bool operator==(const ColumnBlock& a, const ColumnBlock& b) {
  return a.columns.rows() == b.columns.rows() && a.columns.cols() == b.columns.cols() &&
         same_bits(a.columns.data(), b.columns.data(), a.columns.size()) && a.target.size() == b.target.size() &&
         same_bits(a.target.data(), b.target.data(), a.target.size());
}

}  // namespace gtp::dist
