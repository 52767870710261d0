#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "gtp/dist.hpp"
#include "gtp/nnls.hpp"

namespace gtp::dist {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

std::string format_support(const IndexList& support) {
  std::ostringstream out;
  out << '{';
  for (std::size_t i = 0; i < support.size(); ++i) out << (i ? "," : "") << support[i];
  out << '}';
  return out.str();
}

// ---- worker ----

class WorkerState {
 public:
  explicit WorkerState(const Shard& shard) : shard_(shard), resid_(shard.design.b) {}

  Message handle(const Message& request) {
    return std::visit([this](const auto& msg) { return on(msg); }, request);
  }

  bool finished() const noexcept { return finished_; }

 private:
  Message on(const Init& m) {
    const auto& a = shard_.assignment;
    if (m.machine_id != a.machine_id || m.n_machines != a.n_machines) {
      return ErrorMsg{static_cast<std::uint32_t>(ErrorCode::shard_mismatch),
                      "shard is machine " + std::to_string(a.machine_id) + " of " + std::to_string(a.n_machines) +
                          ", coordinator expects " + std::to_string(m.machine_id) + " of " +
                          std::to_string(m.n_machines)};
    }
    if (m.correlation_mode > static_cast<std::uint8_t>(CorrelationMode::target_literal)) {
      return bad_request("unknown correlation mode");
    }
    mode_ = static_cast<CorrelationMode>(m.correlation_mode);
    nnls_ = {m.nnls_tol, static_cast<Index>(m.nnls_max_iter)};
    resid_ = shard_.design.b;
    initialized_ = true;
    return ShardInfo{a.machine_id,
                     static_cast<std::uint64_t>(a.timestep_begin),
                     static_cast<std::uint64_t>(a.timestep_end),
                     static_cast<std::uint64_t>(a.row_begin),
                     static_cast<std::uint64_t>(a.row_end),
                     static_cast<std::uint64_t>(a.n_columns),
                     shard_.design.b.squaredNorm()};
  }

  Message on(const CorrelateRequest&) {
    if (!initialized_) return bad_request("correlate before init");
    const Vector& probe = mode_ == CorrelationMode::residual ? resid_ : shard_.design.b;
    return PartialCorrelation{correlate(shard_.design.a, probe)};
  }

  Message on(const NnlsRequest& m) {
    if (!initialized_) return bad_request("nnls before init");
    if (auto err = check_support(m.support)) return *err;
    const NnlsResult fit = solve_nnls(gather_columns(shard_.design.a, m.support), shard_.design.b, nnls_);
    return PartialWeights{fit.weights, fit.converged};
  }

  Message on(const ResidualUpdate& m) {
    if (!initialized_) return bad_request("residual update before init");
    if (auto err = check_support(m.support)) return *err;
    if (static_cast<Index>(m.support.size()) != m.weights.size()) return bad_request("weights not aligned with support");
    resid_ = shard_.design.b - gather_columns(shard_.design.a, m.support) * m.weights;
    return ResidualAck{resid_.squaredNorm()};
  }

  Message on(const ColumnsRequest& m) {
    if (!initialized_) return bad_request("columns request before init");
    if (auto err = check_support(m.support)) return *err;
    return ColumnBlock{gather_columns(shard_.design.a, m.support), shard_.design.b};
  }

  Message on(const Done&) {
    finished_ = true;
    return Done{};
  }

  template <typename T>
  Message on(const T&) {
    return bad_request("unexpected message " + std::string(to_string(tag_of(Message{T{}}))));
  }

  std::optional<ErrorMsg> check_support(const IndexList& support) const {
    for (Index j : support) {
      if (j < 0 || j >= shard_.design.cols()) return bad_request("column " + std::to_string(j) + " out of range");
    }
    return std::nullopt;
  }

  static ErrorMsg bad_request(const std::string& detail) {
    return ErrorMsg{static_cast<std::uint32_t>(ErrorCode::bad_request), detail};
  }

  const Shard& shard_;
  Vector resid_;
  CorrelationMode mode_ = CorrelationMode::residual;
  NnlsOptions nnls_;
  bool initialized_ = false;
  bool finished_ = false;
};

// ---- coordinator ----

class Round {
 public:
  Round(std::vector<std::unique_ptr<Channel>>& channels, Millis timeout) : channels_(channels), timeout_(timeout) {}

  void broadcast(const Message& msg) {
    for (std::size_t i = 0; i < channels_.size(); ++i) send(i, msg);
  }

  void send(std::size_t i, const Message& msg) {
    try {
      send_message(*channels_[i], msg);
    } catch (const Error& e) {
      throw DistError(static_cast<std::uint32_t>(i), std::string("send failed: ") + e.what());
    }
  }

  template <typename T>
  T receive(std::size_t i) {
    const auto id = static_cast<std::uint32_t>(i);
    Message msg;
    try {
      msg = receive_message(*channels_[i], timeout_);
    } catch (const Error& e) {
      throw DistError(id, e.what());
    }
    if (const auto* err = std::get_if<ErrorMsg>(&msg)) {
      throw DistError(id, "worker reported error " + std::to_string(err->code) + ": " + err->detail);
    }
    if (auto* reply = std::get_if<T>(&msg)) return std::move(*reply);
    throw DistError(id, std::string("protocol violation: got ") + to_string(tag_of(msg)) + ", expected " +
                            to_string(tag_of(Message{T{}})));
  }

  template <typename T>
  std::vector<T> gather() {
    std::vector<T> out;
    out.reserve(channels_.size());
    for (std::size_t i = 0; i < channels_.size(); ++i) out.push_back(receive<T>(i));
    return out;
  }

  std::size_t size() const noexcept { return channels_.size(); }

 private:
  std::vector<std::unique_ptr<Channel>>& channels_;
  Millis timeout_;
};

Vector gather_sum(const std::vector<Vector>& parts, Index expected) {
  Vector total = Vector::Zero(expected);
  for (const auto& part : parts) total += part;
  return total;
}

struct Progress {
  Index iteration = 0;
  IndexList support;
};

Selection coordinate(Round& round, const DistConfig& config, DistTrace* trace, Progress& progress) {
  const auto& pc = config.pursuit;
  if (pc.iterations < 1) throw ValidationError("iterations K must be >= 1");
  const auto n_machines = static_cast<std::uint32_t>(round.size());
  if (n_machines == 0) throw ValidationError("no workers");

  Selection sel;
  sel.algorithm = "gtp_dist";
  sel.config = pc;
  const auto start = Clock::now();

  for (std::uint32_t i = 0; i < n_machines; ++i) {
    round.send(i, Init{i, n_machines, static_cast<std::uint8_t>(pc.correlation_mode), pc.nnls_tol,
                       static_cast<std::uint64_t>(pc.nnls_max_iter)});
  }
  const auto infos = round.gather<ShardInfo>();
  std::vector<ShardAssignment> assignments;
  for (const auto& info : infos) {
    assignments.push_back({info.machine_id, n_machines, static_cast<Index>(info.timestep_begin),
                           static_cast<Index>(info.timestep_end), static_cast<Index>(info.row_begin),
                           static_cast<Index>(info.row_end), static_cast<Index>(info.n_columns)});
  }
  const auto& first = assignments.front();
  if (first.timestep_end <= first.timestep_begin) throw DistError(0, "shard holds no timesteps");
  const Index subspace_dim = (first.row_end - first.row_begin) / (first.timestep_end - first.timestep_begin);
  validate_partition(assignments, subspace_dim);

  const Index n = first.n_columns;
  const Index budget = pc.budget;
  if (budget < 1 || budget > n) {
    throw ValidationError("budget M = " + std::to_string(budget) + " outside [1, N = " + std::to_string(n) + "]");
  }
  Index pool_size = 2 * budget;
  if (pool_size > n) {
    pool_size = n;
    sel.pool_clamped = true;
  }

  double b_sq = 0.0;
  for (const auto& info : infos) b_sq += info.target_sq_norm;
  const double b_norm = std::sqrt(b_sq);
  sel.residual_history.push_back(b_norm);

  auto sum_weights = [&](const std::vector<PartialWeights>& parts, Index len) {
    std::vector<Vector> w;
    for (const auto& part : parts) {
      if (part.weights.size() != len) throw DistError(static_cast<std::uint32_t>(&part - parts.data()),
                                                      "weight vector has the wrong length");
      w.push_back(part.weights);
    }
    Vector total = gather_sum(w, len);
    if (config.aggregation == WeightAggregation::mean) total /= static_cast<double>(n_machines);
    return total;
  };
  auto any_nonconverged = [](const std::vector<PartialWeights>& parts) {
    return std::any_of(parts.begin(), parts.end(), [](const PartialWeights& p) { return !p.converged; });
  };

  Vector aggregated;
  for (Index k = 1; k <= pc.iterations; ++k) {
    progress.iteration = k;
    round.broadcast(CorrelateRequest{static_cast<std::uint64_t>(k)});
    std::vector<Vector> partials;
    for (auto& part : round.gather<PartialCorrelation>()) {
      if (part.values.size() != n) {
        throw DistError(static_cast<std::uint32_t>(partials.size()), "partial correlation has the wrong length");
      }
      partials.push_back(std::move(part.values));
    }
    const Vector p = gather_sum(partials, n);
    const IndexList pool = candidate_pool(p, pool_size, progress.support);

    round.broadcast(NnlsRequest{static_cast<std::uint64_t>(k), NnlsStage::pool, pool});
    const auto pool_parts = round.gather<PartialWeights>();
    if (any_nonconverged(pool_parts)) ++sel.nnls_nonconverged;
    const Vector pool_weights = sum_weights(pool_parts, static_cast<Index>(pool.size()));

    bool padded = false;
    progress.support = prune_support(pool, pool_weights, p, budget, &padded);
    if (padded) ++sel.padded_iterations;
    const IndexList& support = progress.support;

    round.broadcast(NnlsRequest{static_cast<std::uint64_t>(k), NnlsStage::final, support});
    const auto final_parts = round.gather<PartialWeights>();
    if (any_nonconverged(final_parts)) ++sel.nnls_nonconverged;
    aggregated = sum_weights(final_parts, static_cast<Index>(support.size()));

    for (std::size_t i = 0; i < round.size(); ++i) {
      round.send(i, ResidualUpdate{static_cast<std::uint64_t>(k), support, final_parts[i].weights});
    }
    double r_sq = 0.0;
    for (const auto& ack : round.gather<ResidualAck>()) r_sq += ack.sq_norm;
    const double rn = std::sqrt(r_sq);
    const double prev = sel.residual_history.back();
    sel.residual_history.push_back(rn);
    sel.per_iteration_supports.push_back(support);
    sel.per_iteration_weights.push_back(aggregated);

    if (trace) {
      trace->gathered_correlations.push_back(p);
      trace->pools.push_back(pool);
      trace->supports.push_back(support);
      std::vector<Vector> local;
      for (const auto& part : final_parts) local.push_back(part.weights);
      trace->local_final_weights.push_back(std::move(local));
    }
    if (pc.early_exit && b_norm > 0.0 && std::abs(rn - prev) / b_norm < kEarlyExitTol) break;
  }
  sel.timings.emplace_back("rounds", seconds_since(start));

  const auto final_start = Clock::now();
  const IndexList& support = progress.support;
  round.broadcast(ColumnsRequest{support});
  const auto blocks = round.gather<ColumnBlock>();
  Index rows = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& blk = blocks[i];
    const Index expect = assignments[i].row_end - assignments[i].row_begin;
    if (blk.columns.rows() != expect || blk.columns.cols() != static_cast<Index>(support.size()) ||
        blk.target.size() != expect) {
      throw DistError(static_cast<std::uint32_t>(i), "column block has the wrong shape");
    }
    rows += expect;
  }
  Matrix a_support(rows, static_cast<Index>(support.size()));
  Vector b(rows);
  Index row = 0;
  for (const auto& blk : blocks) {
    a_support.middleRows(row, blk.columns.rows()) = blk.columns;
    b.segment(row, blk.target.size()) = blk.target;
    row += blk.columns.rows();
  }
  const NnlsResult fit = solve_nnls(a_support, b, pc.nnls());
  if (!fit.converged) ++sel.nnls_nonconverged;
  sel.indices = support;
  sel.weights = fit.weights;
  sel.aggregated_weights = aggregated;
  sel.final_residual = Vector(b - a_support * fit.weights).norm();
  sel.timings.emplace_back("final_nnls", seconds_since(final_start));

  round.broadcast(Done{});
  round.gather<Done>();
  return sel;
}

}  // namespace

void serve_worker(Channel& channel, const Shard& shard, const WorkerOptions& options) {
  WorkerState state(shard);
  int served = 0;
  while (!state.finished()) {
    std::vector<char> frame;
    try {
      frame = channel.receive_frame(kNoTimeout);
    } catch (const TransportError&) {
      return;
    }
    if (options.fail_after_requests && served >= *options.fail_after_requests) {
      channel.close();
      return;
    }
    ++served;
    Message reply;
    try {
      reply = state.handle(decode(frame));
    } catch (const FormatError& e) {
      const auto code = e.code() == FormatErrc::version_mismatch ? ErrorCode::version_mismatch : ErrorCode::bad_request;
      reply = ErrorMsg{static_cast<std::uint32_t>(code), e.what()};
    } catch (const std::exception& e) {
      reply = ErrorMsg{static_cast<std::uint32_t>(ErrorCode::internal), e.what()};
    }
    try {
      send_message(channel, reply);
    } catch (const TransportError&) {
      return;
    }
  }
}

void run_worker(const Endpoint& endpoint, const Shard& shard, const WorkerOptions& options,
                const std::function<void(std::uint16_t)>& on_listening) {
  require_valid(shard.design);
  SocketListener listener(endpoint);
  if (on_listening) on_listening(listener.port());
  auto channel = listener.accept();
  serve_worker(*channel, shard, options);
}

Selection run_coordinator(std::vector<std::unique_ptr<Channel>>& channels, const DistConfig& config,
                          DistTrace* trace) {
  Round round(channels, config.timeout);
  Progress progress;
  try {
    return coordinate(round, config, trace, progress);
  } catch (const DistError& e) {
    for (auto& ch : channels) ch->close();
    std::string where = progress.iteration == 0 ? "during setup" : "at iteration " + std::to_string(progress.iteration);
    if (!progress.support.empty()) where += ", last support " + format_support(progress.support);
    throw DistError(e.machine_id(), e.detail() + " (" + where + ")");
  } catch (...) {
    for (auto& ch : channels) ch->close();
    throw;
  }
}

Selection run_coordinator(const std::vector<Endpoint>& endpoints, const DistConfig& config, DistTrace* trace) {
  std::vector<std::unique_ptr<Channel>> channels;
  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    try {
      channels.push_back(connect_to(endpoints[i], config.timeout));
    } catch (const TransportError& e) {
      throw DistError(static_cast<std::uint32_t>(i), e.what());
    }
  }
  return run_coordinator(channels, config, trace);
}

Selection dist_cosamp(const std::vector<Shard>& shards, const DistConfig& config, Transport transport,
                      DistTrace* trace, const std::vector<WorkerOptions>& worker_options) {
  if (shards.empty()) throw ValidationError("no shards");
  std::vector<ShardAssignment> assignments;
  for (const auto& s : shards) {
    require_valid(s.design);
    assignments.push_back(s.assignment);
  }
  validate_partition(assignments, shards.front().design.subspace_dim);
  auto options_for = [&](std::size_t i) { return i < worker_options.size() ? worker_options[i] : WorkerOptions{}; };

  std::vector<std::jthread> workers;
  std::vector<std::unique_ptr<Channel>> channels;
  if (transport == Transport::in_process) {
    std::vector<std::unique_ptr<Channel>> worker_ends;
    for (std::size_t i = 0; i < shards.size(); ++i) {
      auto [coord_end, worker_end] = make_in_process_pair();
      channels.push_back(std::move(coord_end));
      worker_ends.push_back(std::move(worker_end));
    }
    for (std::size_t i = 0; i < shards.size(); ++i) {
      workers.emplace_back([&shard = shards[i], ch = std::move(worker_ends[i]), opt = options_for(i)] {
        serve_worker(*ch, shard, opt);
      });
    }
  } else {
    std::vector<Endpoint> endpoints;
    std::vector<std::unique_ptr<SocketListener>> listeners;
    for (std::size_t i = 0; i < shards.size(); ++i) {
      listeners.push_back(std::make_unique<SocketListener>(Endpoint{"127.0.0.1", 0}));
      endpoints.push_back({"127.0.0.1", listeners.back()->port()});
    }
    for (std::size_t i = 0; i < shards.size(); ++i) {
      workers.emplace_back([&shard = shards[i], l = std::move(listeners[i]), opt = options_for(i),
                            timeout = config.timeout] {
        try {
          auto ch = l->accept(timeout);
          serve_worker(*ch, shard, opt);
        } catch (const TransportError&) {
        }
      });
    }
    for (std::size_t i = 0; i < endpoints.size(); ++i) {
      try {
        channels.push_back(connect_to(endpoints[i], config.timeout));
      } catch (const TransportError& e) {
        throw DistError(static_cast<std::uint32_t>(i), e.what());
      }
    }
  }
  // channels is declared after workers, so it is destroyed first and every
  // worker sees its peer disconnect before the threads are joined.
  return run_coordinator(channels, config, trace);
}

}  // namespace gtp::dist
