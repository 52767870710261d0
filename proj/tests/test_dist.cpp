#include <cstring>
#include <future>
#include <thread>

#include "doctest.h"
#include "gtp/dist.hpp"
#include "gtp/synth.hpp"
#include "temp_dir.hpp"

using namespace gtp;
using namespace gtp::dist;

namespace {

DistConfig config(Index budget, Index iterations) {
  DistConfig c;
  c.pursuit.budget = budget;
  c.pursuit.iterations = iterations;
  c.timeout = Millis(10000);
  return c;
}

bool bits_equal(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool same(const Selection& a, const Selection& b) {
  return a.indices == b.indices && bits_equal(a.weights, b.weights) && a.residual_history == b.residual_history &&
         bits_equal(a.aggregated_weights, b.aggregated_weights) && a.final_residual == b.final_residual &&
         a.per_iteration_supports == b.per_iteration_supports;
}

DesignSystem ten_step_design() { return with_timesteps(gen_sparse_instance(400, 80, 8, 0.05, 31).design, 10); }

}  // namespace

TEST_CASE("partition sizes") {
  const auto ten = plan_partition(10, 4, 100, 5);
  REQUIRE(ten.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(ten[i].timestep_end - ten[i].timestep_begin == 2);
    CHECK(ten[i].row_begin == 8 * static_cast<Index>(i));
    CHECK(ten[i].n_columns == 100);
  }
  const auto uneven = plan_partition(3, 2, 7, 2);
  CHECK(uneven[0].timestep_begin == 0);
  CHECK(uneven[0].timestep_end == 2);
  CHECK(uneven[1].timestep_begin == 2);
  CHECK(uneven[1].timestep_end == 3);
  CHECK_THROWS_AS(plan_partition(3, 2, 7, 4), ValidationError);
  CHECK_THROWS_AS(plan_partition(3, 2, 7, 0), ValidationError);
}

TEST_CASE("shards reassemble the design exactly") {
  const auto design = ten_step_design();
  for (Index machines : {1, 2, 3, 5, 10}) {
    const auto shards = partition_design(design, machines);
    Matrix a(0, design.cols());
    Vector b(0);
    for (const auto& s : shards) {
      Matrix a2(a.rows() + s.design.rows(), a.cols());
      a2 << a, s.design.a;
      Vector b2(b.size() + s.design.b.size());
      b2 << b, s.design.b;
      a = a2;
      b = b2;
      CHECK(s.design.column_ids == design.column_ids);
    }
    CHECK(a == design.a);
    CHECK(b == design.b);
  }
  const auto one = partition_design(design, 1);
  CHECK(one.front().design.a == design.a);
}

TEST_CASE("partition validation catches gaps") {
  auto parts = plan_partition(6, 2, 5, 3);
  CHECK_NOTHROW(validate_partition(parts, 2));
  parts[1].timestep_begin = 3;
  CHECK_THROWS_AS(validate_partition(parts, 2), ValidationError);
  parts = plan_partition(6, 2, 5, 3);
  parts[2].n_columns = 4;
  CHECK_THROWS_AS(validate_partition(parts, 2), ValidationError);
}

TEST_CASE("shard files round trip") {
  TempDir dir;
  const auto shards = partition_design(ten_step_design(), 3);
  write_shard(shards[1], dir / "s1.bin");
  const auto back = read_shard(dir / "s1.bin");
  CHECK(back.assignment == shards[1].assignment);
  CHECK(back.design.a == shards[1].design.a);
  CHECK(back.design.b == shards[1].design.b);
  write_design(shards[1].design, dir / "d.bin");
  CHECK_THROWS_AS(read_shard(dir / "d.bin"), FormatError);
}

TEST_CASE("one machine reproduces centralized pursuit") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto design = with_timesteps(gen_sparse_instance(200, 48, 6, 0.1, 40 + seed).design, 1 + seed % 4);
    auto cfg = config(5, 5);
    const auto central = iter_cosamp(design, cfg.pursuit);
    const auto dist = dist_cosamp(partition_design(design, 1), cfg);
    CHECK(dist.indices == central.indices);
    CHECK(bits_equal(dist.weights, central.weights));
    CHECK(dist.residual_history == central.residual_history);
    CHECK(dist.final_residual == central.final_residual);
    CHECK(dist.algorithm == "gtp_dist");
  }
}

TEST_CASE("duplicate example split over timesteps keeps one copy") {
  Matrix a(2, 3);
  a << 1, 1, 0,
       0, 0, 1;
  Vector b(2);
  b << 2, 1;
  const auto design = make_design(a, b, 2);
  for (Index machines : {1, 2}) {
    const auto sel = dist_cosamp(partition_design(design, machines), config(2, 1));
    CHECK(sel.indices == IndexList{0, 2});
    CHECK(sel.final_residual < 1e-12);
    CHECK(sel.weights(0) == doctest::Approx(2.0));
    CHECK(sel.weights(1) == doctest::Approx(1.0));
  }
}

TEST_CASE("gathered correlations are exact and the first pool is partition invariant") {
  const auto design = ten_step_design();
  const auto cfg = config(8, 4);
  IndexList first_pool;
  for (Index machines : {1, 2, 5, 10}) {
    const auto shards = partition_design(design, machines);
    DistTrace trace;
    dist_cosamp(shards, cfg, Transport::in_process, &trace);
    REQUIRE(trace.gathered_correlations.size() == 4);
    CHECK((trace.gathered_correlations[0] - design.a.transpose() * design.b).cwiseAbs().maxCoeff() < 1e-6);
    if (machines == 1) first_pool = trace.pools[0];
    CHECK(trace.pools[0] == first_pool);
    for (std::size_t k = 1; k < 4; ++k) {
      Vector c(design.rows());
      for (std::size_t s = 0; s < shards.size(); ++s) {
        const auto& asg = shards[s].assignment;
        const Index rows = asg.row_end - asg.row_begin;
        Vector fit = Vector::Zero(rows);
        for (std::size_t j = 0; j < trace.supports[k - 1].size(); ++j) {
          fit += trace.local_final_weights[k - 1][s](static_cast<Index>(j)) *
                 design.a.col(trace.supports[k - 1][j]).segment(asg.row_begin, rows);
        }
        c.segment(asg.row_begin, rows) = design.b.segment(asg.row_begin, rows) - fit;
      }
      CHECK((trace.gathered_correlations[k] - design.a.transpose() * c).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("in-process and socket transports agree bit for bit") {
  const auto shards = partition_design(ten_step_design(), 4);
  const auto cfg = config(8, 5);
  const auto a = dist_cosamp(shards, cfg, Transport::in_process);
  const auto b = dist_cosamp(shards, cfg, Transport::socket);
  const auto c = dist_cosamp(shards, cfg, Transport::in_process);
  CHECK(same(a, b));
  CHECK(same(a, c));
  CHECK(a.aggregated_weights.size() == 8);
  CHECK(a.residual_history.size() == 6);
}

TEST_CASE("mean aggregation divides the summed weights") {
  const auto shards = partition_design(ten_step_design(), 2);
  auto cfg = config(8, 1);
  const auto summed = dist_cosamp(shards, cfg);
  cfg.aggregation = WeightAggregation::mean;
  const auto mean = dist_cosamp(shards, cfg);
  CHECK(mean.indices == summed.indices);
  CHECK((mean.aggregated_weights * 2.0 - summed.aggregated_weights).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(parse_weight_aggregation("mean") == WeightAggregation::mean);
  CHECK_THROWS_AS(parse_weight_aggregation("max"), ValidationError);
}

TEST_CASE("a worker dying mid-run is reported with its machine id") {
  const auto shards = partition_design(ten_step_design(), 4);
  for (auto transport : {Transport::in_process, Transport::socket}) {
    std::vector<WorkerOptions> opts(4);
    opts[2].fail_after_requests = 5;
    try {
      dist_cosamp(shards, config(8, 5), transport, nullptr, opts);
      FAIL("run survived a dead worker");
    } catch (const DistError& e) {
      CHECK(e.machine_id() == 2);
      const std::string msg = e.what();
      CHECK(msg.find("machine 2") != std::string::npos);
      CHECK(msg.find("iteration") != std::string::npos);
    }
  }
}

TEST_CASE("an unresponsive worker times out") {
  auto [coord, worker] = make_in_process_pair();
  std::vector<std::unique_ptr<Channel>> channels;
  channels.push_back(std::move(coord));
  auto cfg = config(2, 1);
  cfg.timeout = Millis(100);
  try {
    run_coordinator(channels, cfg);
    FAIL("no timeout");
  } catch (const DistError& e) {
    CHECK(e.machine_id() == 0);
    CHECK(std::string(e.what()).find("timed out") != std::string::npos);
  }
}

TEST_CASE("a shard served under the wrong machine id is refused") {
  const auto shards = partition_design(ten_step_design(), 2);
  auto [coord, worker] = make_in_process_pair();
  std::jthread t([&, ch = std::move(worker)] { serve_worker(*ch, shards[1]); });
  std::vector<std::unique_ptr<Channel>> channels;
  channels.push_back(std::move(coord));
  CHECK_THROWS_AS(run_coordinator(channels, config(2, 1)), DistError);
}

TEST_CASE("workers answer foreign protocol versions with an error") {
  const auto shards = partition_design(ten_step_design(), 1);
  auto [coord, worker] = make_in_process_pair();
  std::jthread t([&, ch = std::move(worker)] { serve_worker(*ch, shards[0]); });
  auto frame = encode(CorrelateRequest{1});
  frame[4] = static_cast<char>(kProtocolVersion + 1);
  coord->send_frame(frame);
  const auto reply = receive_message(*coord, Millis(5000));
  REQUIRE(std::holds_alternative<ErrorMsg>(reply));
  CHECK(std::get<ErrorMsg>(reply).code == static_cast<std::uint32_t>(ErrorCode::version_mismatch));
  coord->close();
}

TEST_CASE("standalone workers over endpoints") {
  const auto design = ten_step_design();
  const auto shards = partition_design(design, 2);
  std::vector<std::promise<std::uint16_t>> ports(2);
  std::vector<std::jthread> workers;
  for (std::size_t i = 0; i < 2; ++i) {
    workers.emplace_back([&, i] {
      run_worker({"127.0.0.1", 0}, shards[i], {}, [&](std::uint16_t p) { ports[i].set_value(p); });
    });
  }
  std::vector<Endpoint> endpoints;
  for (auto& p : ports) endpoints.push_back({"127.0.0.1", p.get_future().get()});
  const auto cfg = config(8, 3);
  const auto remote = run_coordinator(endpoints, cfg);
  CHECK(same(remote, dist_cosamp(shards, cfg)));
}
