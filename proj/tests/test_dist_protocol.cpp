#include <cmath>
#include <limits>
#include <thread>

#include "doctest.h"
#include "gtp/dist_transport.hpp"
#include "gtp/rng.hpp"

using namespace gtp;
using namespace gtp::dist;

namespace {

Vector random_vector(Rng& rng, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = rng.normal() * 1e3;
  return v;
}

IndexList random_indices(Rng& rng, Index n) {
  IndexList out;
  for (Index i = 0; i < n; ++i) out.push_back(static_cast<Index>(rng.below(1u << 20)));
  return out;
}

std::vector<Message> sample_messages(Rng& rng) {
  const Index n = static_cast<Index>(rng.below(40));
  const Index k = static_cast<Index>(rng.below(10));
  Matrix cols(n, k);
  for (Index i = 0; i < cols.size(); ++i) cols.data()[i] = rng.normal();
  return {
      Init{static_cast<std::uint32_t>(rng.below(9)), 9, 1, 1e-10, rng.next_u64()},
      ShardInfo{2, 0, 2, 0, 256, rng.next_u64(), rng.uniform()},
      CorrelateRequest{rng.next_u64()},
      PartialCorrelation{random_vector(rng, n)},
      NnlsRequest{rng.next_u64(), rng.below(2) ? NnlsStage::pool : NnlsStage::final, random_indices(rng, k)},
      PartialWeights{random_vector(rng, k), rng.below(2) == 1},
      ResidualUpdate{rng.next_u64(), random_indices(rng, k), random_vector(rng, k)},
      ResidualAck{rng.uniform()},
      ColumnsRequest{random_indices(rng, k)},
      ColumnBlock{cols, random_vector(rng, n)},
      Done{},
      ErrorMsg{3, "shard mismatch: \xce\xbb"},
  };
}

std::vector<char> body_of(const std::vector<char>& frame) { return {frame.begin() + 4, frame.end()}; }

}  // namespace

TEST_CASE("every message survives encode and decode") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    for (const auto& msg : sample_messages(rng)) {
      const auto frame = encode(msg);
      std::uint32_t len = 0;
      for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(frame[i])) << (8 * i);
      CHECK(len == frame.size() - 4);
      CHECK(static_cast<std::uint8_t>(frame[4]) == kProtocolVersion);
      CHECK(static_cast<std::uint8_t>(frame[5]) == static_cast<std::uint8_t>(tag_of(msg)));
      const Message back = decode(body_of(frame));
      CHECK(back.index() == msg.index());
      CHECK(back == msg);
    }
  }
}

TEST_CASE("vectors travel bit exactly") {
  Vector v(3);
  v << -0.0, 1e-310, std::numeric_limits<double>::max();
  const auto back = std::get<PartialCorrelation>(decode(body_of(encode(PartialCorrelation{v}))));
  CHECK(std::signbit(back.values(0)));
  CHECK(back.values(1) == 1e-310);
  CHECK(back.values(2) == std::numeric_limits<double>::max());
}

TEST_CASE("malformed frames are rejected distinctly") {
  auto body = body_of(encode(CorrelateRequest{4}));

  SUBCASE("foreign version") {
    body[0] = static_cast<char>(kProtocolVersion + 1);
    try {
      decode(body);
      FAIL("accepted");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatErrc::version_mismatch);
    }
  }
  SUBCASE("unknown tag") {
    body[1] = static_cast<char>(99);
    try {
      decode(body);
      FAIL("accepted");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatErrc::shape_inconsistency);
    }
  }
  SUBCASE("trailing bytes") {
    body.push_back(0);
    try {
      decode(body);
      FAIL("accepted");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatErrc::shape_inconsistency);
    }
  }
  SUBCASE("short payload") {
    body.pop_back();
    try {
      decode(body);
      FAIL("accepted");
    } catch (const FormatError& e) {
      CHECK(e.code() == FormatErrc::truncated_payload);
    }
  }
}

TEST_CASE("in-process channels deliver in order and report closure") {
  auto [a, b] = make_in_process_pair();
  send_message(*a, CorrelateRequest{1});
  send_message(*a, CorrelateRequest{2});
  send_message(*b, ResidualAck{0.5});
  CHECK(std::get<CorrelateRequest>(receive_message(*b)).iteration == 1);
  CHECK(std::get<CorrelateRequest>(receive_message(*b)).iteration == 2);
  CHECK(std::get<ResidualAck>(receive_message(*a)).sq_norm == 0.5);
  CHECK_THROWS_AS(receive_message(*a, Millis(20)), TransportError);
  b->close();
  CHECK_THROWS_AS(receive_message(*a, Millis(20)), TransportError);
  CHECK_THROWS_AS(send_message(*a, Done{}), TransportError);
}

TEST_CASE("socket channels carry the same frames") {
  SocketListener listener({"127.0.0.1", 0});
  REQUIRE(listener.port() != 0);
  Rng rng(77);
  const auto messages = sample_messages(rng);
  std::jthread server([&] {
    auto ch = listener.accept(Millis(5000));
    for (std::size_t i = 0; i < messages.size(); ++i) send_message(*ch, receive_message(*ch, Millis(5000)));
  });
  auto client = connect_to({"127.0.0.1", listener.port()}, Millis(5000));
  for (const auto& msg : messages) {
    send_message(*client, msg);
    CHECK(receive_message(*client, Millis(5000)) == msg);
  }
  server.join();
  CHECK_THROWS_AS(receive_message(*client, Millis(2000)), TransportError);
}

TEST_CASE("socket receive times out") {
  SocketListener listener({"127.0.0.1", 0});
  std::unique_ptr<Channel> server_end;
  std::jthread server([&] { server_end = listener.accept(Millis(5000)); });
  auto client = connect_to({"127.0.0.1", listener.port()}, Millis(5000));
  server.join();
  CHECK_THROWS_AS(receive_message(*client, Millis(50)), TransportError);
}

TEST_CASE("endpoint parsing") {
  const auto ep = parse_endpoint("localhost:7001");
  CHECK(ep.host == "localhost");
  CHECK(ep.port == 7001);
  CHECK(to_string(ep) == "localhost:7001");
  CHECK_THROWS_AS(parse_endpoint("localhost"), ValidationError);
  CHECK_THROWS_AS(parse_endpoint("localhost:99999"), ValidationError);
  CHECK_THROWS_AS(parse_endpoint("localhost:7x"), ValidationError);
}
