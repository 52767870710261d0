#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gtp/dist_protocol.hpp"
#include "gtp/types.hpp"

namespace gtp::dist {

// Connection closed, timed out, or failed at the OS level.
class TransportError : public Error {
 public:
  using Error::Error;
};

using Millis = std::chrono::milliseconds;
inline constexpr Millis kNoTimeout{0};

// A bidirectional, ordered frame stream between coordinator and one worker.
class Channel {
 public:
  virtual ~Channel() = default;
  // frame includes the u32 length prefix
  virtual void send_frame(std::span<const char> frame) = 0;
  // returns the bytes after the length prefix; kNoTimeout waits forever
  virtual std::vector<char> receive_frame(Millis timeout) = 0;
  virtual void close() = 0;
};

void send_message(Channel& channel, const Message& msg);
Message receive_message(Channel& channel, Millis timeout = kNoTimeout);

// Two connected endpoints backed by in-memory queues. Frames still pass
// through the binary codec, so message semantics match the socket transport.
std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair();

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

// "host:port"
Endpoint parse_endpoint(const std::string& text);
std::string to_string(const Endpoint& endpoint);

// Blocking TCP listener; port 0 binds an ephemeral port.
class SocketListener {
 public:
  explicit SocketListener(const Endpoint& endpoint);
  ~SocketListener();
  SocketListener(const SocketListener&) = delete;
  SocketListener& operator=(const SocketListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<Channel> accept(Millis timeout = kNoTimeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// Retries until the worker is listening or the timeout elapses.
std::unique_ptr<Channel> connect_to(const Endpoint& endpoint, Millis timeout);

}  // namespace gtp::dist
