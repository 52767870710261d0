#include "gtp/dist_transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

namespace gtp::dist {
namespace {

std::uint32_t frame_length(std::span<const char> prefix) {
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(prefix[i])) << (8 * i);
  return n;
}

// ---- in-process ----

struct Queue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<char>> frames;
  bool closed = false;
};

class InProcessChannel final : public Channel {
 public:
  InProcessChannel(std::shared_ptr<Queue> inbox, std::shared_ptr<Queue> outbox)
      : inbox_(std::move(inbox)), outbox_(std::move(outbox)) {}
  ~InProcessChannel() override { close(); }

  void send_frame(std::span<const char> frame) override {
    if (frame.size() < 4 || frame_length(frame) != frame.size() - 4) {
      throw TransportError("malformed frame length prefix");
    }
    std::lock_guard lock(outbox_->mu);
    if (outbox_->closed) throw TransportError("peer closed the connection");
    outbox_->frames.emplace_back(frame.begin() + 4, frame.end());
    outbox_->cv.notify_one();
  }

  std::vector<char> receive_frame(Millis timeout) override {
    std::unique_lock lock(inbox_->mu);
    auto ready = [&] { return !inbox_->frames.empty() || inbox_->closed; };
    if (timeout == kNoTimeout) {
      inbox_->cv.wait(lock, ready);
    } else if (!inbox_->cv.wait_for(lock, timeout, ready)) {
      throw TransportError("timed out after " + std::to_string(timeout.count()) + " ms");
    }
    if (inbox_->frames.empty()) throw TransportError("peer closed the connection");
    auto frame = std::move(inbox_->frames.front());
    inbox_->frames.pop_front();
    return frame;
  }

  void close() override {
    for (auto* q : {inbox_.get(), outbox_.get()}) {
      std::lock_guard lock(q->mu);
      q->closed = true;
      q->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Queue> inbox_;
  std::shared_ptr<Queue> outbox_;
};

// ---- sockets ----

[[noreturn]] void throw_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

class SocketChannel final : public Channel {
 public:
  explicit SocketChannel(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~SocketChannel() override { close(); }

  void send_frame(std::span<const char> frame) override {
    if (fd_ < 0) throw TransportError("send on closed socket");
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const auto n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw_errno("send failed");
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::vector<char> receive_frame(Millis timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    char prefix[4];
    read_exact(prefix, 4, timeout, deadline);
    const auto len = frame_length(prefix);
    if (len > kMaxFrameBytes) throw TransportError("incoming frame exceeds the size limit");
    std::vector<char> body(len);
    read_exact(body.data(), len, timeout, deadline);
    return body;
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  void read_exact(char* dst, std::size_t n, Millis timeout, std::chrono::steady_clock::time_point deadline) {
    if (fd_ < 0) throw TransportError("receive on closed socket");
    std::size_t got = 0;
    while (got < n) {
      int wait_ms = -1;
      if (timeout != kNoTimeout) {
        const auto left = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw TransportError("timed out after " + std::to_string(timeout.count()) + " ms");
        wait_ms = static_cast<int>(left.count());
      }
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, wait_ms);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw_errno("poll failed");
      }
      if (rc == 0) throw TransportError("timed out after " + std::to_string(timeout.count()) + " ms");
      const auto r = ::recv(fd_, dst + got, n - got, 0);
      if (r == 0) throw TransportError("peer closed the connection");
      if (r < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw_errno("recv failed");
      }
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
};

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto port = std::to_string(ep.port);
  const char* host = ep.host.empty() ? nullptr : ep.host.c_str();
  if (int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + to_string(ep) + ": " + ::gai_strerror(rc));
  }
  return res;
}

}  // namespace

void send_message(Channel& channel, const Message& msg) { channel.send_frame(encode(msg)); }

Message receive_message(Channel& channel, Millis timeout) { return decode(channel.receive_frame(timeout)); }

std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_in_process_pair() {
  auto a_to_b = std::make_shared<Queue>();
  auto b_to_a = std::make_shared<Queue>();
  return {std::make_unique<InProcessChannel>(b_to_a, a_to_b), std::make_unique<InProcessChannel>(a_to_b, b_to_a)};
}

Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ValidationError("endpoint '" + text + "' is not host:port");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  const auto port_text = text.substr(colon + 1);
  try {
    std::size_t used = 0;
    const long port = std::stol(port_text, &used);
    if (used != port_text.size() || port < 0 || port > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ValidationError("endpoint '" + text + "' has an invalid port");
  }
  return ep;
}

std::string to_string(const Endpoint& ep) { return ep.host + ":" + std::to_string(ep.port); }

SocketListener::SocketListener(const Endpoint& endpoint) {
  addrinfo* res = resolve(endpoint, true);
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd_ < 0) {
    ::freeaddrinfo(res);
    throw_errno("socket failed");
  }
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd_, 4) != 0) {
    const int err = errno;
    ::freeaddrinfo(res);
    ::close(fd_);
    fd_ = -1;
    errno = err;
    throw_errno("cannot listen on " + to_string(endpoint));
  }
  ::freeaddrinfo(res);
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

SocketListener::~SocketListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Channel> SocketListener::accept(Millis timeout) {
  pollfd p{fd_, POLLIN, 0};
  const int rc = ::poll(&p, 1, timeout == kNoTimeout ? -1 : static_cast<int>(timeout.count()));
  if (rc == 0) throw TransportError("no coordinator connected within " + std::to_string(timeout.count()) + " ms");
  if (rc < 0) throw_errno("poll failed");
  const int fd = ::accept(fd_, nullptr, nullptr);
  if (fd < 0) throw_errno("accept failed");
  return std::make_unique<SocketChannel>(fd);
}

std::unique_ptr<Channel> connect_to(const Endpoint& endpoint, Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    addrinfo* res = resolve(endpoint, false);
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
      ::freeaddrinfo(res);
      throw_errno("socket failed");
    }
    const int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
    const int err = errno;
    ::freeaddrinfo(res);
    if (rc == 0) return std::make_unique<SocketChannel>(fd);
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      errno = err;
      throw_errno("cannot connect to " + to_string(endpoint));
    }
    std::this_thread::sleep_for(Millis(20));
  }
}

}  // namespace gtp::dist
