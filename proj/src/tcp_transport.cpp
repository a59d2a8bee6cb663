#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "papred/errors.hpp"
#include "papred/transport.hpp"

namespace papred {

std::vector<Endpoint> parse_roster(std::string_view text) {
  std::vector<Endpoint> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    const auto c1 = line.find(':');
    const auto c2 = line.rfind(':');
    if (c1 == std::string::npos || c1 == c2) {
      throw InvalidArgument("roster line " + std::to_string(lineno) + ": expected rank:host:port");
    }
    Endpoint ep;
    try {
      std::size_t used = 0;
      const unsigned long rank = std::stoul(line.substr(0, c1), &used);
      if (used != c1) throw std::invalid_argument("rank");
      const unsigned long port = std::stoul(line.substr(c2 + 1), &used);
      if (used != line.size() - c2 - 1 || port > 65535) throw std::invalid_argument("port");
      ep.rank = static_cast<Rank>(rank);
      ep.port = static_cast<std::uint16_t>(port);
    } catch (const std::logic_error&) {
      throw InvalidArgument("roster line " + std::to_string(lineno) + ": bad rank or port");
    }
    ep.host = line.substr(c1 + 1, c2 - c1 - 1);
    if (ep.host.empty()) throw InvalidArgument("roster line " + std::to_string(lineno) + ": empty host");
    out.push_back(ep);
  }
  std::sort(out.begin(), out.end(), [](const Endpoint& a, const Endpoint& b) { return a.rank < b.rank; });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].rank != i) throw InvalidArgument("roster ranks must be exactly 0..P-1");
  }
  if (out.empty()) throw InvalidArgument("roster is empty");
  return out;
}

std::vector<Endpoint> load_roster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read roster " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_roster(buf.str());
}

std::string format_roster(std::span<const Endpoint> roster) {
  std::ostringstream out;
  for (const auto& ep : roster) out << ep.rank << ':' << ep.host << ':' << ep.port << '\n';
  return out.str();
}

namespace {

std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

bool write_all(int fd, const std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

bool read_full(int fd, std::uint8_t* data, std::size_t len) {
  while (len > 0) {
    const ssize_t n = ::recv(fd, data, len, 0);
    if (n == 0) return false;
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data += n;
    len -= static_cast<std::size_t>(n);
  }
  return true;
}

void tune_socket(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

int connect_once(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0) return -1;
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  return fd;
}

}  // namespace

std::vector<std::uint16_t> reserve_local_ports(std::size_t count) {
  std::vector<int> fds;
  std::vector<std::uint16_t> ports;
  for (std::size_t i = 0; i < count; ++i) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) break;
    fds.push_back(fd);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    socklen_t len = sizeof addr;
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      break;
    }
    ports.push_back(ntohs(addr.sin_port));
  }
  for (int fd : fds) ::close(fd);
  if (ports.size() != count) throw TransportError(errno_text("reserve_local_ports"));
  return ports;
}

struct TcpTransport::Impl {
  struct Outgoing {
    std::vector<std::uint8_t> bytes;
    SendTicket ticket;
    std::chrono::steady_clock::time_point queued;
  };

  struct Peer {
    std::mutex mutex;
    std::condition_variable cv;
    int fd = -1;
    bool failed = false;
    std::deque<Outgoing> outq;
    std::thread reader;
    std::thread writer;
    std::thread connector;
  };

  TcpTransport* owner;
  std::vector<Endpoint> roster;
  std::vector<std::unique_ptr<Peer>> peers;
  int listen_fd = -1;
  std::thread acceptor;
  std::atomic<bool> stopping{false};
  std::mutex connected_mutex;
  std::condition_variable connected_cv;

  Impl(TcpTransport* o, std::vector<Endpoint> r) : owner(o), roster(std::move(r)) {
    for (std::size_t i = 0; i < roster.size(); ++i) peers.push_back(std::make_unique<Peer>());
  }

  Rank self() const { return owner->rank(); }

  void start() {
    listen_fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd < 0) throw TransportError(errno_text("socket"));
    int one = 1;
    ::setsockopt(listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(roster[self()].port);
    if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(listen_fd, static_cast<int>(roster.size()) + 4) != 0) {
      const std::string err = errno_text("bind/listen");
      ::close(listen_fd);
      throw TransportError("rank " + std::to_string(self()) + " port " +
                           std::to_string(roster[self()].port) + ": " + err);
    }
    acceptor = std::thread([this] { accept_loop(); });
    for (Rank r = 0; r < roster.size(); ++r) {
      if (r == self()) continue;
      Peer& p = *peers[r];
      p.writer = std::thread([this, r] { write_loop(r); });
      if (r > self()) p.connector = std::thread([this, r] { connect_loop(r); });
    }
  }

  void attach(Rank r, int fd) {
    Peer& p = *peers[r];
    {
      std::lock_guard lock(p.mutex);
      if (p.fd >= 0 || stopping) {
        ::close(fd);
        return;
      }
      p.fd = fd;
      p.reader = std::thread([this, r, fd] { read_loop(r, fd); });
    }
    p.cv.notify_all();
    { std::lock_guard lock(connected_mutex); }
    connected_cv.notify_all();
  }

  void connect_loop(Rank r) {
    while (!stopping) {
      const int fd = connect_once(roster[r]);
      if (fd >= 0) {
        tune_socket(fd);
        std::uint8_t hello[4];
        put_u32(hello, self());
        if (write_all(fd, hello, 4)) {
          attach(r, fd);
          return;
        }
        ::close(fd);
      }
      std::this_thread::sleep_for(Millis(20));
    }
  }

  void accept_loop() {
    while (!stopping) {
      pollfd pfd{listen_fd, POLLIN, 0};
      if (::poll(&pfd, 1, 100) <= 0) continue;
      const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      pollfd cfd{fd, POLLIN, 0};
      std::uint8_t hello[4];
      if (::poll(&cfd, 1, static_cast<int>(owner->options().send_timeout.count())) <= 0 ||
          !read_full(fd, hello, 4)) {
        ::close(fd);
        continue;
      }
      const Rank r = get_u32(hello);
      if (r >= roster.size() || r >= self()) {
        ::close(fd);
        continue;
      }
      tune_socket(fd);
      attach(r, fd);
    }
  }

  void read_loop(Rank r, int fd) {
    std::array<std::uint8_t, kFrameHeaderSize> header{};
    for (;;) {
      if (!read_full(fd, header.data(), header.size())) break;
      Frame f;
      try {
        const auto h = decode_header(header);
        f.type = h.type;
        f.phase = h.phase;
        f.iteration = h.iteration;
        f.segment = h.segment;
        f.payload.resize(h.payload_length);
      } catch (const ProtocolError& e) {
        owner->fail_peer(r, std::string("protocol error: ") + e.what());
        ::shutdown(fd, SHUT_RDWR);
        return;
      }
      if (!f.payload.empty() && !read_full(fd, f.payload.data(), f.payload.size())) break;
      owner->deliver(r, std::move(f));
    }
    owner->fail_peer(r, "connection closed by peer");
  }

  void fail_queue(Peer& p, Rank r, const std::string& reason) {
    std::deque<Outgoing> dropped;
    {
      std::lock_guard lock(p.mutex);
      p.failed = true;
      dropped.swap(p.outq);
    }
    for (auto& o : dropped) o.ticket.fail(reason);
    owner->fail_peer(r, reason);
  }

  void write_loop(Rank r) {
    Peer& p = *peers[r];
    const auto timeout = owner->options().send_timeout;
    for (;;) {
      Outgoing item;
      int fd;
      {
        std::unique_lock lock(p.mutex);
        p.cv.wait_for(lock, Millis(50), [&] {
          return (p.fd >= 0 && !p.outq.empty()) || (stopping && (p.outq.empty() || p.fd < 0));
        });
        if (p.failed) return;
        if (p.outq.empty()) {
          if (stopping) return;
          continue;
        }
        if (p.fd < 0) {
          const auto age = std::chrono::steady_clock::now() - p.outq.front().queued;
          if (age < timeout && !stopping) continue;
          lock.unlock();
          fail_queue(p, r,
                     "could not connect to rank " + std::to_string(r) + " at " + roster[r].host + ":" +
                         std::to_string(roster[r].port) + " within " + std::to_string(timeout.count()) +
                         " ms");
          return;
        }
        item = std::move(p.outq.front());
        p.outq.pop_front();
        fd = p.fd;
      }
      if (!write_all(fd, item.bytes.data(), item.bytes.size())) {
        const std::string reason = errno_text("write to rank " + std::to_string(r));
        item.ticket.fail(reason);
        fail_queue(p, r, reason);
        return;
      }
      item.ticket.complete();
    }
  }

  void enqueue(Rank r, Frame frame, const SendTicket& ticket) {
    Peer& p = *peers.at(r);
    {
      std::lock_guard lock(p.mutex);
      if (p.failed) {
        ticket.fail("rank " + std::to_string(r) + " unreachable");
        return;
      }
      p.outq.push_back(Outgoing{encode_frame(frame), ticket, std::chrono::steady_clock::now()});
    }
    p.cv.notify_all();
  }

  bool all_connected() {
    for (Rank r = 0; r < peers.size(); ++r) {
      if (r == self()) continue;
      std::lock_guard lock(peers[r]->mutex);
      if (peers[r]->fd < 0) return false;
    }
    return true;
  }

  void stop() {
    stopping = true;
    for (auto& p : peers) p->cv.notify_all();
    for (auto& p : peers) {
      if (p->connector.joinable()) p->connector.join();
      if (p->writer.joinable()) p->writer.join();
    }
    if (acceptor.joinable()) acceptor.join();
    if (listen_fd >= 0) ::close(listen_fd);
    for (auto& p : peers) {
      int fd;
      {
        std::lock_guard lock(p->mutex);
        fd = p->fd;
      }
      if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
      if (p->reader.joinable()) p->reader.join();
      if (fd >= 0) ::close(fd);
    }
  }
};

TcpTransport::TcpTransport(Rank rank, std::vector<Endpoint> roster, TransportOptions options)
    : Transport(rank, roster.size(), options) {
  impl_ = std::make_unique<Impl>(this, std::move(roster));
  impl_->start();
}

TcpTransport::~TcpTransport() { impl_->stop(); }

void TcpTransport::wait_connected(std::optional<Millis> timeout) {
  const auto limit = timeout.value_or(options().send_timeout);
  std::unique_lock lock(impl_->connected_mutex);
  if (!impl_->connected_cv.wait_for(lock, limit, [&] { return impl_->all_connected(); })) {
    std::string missing;
    for (Rank r = 0; r < size(); ++r) {
      if (r == rank()) continue;
      std::lock_guard plock(impl_->peers[r]->mutex);
      if (impl_->peers[r]->fd < 0) missing += " " + std::to_string(r);
    }
    throw TransportError("rank " + std::to_string(rank()) + ": no connection to rank(s)" + missing +
                         " after " + std::to_string(limit.count()) + " ms");
  }
}

void TcpTransport::transmit(Rank to, Frame frame, const SendTicket& ticket) {
  impl_->enqueue(to, std::move(frame), ticket);
}

}  // namespace papred
