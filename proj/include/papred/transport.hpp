#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "papred/core.hpp"
#include "papred/frame.hpp"

namespace papred {

using Millis = std::chrono::milliseconds;

struct TransportOptions {
  Millis send_timeout{10'000};  // also bounds connection establishment
  Millis recv_timeout{30'000};
};

/// Completion handle for a non-blocking send. Completes once the frame has
/// left the sender (handed to the peer in-process, written to the socket for TCP).
class SendTicket {
 public:
  SendTicket() = default;

  bool valid() const { return state_ != nullptr; }
  bool done() const;
  /// Throws TransportError if the send failed or did not finish in time.
  void wait(Millis timeout) const;

  static SendTicket completed();
  static SendTicket pending();
  void complete() const;
  void fail(std::string reason) const;

 private:
  struct State {
    mutable std::mutex mutex;
    mutable std::condition_variable cv;
    bool done = false;
    std::string error;
  };
  std::shared_ptr<State> state_;
};

/// What a blocking receive is waiting for. FIFO applies within a match class.
struct Expect {
  MsgType type = MsgType::data;
  PhaseTag phase = PhaseTag::reduce;
  std::uint32_t iteration = 0;
  std::optional<std::uint32_t> segment;

  bool matches(const Frame& frame) const;
};

struct EstimateMessage {
  Rank from = 0;
  Frame frame;
};

struct WarmupResult {
  Rank from = 0;
  Rank to = 0;
  bool ok = false;
  double rtt_seconds = 0.0;
  std::string error;
};

/// Point-to-point messaging between the P ranks of one communicator.
/// Safe for concurrent use by a compute thread and a monitor thread.
class Transport {
 public:
  Transport(Rank rank, std::size_t size, TransportOptions options);
  virtual ~Transport();
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  Rank rank() const { return rank_; }
  std::size_t size() const { return size_; }
  const TransportOptions& options() const { return options_; }

  SendTicket send(Rank to, Frame frame);
  /// Next frame from `from` matching `expect`. Timeout defaults to options().recv_timeout.
  Frame recv(Rank from, const Expect& expect, std::optional<Millis> timeout = std::nullopt);

  /// Dissemination barrier; epochs advance per call and must stay in step across ranks.
  void barrier(std::optional<Millis> timeout = std::nullopt);
  std::size_t barrier_rounds() const;

  /// Sends one warm-up frame along each edge whose source is this rank and
  /// waits for its ack. Failures are reported, not thrown.
  std::vector<WarmupResult> warmup(std::span<const std::pair<Rank, Rank>> edges,
                                   std::optional<Millis> timeout = std::nullopt);

  /// Monitor-estimate frames bypass the data mailbox. With a sink installed they
  /// are handed to it (on the delivering thread); otherwise they queue here.
  void set_estimate_sink(std::function<void(EstimateMessage)> sink);
  std::optional<EstimateMessage> poll_estimate(Millis timeout);

 protected:
  virtual void transmit(Rank to, Frame frame, const SendTicket& ticket) = 0;
  /// Called by implementations for every inbound frame.
  void deliver(Rank from, Frame frame);
  /// Marks a peer unusable; blocked and future receives from it fail.
  void fail_peer(Rank peer, const std::string& reason);

 private:
  void check_peer(Rank peer, const char* what) const;

  Rank rank_;
  std::size_t size_;
  TransportOptions options_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::deque<Frame>> inbox_;
  std::vector<std::string> peer_error_;

  std::mutex estimate_mutex_;
  std::condition_variable estimate_cv_;
  std::deque<EstimateMessage> estimates_;
  std::function<void(EstimateMessage)> estimate_sink_;

  std::mutex barrier_mutex_;
  std::uint32_t barrier_epoch_ = 0;
  std::mutex warmup_mutex_;
  std::uint32_t warmup_seq_ = 0;
};

/// Process-local transports for P ranks with synchronous, deterministic delivery.
class InProcTransport final : public Transport {
 public:
  static std::vector<std::shared_ptr<InProcTransport>> create_group(std::size_t size,
                                                                   TransportOptions options = {});

 protected:
  void transmit(Rank to, Frame frame, const SendTicket& ticket) override;

 private:
  struct Hub;
  InProcTransport(Rank rank, std::size_t size, TransportOptions options, std::shared_ptr<Hub> hub);
  std::shared_ptr<Hub> hub_;
};

struct Endpoint {
  Rank rank = 0;
  std::string host;
  std::uint16_t port = 0;
};

/// Parses `rank:host:port` lines; blank lines and `#` comments are skipped.
/// Ranks must be exactly 0..P-1.
std::vector<Endpoint> parse_roster(std::string_view text);
std::vector<Endpoint> load_roster(const std::string& path);
std::string format_roster(std::span<const Endpoint> roster);

/// Ports currently free on the loopback interface (bound then released).
std::vector<std::uint16_t> reserve_local_ports(std::size_t count);

/// One persistent TCP connection per rank pair; the lower rank connects.
class TcpTransport final : public Transport {
 public:
  TcpTransport(Rank rank, std::vector<Endpoint> roster, TransportOptions options = {});
  ~TcpTransport() override;

  /// Blocks until connections to all peers are up. Throws TransportError on timeout.
  void wait_connected(std::optional<Millis> timeout = std::nullopt);

 protected:
  void transmit(Rank to, Frame frame, const SendTicket& ticket) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace papred
