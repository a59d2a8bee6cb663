#include "papred/transport.hpp"

#include <bit>

#include "papred/errors.hpp"

namespace papred {

namespace {
constexpr std::uint32_t kWarmupRequest = 0;
constexpr std::uint32_t kWarmupAck = 1;
}  // namespace

bool SendTicket::done() const {
  if (!state_) return true;
  std::lock_guard lock(state_->mutex);
  return state_->done;
}

void SendTicket::wait(Millis timeout) const {
  if (!state_) return;
  std::unique_lock lock(state_->mutex);
  if (!state_->cv.wait_for(lock, timeout, [&] { return state_->done; })) {
    throw TransportError("send did not complete within " + std::to_string(timeout.count()) + " ms");
  }
  if (!state_->error.empty()) throw TransportError(state_->error);
}

SendTicket SendTicket::completed() {
  SendTicket t = pending();
  t.complete();
  return t;
}

SendTicket SendTicket::pending() {
  SendTicket t;
  t.state_ = std::make_shared<State>();
  return t;
}

void SendTicket::complete() const {
  if (!state_) return;
  {
    std::lock_guard lock(state_->mutex);
    state_->done = true;
  }
  state_->cv.notify_all();
}

void SendTicket::fail(std::string reason) const {
  if (!state_) return;
  {
    std::lock_guard lock(state_->mutex);
    if (state_->done) return;
    state_->error = std::move(reason);
    state_->done = true;
  }
  state_->cv.notify_all();
}

bool Expect::matches(const Frame& frame) const {
  return frame.type == type && frame.phase == phase && frame.iteration == iteration &&
         (!segment || frame.segment == *segment);
}

Transport::Transport(Rank rank, std::size_t size, TransportOptions options)
    : rank_(rank), size_(size), options_(options), inbox_(size), peer_error_(size) {
  if (size == 0) throw InvalidArgument("transport needs at least one rank");
  if (rank >= size) throw InvalidArgument("rank " + std::to_string(rank) + " out of range");
}

Transport::~Transport() = default;

void Transport::check_peer(Rank peer, const char* what) const {
  if (peer >= size_) throw InvalidArgument(std::string(what) + ": peer " + std::to_string(peer) + " out of range");
  if (peer == rank_) throw InvalidArgument(std::string(what) + ": peer must differ from self");
}

SendTicket Transport::send(Rank to, Frame frame) {
  check_peer(to, "send");
  {
    std::lock_guard lock(mutex_);
    if (!peer_error_[to].empty()) throw TransportError("send to rank " + std::to_string(to) + ": " + peer_error_[to]);
  }
  SendTicket ticket = SendTicket::pending();
  transmit(to, std::move(frame), ticket);
  return ticket;
}

Frame Transport::recv(Rank from, const Expect& expect, std::optional<Millis> timeout) {
  check_peer(from, "recv");
  const auto deadline = std::chrono::steady_clock::now() + timeout.value_or(options_.recv_timeout);
  std::unique_lock lock(mutex_);
  auto& queue = inbox_[from];
  for (;;) {
    for (auto it = queue.begin(); it != queue.end(); ++it) {
      if (expect.matches(*it)) {
        Frame f = std::move(*it);
        queue.erase(it);
        return f;
      }
    }
    if (!peer_error_[from].empty()) {
      throw TransportError("recv from rank " + std::to_string(from) + ": " + peer_error_[from]);
    }
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout) {
      // One last scan happens on the next loop only if something arrived; report now.
      bool found = false;
      for (const auto& f : queue) found = found || expect.matches(f);
      if (!found) {
        throw TransportError("rank " + std::to_string(rank_) + " timed out waiting for rank " +
                             std::to_string(from) + " (type " + std::to_string(int(expect.type)) +
                             ", phase " + std::to_string(int(expect.phase)) + ", iteration " +
                             std::to_string(expect.iteration) + ")");
      }
    }
  }
}

void Transport::deliver(Rank from, Frame frame) {
  if (from >= size_) return;
  if (frame.type == MsgType::monitor_estimate) {
    std::function<void(EstimateMessage)> sink;
    {
      std::lock_guard lock(estimate_mutex_);
      sink = estimate_sink_;
      if (!sink) {
        estimates_.push_back(EstimateMessage{from, std::move(frame)});
        estimate_cv_.notify_all();
        return;
      }
    }
    sink(EstimateMessage{from, std::move(frame)});
    return;
  }
  if (frame.type == MsgType::warmup && frame.segment == kWarmupRequest) {
    Frame ack{MsgType::warmup, PhaseTag::control, frame.iteration, kWarmupAck, {}};
    transmit(from, std::move(ack), SendTicket::pending());
    return;
  }
  {
    std::lock_guard lock(mutex_);
    inbox_[from].push_back(std::move(frame));
  }
  cv_.notify_all();
}

void Transport::fail_peer(Rank peer, const std::string& reason) {
  if (peer >= size_) return;
  {
    std::lock_guard lock(mutex_);
    if (peer_error_[peer].empty()) peer_error_[peer] = reason;
  }
  cv_.notify_all();
}

std::size_t Transport::barrier_rounds() const {
  return size_ <= 1 ? 0 : static_cast<std::size_t>(std::bit_width(size_ - 1));
}

void Transport::barrier(std::optional<Millis> timeout) {
  std::lock_guard guard(barrier_mutex_);
  const std::uint32_t epoch = barrier_epoch_++;
  const std::size_t rounds = barrier_rounds();
  for (std::size_t r = 0; r < rounds; ++r) {
    const std::size_t dist = std::size_t{1} << r;
    const Rank to = static_cast<Rank>((rank_ + dist) % size_);
    const Rank from = static_cast<Rank>((rank_ + size_ - dist % size_) % size_);
    send(to, Frame{MsgType::barrier, PhaseTag::control, epoch, static_cast<std::uint32_t>(r), {}});
    try {
      recv(from, Expect{MsgType::barrier, PhaseTag::control, epoch, static_cast<std::uint32_t>(r)}, timeout);
    } catch (const TransportError& e) {
      throw TransportError("barrier epoch " + std::to_string(epoch) + " round " + std::to_string(r) +
                           ": missing rank " + std::to_string(from) + ": " + e.what());
    }
  }
}

std::vector<WarmupResult> Transport::warmup(std::span<const std::pair<Rank, Rank>> edges,
                                            std::optional<Millis> timeout) {
  struct Pending {
    WarmupResult result;
    std::uint32_t seq;
    std::chrono::steady_clock::time_point sent;
  };
  std::vector<Pending> pending;
  {
    std::lock_guard guard(warmup_mutex_);
    for (const auto& [from, to] : edges) {
      if (from != rank_ || to == rank_ || to >= size_) continue;
      pending.push_back(Pending{WarmupResult{from, to, false, 0.0, {}}, warmup_seq_++, {}});
    }
  }
  for (auto& p : pending) {
    p.sent = std::chrono::steady_clock::now();
    try {
      send(p.result.to, Frame{MsgType::warmup, PhaseTag::control, p.seq, kWarmupRequest, {}});
    } catch (const Error& e) {
      p.result.error = e.what();
    }
  }
  std::vector<WarmupResult> out;
  for (auto& p : pending) {
    if (p.result.error.empty()) {
      try {
        recv(p.result.to, Expect{MsgType::warmup, PhaseTag::control, p.seq, kWarmupAck},
             timeout.value_or(options_.send_timeout));
        p.result.ok = true;
        p.result.rtt_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - p.sent).count();
      } catch (const Error& e) {
        p.result.error = e.what();
      }
    }
    out.push_back(p.result);
  }
  return out;
}

void Transport::set_estimate_sink(std::function<void(EstimateMessage)> sink) {
  std::deque<EstimateMessage> backlog;
  {
    std::lock_guard lock(estimate_mutex_);
    estimate_sink_ = sink;
    if (sink) backlog.swap(estimates_);
  }
  for (auto& m : backlog) sink(std::move(m));
}

std::optional<EstimateMessage> Transport::poll_estimate(Millis timeout) {
  std::unique_lock lock(estimate_mutex_);
  if (!estimate_cv_.wait_for(lock, timeout, [&] { return !estimates_.empty(); })) return std::nullopt;
  EstimateMessage m = std::move(estimates_.front());
  estimates_.pop_front();
  return m;
}

}  // namespace papred
