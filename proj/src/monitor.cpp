#include "papred/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <variant>

#include "papred/errors.hpp"

namespace papred {

namespace {

constexpr std::uint64_t kNoEstimate = std::numeric_limits<std::uint64_t>::max();
constexpr std::size_t kEstimatePayload = 12;

struct LocalReport {
  std::uint32_t iteration;
  std::uint64_t micros;
};
struct RemoteReport {
  Rank from;
  std::uint32_t iteration;
  std::uint64_t micros;
};
struct Stop {};
using Event = std::variant<LocalReport, RemoteReport, Stop>;

struct Entry {
  std::vector<std::uint64_t> micros;
  std::vector<bool> reported;
  std::size_t count = 0;
  bool warmed = false;
};

}  // namespace

struct Monitor::Shared {
  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::deque<Event> queue;

  mutable std::mutex mutex;
  std::condition_variable estimate_cv;
  ProgressState progress;
  bool edge_sent = false;
  std::optional<Seconds> own_estimate;
  std::map<std::uint32_t, Entry> entries;
  std::vector<AccuracySample> samples;
  std::vector<WarmupResult> warmup;

  std::thread worker;

  void push(Event e) {
    {
      std::lock_guard lock(queue_mutex);
      queue.push_back(std::move(e));
    }
    queue_cv.notify_one();
  }
};

AccuracyStats summarize_accuracy(std::span<const AccuracySample> samples) {
  AccuracyStats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::size_t within = 0;
  for (const auto& x : samples) {
    s.mean_relative_error += x.relative_error;
    s.max_relative_error = std::max(s.max_relative_error, x.relative_error);
    if (x.relative_error <= 0.15) ++within;
  }
  s.mean_relative_error /= static_cast<double>(samples.size());
  s.fraction_within_15pct = static_cast<double>(within) / static_cast<double>(samples.size());
  return s;
}

Monitor::Monitor(Transport& transport, MonitorOptions options)
    : transport_(transport), options_(options), shared_(std::make_shared<Shared>()) {
  std::weak_ptr<Shared> weak = shared_;
  transport_.set_estimate_sink([weak](EstimateMessage m) {
    auto shared = weak.lock();
    if (!shared || m.frame.payload.size() != kEstimatePayload) return;
    const auto iteration = get_u32(m.frame.payload.data());
    const auto micros = get_u64(m.frame.payload.data() + 4);
    shared->push(RemoteReport{m.from, iteration, micros});
  });
  shared_->worker = std::thread([this] { run(); });
}

Monitor::~Monitor() {
  transport_.set_estimate_sink(nullptr);
  shared_->push(Stop{});
  if (shared_->worker.joinable()) shared_->worker.join();
}

void Monitor::phase_start(std::optional<Clock::time_point> epoch, std::optional<std::uint32_t> iteration) {
  const auto now = Clock::now();
  std::lock_guard lock(shared_->mutex);
  auto& st = shared_->progress;
  if (st.running) throw StateError("phase_start: previous phase of iteration " + std::to_string(st.iteration) +
                                   " not ended");
  if (iteration && *iteration <= st.iteration) {
    throw StateError("phase_start: iteration " + std::to_string(*iteration) + " does not advance past " +
                     std::to_string(st.iteration));
  }
  st.iteration = iteration.value_or(st.iteration + 1);
  st.running = true;
  st.epoch = epoch.value_or(now);
  st.phase_start = now;
  st.edge_time.reset();
  st.edge_fraction = 0.0;
  st.phase_end.reset();
  shared_->edge_sent = false;
  shared_->own_estimate.reset();
}

void Monitor::edge(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidArgument("edge: fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const auto now = Clock::now();
  std::optional<LocalReport> report;
  {
    std::lock_guard lock(shared_->mutex);
    auto& st = shared_->progress;
    if (!st.running) throw StateError("edge called outside a computation phase");
    st.edge_time = now;
    st.edge_fraction = fraction;
    const auto spent = std::chrono::duration<double>(now - st.phase_start).count();
    const auto start = std::chrono::duration<double>(st.phase_start - st.epoch).count();
    const Seconds estimate = start + spent / fraction;
    shared_->own_estimate = estimate;
    if (!shared_->edge_sent) {
      shared_->edge_sent = true;
      report = LocalReport{st.iteration, to_micros(estimate)};
    }
  }
  if (report) shared_->push(*report);
}

void Monitor::phase_end() {
  const auto now = Clock::now();
  std::optional<LocalReport> absent;
  {
    std::lock_guard lock(shared_->mutex);
    auto& st = shared_->progress;
    if (!st.running) throw StateError("phase_end without a running phase");
    st.running = false;
    st.phase_end = now;
    if (shared_->own_estimate) {
      const Seconds actual = std::chrono::duration<double>(now - st.epoch).count();
      const Seconds worked = std::chrono::duration<double>(now - st.phase_start).count();
      const Seconds est = from_micros(to_micros(*shared_->own_estimate));
      const double rel = worked > 0.0 ? std::fabs(est - actual) / worked : 0.0;
      shared_->samples.push_back(AccuracySample{st.iteration, est, actual, rel});
    } else {
      absent = LocalReport{st.iteration, kNoEstimate};
    }
  }
  if (absent) shared_->push(*absent);
}

ProgressState Monitor::progress() const {
  std::lock_guard lock(shared_->mutex);
  return shared_->progress;
}

std::uint32_t Monitor::iteration() const {
  std::lock_guard lock(shared_->mutex);
  return shared_->progress.iteration;
}

namespace {

PapEstimate to_estimate(std::uint32_t iteration, const Entry& e) {
  PapEstimate est;
  est.iteration = iteration;
  est.arrivals.resize(e.micros.size());
  est.present.resize(e.micros.size());
  for (std::size_t r = 0; r < e.micros.size(); ++r) {
    est.present[r] = e.reported[r] && e.micros[r] != kNoEstimate;
    est.arrivals[r] = est.present[r] ? from_micros(e.micros[r]) : 0.0;
  }
  est.complete = e.count == e.micros.size();
  return est;
}

}  // namespace

PapEstimate Monitor::snapshot_estimate() const {
  std::lock_guard lock(shared_->mutex);
  if (shared_->entries.empty()) {
    PapEstimate est;
    est.arrivals.assign(transport_.size(), 0.0);
    est.present.assign(transport_.size(), false);
    return est;
  }
  const auto& [iteration, entry] = *shared_->entries.rbegin();
  return to_estimate(iteration, entry);
}

PapEstimate Monitor::await_estimate(std::uint32_t iteration, Millis timeout) {
  std::unique_lock lock(shared_->mutex);
  auto ready = [&] {
    auto it = shared_->entries.find(iteration);
    return it != shared_->entries.end() && it->second.count == it->second.micros.size();
  };
  shared_->estimate_cv.wait_for(lock, timeout, ready);
  auto it = shared_->entries.find(iteration);
  if (it == shared_->entries.end()) {
    PapEstimate est;
    est.iteration = iteration;
    est.arrivals.assign(transport_.size(), 0.0);
    est.present.assign(transport_.size(), false);
    return est;
  }
  return to_estimate(iteration, it->second);
}

std::vector<AccuracySample> Monitor::accuracy_samples() const {
  std::lock_guard lock(shared_->mutex);
  return shared_->samples;
}

AccuracyStats Monitor::accuracy() const {
  std::lock_guard lock(shared_->mutex);
  return summarize_accuracy(shared_->samples);
}

std::vector<WarmupResult> Monitor::last_warmup() const {
  std::lock_guard lock(shared_->mutex);
  return shared_->warmup;
}

void Monitor::run() {
  const std::size_t p = transport_.size();
  const Rank me = transport_.rank();
  Shared& sh = *shared_;
  for (;;) {
    Event ev;
    {
      std::unique_lock lock(sh.queue_mutex);
      sh.queue_cv.wait(lock, [&] { return !sh.queue.empty(); });
      ev = std::move(sh.queue.front());
      sh.queue.pop_front();
    }
    if (std::holds_alternative<Stop>(ev)) return;

    Rank from = me;
    std::uint32_t iteration = 0;
    std::uint64_t micros = 0;
    if (auto* local = std::get_if<LocalReport>(&ev)) {
      iteration = local->iteration;
      micros = local->micros;
      Frame f{MsgType::monitor_estimate, PhaseTag::control, iteration, 0, std::vector<std::uint8_t>(kEstimatePayload)};
      put_u32(f.payload.data(), iteration);
      put_u64(f.payload.data() + 4, micros);
      for (Rank r = 0; r < p; ++r) {
        if (r == me) continue;
        try {
          transport_.send(r, f);
        } catch (const Error&) {
          // Peer unreachable: it will fall back to the balanced pattern.
        }
      }
    } else {
      const auto& remote = std::get<RemoteReport>(ev);
      from = remote.from;
      iteration = remote.iteration;
      micros = remote.micros;
    }

    std::optional<PapEstimate> ready;
    {
      std::lock_guard lock(sh.mutex);
      auto& e = sh.entries[iteration];
      if (e.micros.empty()) {
        e.micros.assign(p, 0);
        e.reported.assign(p, false);
      }
      if (from < p && !e.reported[from]) {
        e.reported[from] = true;
        e.micros[from] = micros;
        ++e.count;
      }
      if (e.count == p && !e.warmed) {
        e.warmed = true;
        ready = to_estimate(iteration, e);
      }
      while (!sh.entries.empty() && sh.entries.begin()->first + options_.keep_iterations < iteration) {
        sh.entries.erase(sh.entries.begin());
      }
    }
    sh.estimate_cv.notify_all();

    if (ready && options_.warmup && ready->usable() && p > 1) {
      const auto order = sort_by_arrival(ready->arrivals);
      std::set<std::pair<Rank, Rank>> unique;
      for (std::size_t id = 0; id < p; ++id) {
        const Rank a = order.old_rank_of[id];
        const Rank b = order.old_rank_of[(id + 1) % p];
        unique.emplace(a, b);
        unique.emplace(b, a);
      }
      const std::vector<std::pair<Rank, Rank>> edges(unique.begin(), unique.end());
      auto results = transport_.warmup(edges, options_.warmup_timeout);
      std::lock_guard lock(sh.mutex);
      sh.warmup = std::move(results);
    }
  }
}

}  // namespace papred
