#include "papred/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <deque>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "papred/errors.hpp"

namespace papred {

namespace {

class Provenance {
 public:
  explicit Provenance(std::size_t ranks) : words_((ranks + 63) / 64, 0) {}
  static Provenance single(std::size_t ranks, std::size_t who) {
    Provenance p(ranks);
    p.words_[who / 64] |= std::uint64_t{1} << (who % 64);
    return p;
  }
  bool overlaps(const Provenance& o) const {
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (words_[i] & o.words_[i]) return true;
    }
    return false;
  }
  void merge(const Provenance& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }

 private:
  std::vector<std::uint64_t> words_;
};

struct Message {
  double landed;
  Provenance data;
};

struct ChannelKey {
  std::uint32_t src, dst, segment;
  Phase phase;
  auto operator<=>(const ChannelKey&) const = default;
};

}  // namespace

Timeline simulate(const Schedule& schedule, std::span<const double> arrivals) {
  const std::size_t p = schedule.ranks();
  if (arrivals.size() != p) throw InvalidArgument("simulate: arrival vector has wrong length");
  for (double a : arrivals) {
    if (!std::isfinite(a)) throw InvalidArgument("simulate: arrivals must be finite");
  }

  // Everything below runs in new-id space.
  const auto& asg = schedule.assignment;
  std::vector<double> t(p), finish(p);
  for (std::size_t id = 0; id < p; ++id) t[id] = arrivals[asg.old_rank_of[id]];
  finish = t;

  std::vector<std::vector<Provenance>> data;
  data.reserve(p);
  for (std::size_t id = 0; id < p; ++id) {
    data.emplace_back(p, Provenance::single(p, id));
  }
  std::vector<double> link_free(p * p, -std::numeric_limits<double>::infinity());
  std::map<ChannelKey, std::deque<Message>> channels;
  std::vector<std::size_t> pc(p, 0);
  std::vector<std::vector<TimelineEvent>> events(p);

  Timeline tl;
  auto note_provenance = [&](std::string msg) {
    if (tl.provenance_ok) {
      tl.provenance_ok = false;
      tl.provenance_error = std::move(msg);
    }
  };

  bool progress = true;
  while (progress) {
    progress = false;
    for (std::uint32_t id = 0; id < p; ++id) {
      const auto& prog = schedule.steps[id];
      while (pc[id] < prog.size()) {
        const Step& step = prog[pc[id]];
        if (step.is_send()) {
          double& link = link_free[id * p + step.peer];
          const double start = std::max(t[id], link);
          const double done = start + 1.0;
          link = done;
          t[id] = start;
          finish[id] = std::max(finish[id], done);
          channels[ChannelKey{id, step.peer, step.segment, step.phase}].push_back(
              Message{done, data[id][step.segment]});
          events[id].push_back(TimelineEvent{start, done, step});
        } else {
          auto it = channels.find(ChannelKey{step.peer, id, step.segment, step.phase});
          if (it == channels.end() || it->second.empty()) break;
          Message m = std::move(it->second.front());
          it->second.pop_front();
          const double start = t[id];
          const double done = std::max(m.landed, t[id] + 1.0);
          t[id] = done;
          finish[id] = std::max(finish[id], done);
          auto& held = data[id][step.segment];
          if (step.kind == StepKind::recv_reduce) {
            if (held.overlaps(m.data)) {
              note_provenance("rank id " + std::to_string(id) + " reduced a duplicate contribution into segment " +
                              std::to_string(step.segment));
            }
            held.merge(m.data);
          } else {
            held = std::move(m.data);
          }
          events[id].push_back(TimelineEvent{start, done, step});
        }
        ++pc[id];
        progress = true;
      }
    }
  }

  std::ostringstream blocked;
  bool stuck = false;
  for (std::size_t id = 0; id < p; ++id) {
    if (pc[id] < schedule.steps[id].size()) {
      const Step& s = schedule.steps[id][pc[id]];
      stuck = true;
      blocked << "  id " << id << " (rank " << asg.old_rank_of[id] << ") step " << pc[id] << ": "
              << to_string(s.kind) << " seg " << s.segment << " from " << s.peer << " phase "
              << to_string(s.phase) << " at t=" << t[id] << '\n';
    }
  }
  if (stuck) throw DeadlockError("simulation deadlocked; blocked steps:\n" + blocked.str());

  for (std::size_t id = 0; id < p; ++id) {
    for (std::size_t seg = 0; seg < p; ++seg) {
      if (data[id][seg].count() != p) {
        note_provenance("rank id " + std::to_string(id) + " ends with " + std::to_string(data[id][seg].count()) +
                        " of " + std::to_string(p) + " contributions in segment " + std::to_string(seg));
      }
    }
  }

  tl.events.resize(p);
  tl.arrivals.assign(arrivals.begin(), arrivals.end());
  tl.finishes.resize(p);
  for (std::size_t id = 0; id < p; ++id) {
    const Rank r = asg.old_rank_of[id];
    tl.finishes[r] = finish[id];
    tl.events[r] = std::move(events[id]);
    for (auto& e : tl.events[r]) e.step.peer = asg.old_rank_of[e.step.peer];
  }
  const double first = *std::min_element(arrivals.begin(), arrivals.end());
  tl.total = *std::max_element(tl.finishes.begin(), tl.finishes.end()) - first;
  double sum = 0.0;
  for (std::size_t r = 0; r < p; ++r) sum += tl.finishes[r] - tl.arrivals[r];
  tl.mean_elapsed = sum / static_cast<double>(p);
  return tl;
}

std::string_view to_string(DelayMode mode) {
  return mode == DelayMode::one_late ? "one-late" : "rand-late";
}

DelayMode parse_delay_mode(std::string_view name) {
  if (name == "one-late") return DelayMode::one_late;
  if (name == "rand-late") return DelayMode::rand_late;
  throw InvalidArgument("unknown mode: " + std::string(name) + " (expected one-late or rand-late)");
}

std::vector<double> make_pap(DelayMode mode, std::size_t ranks, double delay, std::uint64_t seed) {
  if (delay < 0.0) throw InvalidArgument("delay must be non-negative");
  std::vector<double> a(ranks, 0.0);
  if (mode == DelayMode::one_late) {
    if (ranks > 1) a[1] = delay;
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, delay);
    for (auto& x : a) x = delay > 0.0 ? dist(rng) : 0.0;
  }
  return a;
}

std::vector<SweepRow> sweep(const SweepConfig& config) {
  struct Cell {
    std::size_t ranks;
    double delay;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto p : config.ranks) {
    if (p < 2) throw InvalidArgument("sweep: P must be at least 2");
    for (double d : config.delays) {
      for (auto s : config.seeds) cells.push_back(Cell{p, d, s});
    }
  }

  auto run_cell = [&](const Cell& c) {
    std::vector<SweepRow> rows;
    const auto pap = make_pap(config.mode, c.ranks, c.delay, c.seed);
    const double ring_mean = simulate(ring_schedule(c.ranks), pap).mean_elapsed;
    for (Algorithm alg : config.algorithms) {
      if (alg == Algorithm::rabenseifner && !std::has_single_bit(c.ranks)) continue;
      const auto sched = build_schedule(alg, c.ranks, std::span<const double>(pap), 1.0);
      const auto tl = simulate(sched, pap);
      rows.push_back(SweepRow{alg, c.ranks, config.mode, c.delay, c.seed, tl.total, tl.mean_elapsed,
                              ring_mean / tl.mean_elapsed});
    }
    return rows;
  };

  unsigned threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, cells.size())));
  std::vector<std::vector<SweepRow>> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (unsigned w = 0; w < threads; ++w) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) results[i] = run_cell(cells[i]);
    }));
  }
  for (auto& f : workers) f.get();

  std::vector<SweepRow> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows, bool header) {
  if (header) out << "algorithm,P,mode,delay_tau,seed,total_tau,mean_elapsed_tau,speedup_vs_ring\n";
  for (const auto& r : rows) {
    out << std::setprecision(10) << to_string(r.algorithm) << ',' << r.ranks << ',' << to_string(r.mode)
        << ',' << r.delay << ','
        << r.seed << ',' << r.total << ',' << r.mean_elapsed << ','
        << std::setprecision(6) << r.speedup_vs_ring << '\n';
  }
}

}  // namespace papred
