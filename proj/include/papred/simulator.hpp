#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "papred/schedule.hpp"

namespace papred {

/// One executed step. Times are in units of tau.
struct TimelineEvent {
  double start = 0.0;
  double end = 0.0;
  Step step;
};

struct Timeline {
  /// Indexed by original rank.
  std::vector<std::vector<TimelineEvent>> events;
  std::vector<double> arrivals;
  std::vector<double> finishes;
  double total = 0.0;  // max f - min a
  double mean_elapsed = 0.0;
  /// Data provenance tracked during the run (independent of validate_schedule).
  bool provenance_ok = true;
  std::string provenance_error;
};

/// Discrete-event execution in the tau model: a send occupies its directed
/// link for one tau and does not block the sender; a receive completes one tau
/// after the receiver reaches it or when the message lands, whichever is later.
/// `arrivals` are per original rank. Throws DeadlockError with a dump of the
/// blocked steps when no rank can make progress.
Timeline simulate(const Schedule& schedule, std::span<const double> arrivals);

enum class DelayMode : std::uint8_t { one_late, rand_late };
std::string_view to_string(DelayMode mode);
DelayMode parse_delay_mode(std::string_view name);

/// Arrival pattern in tau: one-late delays rank 1 by `delay`; rand-late draws
/// U(0, delay) per rank from mt19937_64(seed).
std::vector<double> make_pap(DelayMode mode, std::size_t ranks, double delay, std::uint64_t seed);

struct SweepConfig {
  std::vector<Algorithm> algorithms;
  std::vector<std::size_t> ranks;
  std::vector<double> delays;  // tau
  DelayMode mode = DelayMode::one_late;
  std::vector<std::uint64_t> seeds{1};
  unsigned threads = 0;  // 0: hardware concurrency
};

struct SweepRow {
  Algorithm algorithm = Algorithm::ring;
  std::size_t ranks = 0;
  DelayMode mode = DelayMode::one_late;
  double delay = 0.0;
  std::uint64_t seed = 0;
  double total = 0.0;
  double mean_elapsed = 0.0;
  double speedup_vs_ring = 0.0;
};

/// Cells where an algorithm does not support P (rabenseifner, non power of
/// two) are skipped. Rows come out in grid order regardless of threading.
std::vector<SweepRow> sweep(const SweepConfig& config);

void write_sweep_csv(std::ostream& out, std::span<const SweepRow> rows, bool header = true);

}  // namespace papred
