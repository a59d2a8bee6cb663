#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "papred/core.hpp"
#include "papred/schedule.hpp"
#include "papred/transport.hpp"

namespace papred {

using Clock = std::chrono::steady_clock;

/// Arrival estimates for one iteration, seconds relative to that iteration's epoch.
struct PapEstimate {
  std::uint32_t iteration = 0;
  std::vector<Seconds> arrivals;
  /// false for ranks that reported no estimate (phase ended without edge()).
  std::vector<bool> present;
  /// Every rank has reported, with or without a value.
  bool complete = false;

  bool usable() const;
};

class EstimateSource {
 public:
  virtual ~EstimateSource() = default;
  /// Waits up to `timeout` for the estimate of `iteration` to be complete and
  /// returns whatever is known at that point.
  virtual PapEstimate await_estimate(std::uint32_t iteration, Millis timeout) = 0;
};

struct EngineOptions {
  /// Segment transfer+reduce time. Calibrated collectively when unset.
  std::optional<Seconds> tau;
  Millis estimate_wait{5'000};
  /// Cross-check the sorted assignment on all ranks after each PAP-aware call.
  bool verify_assignment = false;
};

struct AllreduceResult {
  Seconds arrival = 0.0;  // relative to the context epoch
  Seconds finish = 0.0;
  std::uint32_t iteration = 0;
  bool used_estimate = false;
  SortedAssignment assignment;
};

class AllreduceContext {
 public:
  AllreduceContext(Transport& transport, Algorithm algorithm, EngineOptions options = {});

  Transport& transport() { return transport_; }
  Rank rank() const { return transport_.rank(); }
  std::size_t size() const { return transport_.size(); }

  Algorithm algorithm() const { return algorithm_; }
  void set_algorithm(Algorithm algorithm) { algorithm_ = algorithm; }
  const EngineOptions& options() const { return options_; }

  void set_estimate_source(EstimateSource* source) { source_ = source; }
  EstimateSource* estimate_source() const { return source_; }

  /// Arrival and finish stamps are measured from here.
  void set_epoch(Clock::time_point epoch) { epoch_ = epoch; }
  Clock::time_point epoch() const { return epoch_; }
  Seconds since_epoch(Clock::time_point t) const;

  /// Iteration number the next allreduce will use (starts at 1).
  std::uint32_t next_iteration() const { return iteration_ + 1; }
  std::uint32_t claim_iteration() { return ++iteration_; }

  /// Agreed tau for vectors of `length` floats. Collective on first use per
  /// length unless fixed in the options: runs a ring all-reduce and takes the
  /// slowest rank's time over 2P-2 rounds.
  Seconds tau_for(std::size_t length);

  /// Sequence numbers for control collectives; advance identically on all ranks.
  std::uint32_t claim_control_seq() { return control_seq_++; }

 private:
  Transport& transport_;
  Algorithm algorithm_;
  EngineOptions options_;
  EstimateSource* source_ = nullptr;
  Clock::time_point epoch_ = Clock::now();
  std::uint32_t iteration_ = 0;
  std::uint32_t calibration_iteration_ = 0;
  std::uint32_t control_seq_ = 0;
  std::map<std::size_t, Seconds> tau_cache_;
};

/// In-place all-reduce of `data` over all ranks of the context.
AllreduceResult allreduce(std::span<float> data, ReduceOp op, AllreduceContext& ctx);

/// Runs `schedule` for this rank. Frames are tagged with `iteration`.
void execute_schedule(const Schedule& schedule, std::span<float> data, ReduceOp op, Transport& transport,
                      std::uint32_t iteration);

struct CorrectnessReport {
  bool ok = true;
  double max_error = 0.0;  // relative for sum, absolute for max/min
  std::optional<std::size_t> first_bad;
};

/// Compares `data` with a serial fold of `inputs`. Sum tolerates 1e-5 relative
/// to the L1 magnitude of the contributions; max/min must match exactly.
CorrectnessReport check_correctness(std::span<const float> data,
                                    std::span<const std::vector<float>> inputs, ReduceOp op);

// Small control collectives (data frames, control phase, tagged by seq).
std::vector<std::vector<std::uint8_t>> gather_bytes(Transport& transport, Rank root, std::uint32_t seq,
                                                    std::vector<std::uint8_t> mine);
std::vector<std::uint8_t> broadcast_bytes(Transport& transport, Rank root, std::uint32_t seq,
                                          std::vector<std::uint8_t> value);
std::vector<double> allgather_doubles(Transport& transport, std::uint32_t seq, double value);

/// Arrivals (seconds) quantized to the microsecond grid used on the wire.
std::uint64_t to_micros(Seconds s);
Seconds from_micros(std::uint64_t us);

}  // namespace papred
