#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "papred/engine.hpp"

namespace papred {

struct ProgressState {
  std::uint32_t iteration = 0;
  bool running = false;
  Clock::time_point epoch{};
  Clock::time_point phase_start{};
  std::optional<Clock::time_point> edge_time;
  double edge_fraction = 0.0;
  std::optional<Clock::time_point> phase_end;
};

struct AccuracySample {
  std::uint32_t iteration = 0;
  Seconds estimated = 0.0;  // since epoch
  Seconds actual = 0.0;
  /// |estimated - actual| over the measured computation time.
  double relative_error = 0.0;
};

struct AccuracyStats {
  std::size_t count = 0;
  double mean_relative_error = 0.0;
  double max_relative_error = 0.0;
  double fraction_within_15pct = 0.0;
};

AccuracyStats summarize_accuracy(std::span<const AccuracySample> samples);

struct MonitorOptions {
  bool warmup = true;
  Millis warmup_timeout{2'000};
  /// Estimates older than this many iterations are dropped.
  std::uint32_t keep_iterations = 8;
};

/// Progress tracking thread. The compute thread reports phase_start / edge /
/// phase_end; the monitor thread broadcasts the extrapolated arrival, collects
/// everyone else's and warms up the edges of the expected sorted order.
class Monitor final : public EstimateSource {
 public:
  explicit Monitor(Transport& transport, MonitorOptions options = {});
  ~Monitor() override;
  Monitor(const Monitor&) = delete;
  Monitor& operator=(const Monitor&) = delete;

  /// Opens the next iteration. Estimates are expressed relative to `epoch`
  /// (default: now), which must be common to all ranks. `iteration` lets the
  /// caller keep numbering in step with an AllreduceContext; it must increase.
  void phase_start(std::optional<Clock::time_point> epoch = std::nullopt,
                   std::optional<std::uint32_t> iteration = std::nullopt);
  void edge(double fraction);
  void phase_end();

  ProgressState progress() const;
  std::uint32_t iteration() const;

  /// Latest estimate known, copied under a short lock.
  PapEstimate snapshot_estimate() const;
  PapEstimate await_estimate(std::uint32_t iteration, Millis timeout) override;

  std::vector<AccuracySample> accuracy_samples() const;
  AccuracyStats accuracy() const;
  std::vector<WarmupResult> last_warmup() const;

 private:
  struct Shared;
  void run();

  Transport& transport_;
  MonitorOptions options_;
  std::shared_ptr<Shared> shared_;
};

}  // namespace papred
