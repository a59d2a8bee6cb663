#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "papred/engine.hpp"
#include "papred/monitor.hpp"
#include "papred/simulator.hpp"

namespace papred {

struct BenchConfig {
  std::size_t size = 1 << 20;  // floats
  std::size_t iterations = 64;
  DelayMode mode = DelayMode::one_late;
  double max_delay_ms = 0.0;
  /// Computation time added on top of the delay ("the additional 100 ms").
  double base_ms = 100.0;
  double edge_fraction = 0.5;
  std::vector<Algorithm> algorithms{Algorithm::ring};
  ReduceOp op = ReduceOp::sum;
  std::uint64_t seed = 1;
  std::optional<double> tau_ms;  // calibrated when unset
  bool verify = true;
  /// Rank 0 appends per-rank rows here; one file per algorithm when several.
  std::string out;
};

struct IterationRecord {
  std::uint32_t iteration = 0;
  std::vector<Seconds> arrivals;  // all ranks, filled on rank 0 only
  std::vector<Seconds> finishes;
  Seconds mean_elapsed = 0.0;
  bool used_estimate = false;
};

struct AlgorithmRun {
  Algorithm algorithm = Algorithm::ring;
  std::vector<IterationRecord> iterations;
  Seconds wall = 0.0;
  AccuracyStats monitor;
  std::size_t estimate_hits = 0;
};

/// Deterministic input of `rank` for `iteration`, uniform in [0, 1).
std::vector<float> bench_input(std::uint64_t seed, std::uint32_t iteration, Rank rank, std::size_t size);

/// Extra computation time (ms) of `rank` in `iteration`, split evenly across
/// the two halves of the phase. one-late: rank 1 gets max_delay; rand-late:
/// U(0, max_delay)/2 per half.
double bench_delay_ms(const BenchConfig& config, std::uint32_t iteration, Rank rank);

/// The benchmark loop for one rank; every rank of the transport calls it with
/// the same config. Throws Error when a result fails the correctness check.
std::vector<AlgorithmRun> run_benchmark(const BenchConfig& config, Transport& transport,
                                        std::ostream* progress = nullptr);

/// Runs all ranks as threads over the in-process transport; returns rank 0's runs.
std::vector<AlgorithmRun> run_benchmark_inproc(const BenchConfig& config, std::size_t ranks,
                                               std::ostream* progress = nullptr);

struct SummaryRow {
  Algorithm algorithm = Algorithm::ring;
  std::size_t iterations = 0;
  double mean_ms = 0.0;
  std::optional<double> stddev_ms;  // undefined below two iterations
  std::optional<double> speedup_vs_ring;
  double wall_s = 0.0;
};

std::vector<SummaryRow> report(std::span<const AlgorithmRun> runs);
void write_summary(std::ostream& out, std::span<const SummaryRow> rows);

/// Appends iteration rows; the header is written only when the file is new or empty.
void append_iteration_csv(const std::string& path, const AlgorithmRun& run);
std::string csv_path_for(const std::string& out, Algorithm algorithm, bool several);

struct DemoConfig {
  std::size_t size = 145578;
  std::size_t iterations = 20;
  double compute_ms = 200.0;
  double edge_fraction = 0.56;
  double skew_ms = 100.0;  // extra compute for the straggler (rank 1)
  std::vector<Algorithm> algorithms{Algorithm::ring, Algorithm::prr};
  std::uint64_t seed = 1;
};

/// Synthetic training-style loop: compute with an edge() report, then average
/// a parameter vector. Uses the benchmark loop with one straggler.
std::vector<AlgorithmRun> iterative_demo(const DemoConfig& config, Transport& transport,
                                         std::ostream* progress = nullptr);
BenchConfig demo_bench_config(const DemoConfig& config);

}  // namespace papred
