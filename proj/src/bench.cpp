#include "papred/bench.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <thread>

#include "papred/errors.hpp"

namespace papred {

namespace {

using MillisD = std::chrono::duration<double, std::milli>;

std::vector<std::uint8_t> pack(std::initializer_list<double> values) {
  std::vector<std::uint8_t> out(values.size() * sizeof(double));
  std::size_t off = 0;
  for (double v : values) {
    std::memcpy(out.data() + off, &v, sizeof v);
    off += sizeof v;
  }
  return out;
}

double unpack(const std::vector<std::uint8_t>& bytes, std::size_t index) {
  if (bytes.size() < (index + 1) * sizeof(double)) throw ProtocolError("short timing payload");
  double v;
  std::memcpy(&v, bytes.data() + index * sizeof(double), sizeof v);
  return v;
}

}  // namespace

std::vector<float> bench_input(std::uint64_t seed, std::uint32_t iteration, Rank rank, std::size_t size) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), iteration, rank};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> v(size);
  for (auto& x : v) x = dist(rng);
  return v;
}

double bench_delay_ms(const BenchConfig& config, std::uint32_t iteration, Rank rank) {
  if (config.max_delay_ms <= 0.0) return 0.0;
  if (config.mode == DelayMode::one_late) return rank == 1 ? config.max_delay_ms : 0.0;
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    iteration, rank, 0x5eedu};
  std::mt19937_64 rng(seq);
  return std::uniform_real_distribution<double>(0.0, config.max_delay_ms)(rng);
}

std::vector<AlgorithmRun> run_benchmark(const BenchConfig& config, Transport& transport, std::ostream* progress) {
  if (config.iterations == 0) throw InvalidArgument("bench: need at least one iteration");
  if (config.algorithms.empty()) throw InvalidArgument("bench: no algorithm selected");
  if (!(config.edge_fraction > 0.0 && config.edge_fraction <= 1.0)) {
    throw InvalidArgument("bench: edge fraction must be in (0, 1]");
  }
  if (config.max_delay_ms < 0.0 || config.base_ms < 0.0) throw InvalidArgument("bench: negative time");
  const std::size_t p = transport.size();
  const Rank me = transport.rank();
  if (config.size < p) throw InvalidArgument("bench: size must be at least P");

  EngineOptions eopts;
  if (config.tau_ms) eopts.tau = *config.tau_ms / 1000.0;
  AllreduceContext ctx(transport, config.algorithms.front(), eopts);

  std::unique_ptr<Monitor> monitor;
  bool any_aware = false;
  for (auto a : config.algorithms) any_aware = any_aware || is_pap_aware(a);
  if (any_aware) {
    monitor = std::make_unique<Monitor>(transport);
    ctx.set_estimate_source(monitor.get());
    ctx.tau_for(config.size);
  }

  const bool several = config.algorithms.size() > 1;
  std::vector<AlgorithmRun> runs;
  for (Algorithm alg : config.algorithms) {
    ctx.set_algorithm(alg);
    const bool aware = is_pap_aware(alg);
    AlgorithmRun run;
    run.algorithm = alg;
    const std::size_t samples_before = monitor ? monitor->accuracy_samples().size() : 0;
    const auto wall_start = Clock::now();

    for (std::size_t it = 0; it < config.iterations; ++it) {
      const std::uint32_t n = ctx.next_iteration();
      auto data = bench_input(config.seed, n, me, config.size);
      const double half_ms = (config.max_delay_ms + config.base_ms) / 2.0 + bench_delay_ms(config, n, me) / 2.0;
      const auto total = std::chrono::duration_cast<Clock::duration>(MillisD(2.0 * half_ms));
      const auto to_edge = std::chrono::duration_cast<Clock::duration>(MillisD(2.0 * half_ms * config.edge_fraction));

      transport.barrier();
      transport.barrier();
      const auto epoch = Clock::now();
      ctx.set_epoch(epoch);
      if (aware) monitor->phase_start(epoch, n);
      std::this_thread::sleep_until(epoch + to_edge);
      if (aware) monitor->edge(config.edge_fraction);
      std::this_thread::sleep_until(epoch + total);
      if (aware) monitor->phase_end();

      const auto result = allreduce(data, config.op, ctx);
      if (result.used_estimate) ++run.estimate_hits;

      if (config.verify) {
        std::vector<std::vector<float>> inputs;
        inputs.reserve(p);
        for (Rank r = 0; r < p; ++r) inputs.push_back(bench_input(config.seed, n, r, config.size));
        const auto verdict = check_correctness(data, inputs, config.op);
        if (!verdict.ok) {
          throw Error("correctness check failed on rank " + std::to_string(me) + " (" +
                      std::string(to_string(alg)) + ", iteration " + std::to_string(n) + ", element " +
                      std::to_string(*verdict.first_bad) + ", error " + std::to_string(verdict.max_error) + ")");
        }
      }

      IterationRecord rec;
      rec.iteration = n;
      rec.used_estimate = result.used_estimate;
      const auto seq = ctx.claim_control_seq();
      auto gathered = gather_bytes(transport, 0, seq, pack({result.arrival, result.finish}));
      std::vector<std::uint8_t> mean_bytes;
      if (me == 0) {
        double sum = 0.0;
        for (Rank r = 0; r < p; ++r) {
          rec.arrivals.push_back(unpack(gathered[r], 0));
          rec.finishes.push_back(unpack(gathered[r], 1));
          sum += rec.finishes.back() - rec.arrivals.back();
        }
        mean_bytes = pack({sum / static_cast<double>(p)});
      }
      rec.mean_elapsed = unpack(broadcast_bytes(transport, 0, seq, std::move(mean_bytes)), 0);
      run.iterations.push_back(std::move(rec));
    }
    run.wall = std::chrono::duration<double>(Clock::now() - wall_start).count();
    if (monitor) {
      const auto all = monitor->accuracy_samples();
      run.monitor = summarize_accuracy(std::span(all).subspan(std::min(samples_before, all.size())));
    }
    if (me == 0 && !config.out.empty()) append_iteration_csv(csv_path_for(config.out, alg, several), run);
    if (progress && me == 0) {
      double sum = 0.0;
      for (const auto& r : run.iterations) sum += r.mean_elapsed;
      *progress << to_string(alg) << ": " << run.iterations.size() << " iterations, mean elapsed "
                << std::fixed << std::setprecision(3) << 1e3 * sum / static_cast<double>(run.iterations.size())
                << " ms" << std::defaultfloat << '\n';
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

std::vector<AlgorithmRun> run_benchmark_inproc(const BenchConfig& config, std::size_t ranks,
                                               std::ostream* progress) {
  auto group = InProcTransport::create_group(ranks);
  std::vector<std::vector<AlgorithmRun>> results(ranks);
  std::vector<std::exception_ptr> errors(ranks);
  std::vector<std::thread> threads;
  for (std::size_t r = 0; r < ranks; ++r) {
    threads.emplace_back([&, r] {
      try {
        results[r] = run_benchmark(config, *group[r], r == 0 ? progress : nullptr);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results[0];
}

std::vector<SummaryRow> report(std::span<const AlgorithmRun> runs) {
  std::vector<SummaryRow> rows;
  std::optional<double> ring_mean;
  for (const auto& run : runs) {
    SummaryRow row;
    row.algorithm = run.algorithm;
    row.iterations = run.iterations.size();
    row.wall_s = run.wall;
    if (!run.iterations.empty()) {
      double sum = 0.0;
      for (const auto& r : run.iterations) sum += r.mean_elapsed;
      row.mean_ms = 1e3 * sum / static_cast<double>(row.iterations);
      if (row.iterations > 1) {
        double sq = 0.0;
        for (const auto& r : run.iterations) sq += std::pow(1e3 * r.mean_elapsed - row.mean_ms, 2);
        row.stddev_ms = std::sqrt(sq / static_cast<double>(row.iterations - 1));
      }
    }
    if (run.algorithm == Algorithm::ring && !ring_mean) ring_mean = row.mean_ms;
    rows.push_back(row);
  }
  if (ring_mean) {
    for (auto& row : rows) {
      if (row.mean_ms > 0.0) row.speedup_vs_ring = *ring_mean / row.mean_ms;
    }
  }
  return rows;
}

void write_summary(std::ostream& out, std::span<const SummaryRow> rows) {
  out << "algorithm,iterations,mean_elapsed_ms,stddev_ms,minus_2sigma_ms,plus_2sigma_ms,speedup_vs_ring,wall_s\n";
  out << std::fixed;
  for (const auto& r : rows) {
    out << to_string(r.algorithm) << ',' << r.iterations << ',' << std::setprecision(3) << r.mean_ms << ',';
    if (r.stddev_ms) {
      out << *r.stddev_ms << ',' << r.mean_ms - 2 * *r.stddev_ms << ',' << r.mean_ms + 2 * *r.stddev_ms;
    } else {
      out << ",,";
    }
    out << ',';
    if (r.speedup_vs_ring) out << std::setprecision(4) << *r.speedup_vs_ring;
    out << ',' << std::setprecision(3) << r.wall_s << '\n';
  }
  out << std::defaultfloat;
}

std::string csv_path_for(const std::string& out, Algorithm algorithm, bool several) {
  if (!several) return out;
  std::filesystem::path path(out);
  const auto ext = path.extension().string();
  path.replace_extension();
  return path.string() + "_" + std::string(to_string(algorithm)) + (ext.empty() ? ".csv" : ext);
}

void append_iteration_csv(const std::string& path, const AlgorithmRun& run) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot open " + path + " for writing");
  if (fresh) out << "iteration,rank,arrival_ms,finish_ms,elapsed_ms,mean_elapsed_ms\n";
  out << std::fixed << std::setprecision(3);
  for (const auto& rec : run.iterations) {
    for (std::size_t r = 0; r < rec.arrivals.size(); ++r) {
      out << rec.iteration << ',' << r << ',' << 1e3 * rec.arrivals[r] << ',' << 1e3 * rec.finishes[r] << ','
          << 1e3 * (rec.finishes[r] - rec.arrivals[r]) << ',' << 1e3 * rec.mean_elapsed << '\n';
    }
  }
  if (!out) throw Error("write to " + path + " failed");
}

BenchConfig demo_bench_config(const DemoConfig& config) {
  BenchConfig b;
  b.size = config.size;
  b.iterations = config.iterations;
  b.mode = DelayMode::one_late;
  b.max_delay_ms = config.skew_ms;
  b.base_ms = config.compute_ms;
  b.edge_fraction = config.edge_fraction;
  b.algorithms = config.algorithms;
  b.seed = config.seed;
  return b;
}

std::vector<AlgorithmRun> iterative_demo(const DemoConfig& config, Transport& transport, std::ostream* progress) {
  return run_benchmark(demo_bench_config(config), transport, progress);
}

}  // namespace papred
