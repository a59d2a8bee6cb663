// papred: benchmark, simulator sweep and demo front-end.

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "papred/bench.hpp"
#include "papred/errors.hpp"

extern char** environ;

using namespace papred;

namespace {

std::vector<Algorithm> parse_algorithms(const std::vector<std::string>& names) {
  std::vector<Algorithm> out;
  for (const auto& n : names) out.push_back(parse_algorithm(n));
  if (out.empty()) throw InvalidArgument("no algorithm given");
  return out;
}

struct RankRole {
  std::string roster;
  int rank = -1;
  std::string transport = "tcp";
  std::size_t ranks = 4;
};

// Spawns one child per rank, each re-running this command with --roster/--rank.
int launch_local(int argc, char** argv, std::size_t ranks) {
  const auto ports = reserve_local_ports(ranks);
  std::vector<Endpoint> roster;
  for (std::size_t r = 0; r < ranks; ++r) roster.push_back(Endpoint{static_cast<Rank>(r), "127.0.0.1", ports[r]});
  const auto path = std::filesystem::temp_directory_path() / ("papred-roster-" + std::to_string(::getpid()) + ".txt");
  {
    std::ofstream out(path);
    out << format_roster(roster);
  }

  std::vector<pid_t> children;
  for (std::size_t r = 0; r < ranks; ++r) {
    std::vector<std::string> args(argv, argv + argc);
    args.insert(args.end(), {"--roster", path.string(), "--rank", std::to_string(r)});
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    cargs.push_back(nullptr);
    pid_t pid;
    if (::posix_spawn(&pid, "/proc/self/exe", nullptr, nullptr, cargs.data(), environ) != 0) {
      std::cerr << "papred: failed to spawn rank " << r << '\n';
      for (pid_t c : children) ::kill(c, SIGTERM);
      return 1;
    }
    children.push_back(pid);
  }

  int rc = 0;
  std::size_t running = children.size();
  while (running > 0) {
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid < 0) break;
    --running;
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    if (!ok && rc == 0) {
      rc = 1;
      std::cerr << "papred: a rank process failed; stopping the others\n";
      for (pid_t c : children) {
        if (c != pid) ::kill(c, SIGTERM);
      }
    }
  }
  std::filesystem::remove(path);
  return rc;
}

std::unique_ptr<TcpTransport> join_roster(const RankRole& role) {
  auto roster = load_roster(role.roster);
  if (role.rank < 0 || static_cast<std::size_t>(role.rank) >= roster.size()) {
    throw InvalidArgument("--rank must be in [0, " + std::to_string(roster.size()) + ")");
  }
  auto t = std::make_unique<TcpTransport>(static_cast<Rank>(role.rank), std::move(roster));
  t->wait_connected();
  return t;
}

void print_runs(const std::vector<AlgorithmRun>& runs) {
  write_summary(std::cout, report(runs));
  for (const auto& run : runs) {
    if (!is_pap_aware(run.algorithm)) continue;
    std::cout << "# " << to_string(run.algorithm) << ": estimate used in " << run.estimate_hits << "/"
              << run.iterations.size() << " iterations; monitor error mean "
              << 100.0 * run.monitor.mean_relative_error << "%, within 15% in "
              << 100.0 * run.monitor.fraction_within_15pct << "% of phases\n";
  }
}

template <typename RunFn>
int run_ranks(int argc, char** argv, const RankRole& role, RunFn&& fn) {
  if (role.transport == "inproc") {
    print_runs(fn(nullptr));
    return 0;
  }
  if (role.transport != "tcp") throw InvalidArgument("--transport must be tcp or inproc");
  if (role.roster.empty()) return launch_local(argc, argv, role.ranks);
  auto transport = join_roster(role);
  auto runs = fn(transport.get());
  if (transport->rank() == 0) print_runs(runs);
  return 0;
}

void add_role_options(CLI::App* cmd, RankRole& role) {
  cmd->add_option("--ranks,-P", role.ranks, "Number of local ranks to launch")->check(CLI::Range(1, 1024));
  cmd->add_option("--roster", role.roster, "Join an existing roster file of rank:host:port lines");
  cmd->add_option("--rank", role.rank, "This process's rank in the roster");
  cmd->add_option("--transport", role.transport, "tcp (default) or inproc (threads in one process)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"papred: arrival-pattern aware all-reduce benchmark and simulator"};
  app.require_subcommand(1);

  // bench
  BenchConfig bench;
  RankRole bench_role;
  std::vector<std::string> bench_algs{"ring"};
  std::string bench_mode = "one-late", bench_op = "sum";
  double tau_ms = 0.0;
  bool no_verify = false;
  auto* bench_cmd = app.add_subcommand("bench", "Run the arrival-pattern benchmark on real transports");
  bench_cmd->add_option("--algorithm,-a", bench_algs, "ring|linear|rabenseifner|slt|prr (comma list)")->delimiter(',');
  bench_cmd->add_option("--size", bench.size, "Floats per vector")->capture_default_str();
  bench_cmd->add_option("--iters,-n", bench.iterations, "Iterations per algorithm")->capture_default_str();
  bench_cmd->add_option("--mode", bench_mode, "one-late|rand-late")->capture_default_str();
  bench_cmd->add_option("--max-delay", bench.max_delay_ms, "Maximum delay in ms")->capture_default_str();
  bench_cmd->add_option("--base-ms", bench.base_ms, "Computation time added to every rank")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed, "Data and delay seed")->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "CSV of per-rank timings (written by rank 0)");
  bench_cmd->add_option("--op", bench_op, "sum|max|min")->capture_default_str();
  bench_cmd->add_option("--tau-ms", tau_ms, "Fix tau instead of calibrating");
  bench_cmd->add_flag("--no-verify", no_verify, "Skip the per-iteration correctness check");
  add_role_options(bench_cmd, bench_role);

  // sim-sweep
  std::vector<std::string> sweep_algs{"ring", "linear", "rabenseifner", "slt", "prr"};
  std::vector<std::size_t> sweep_ranks{4, 8, 16, 48};
  std::vector<double> sweep_delays{0, 1, 5, 10, 50, 100, 500, 1000};
  std::vector<std::uint64_t> sweep_seeds{1};
  std::string sweep_mode = "one-late", sweep_out;
  unsigned sweep_threads = 0;
  auto* sweep_cmd = app.add_subcommand("sim-sweep", "Simulated tau-model sweep, CSV output");
  sweep_cmd->add_option("--algorithm,-a", sweep_algs, "Algorithms (comma list)")->delimiter(',');
  sweep_cmd->add_option("--ranks,-P", sweep_ranks, "Rank counts (comma list)")->delimiter(',');
  sweep_cmd->add_option("--delays", sweep_delays, "Delays in tau (comma list)")->delimiter(',');
  sweep_cmd->add_option("--mode", sweep_mode, "one-late|rand-late")->capture_default_str();
  sweep_cmd->add_option("--seeds", sweep_seeds, "Seeds for rand-late (comma list)")->delimiter(',');
  sweep_cmd->add_option("--out", sweep_out, "Output CSV (default stdout)");
  sweep_cmd->add_option("--threads", sweep_threads, "Worker threads (0 = all cores)");

  // demo
  DemoConfig demo;
  RankRole demo_role;
  std::vector<std::string> demo_algs{"ring", "prr"};
  auto* demo_cmd = app.add_subcommand("demo", "Synthetic iterative workload with one straggler");
  demo_cmd->add_option("--algorithm,-a", demo_algs, "Algorithms (comma list)")->delimiter(',');
  demo_cmd->add_option("--iters,-n", demo.iterations, "Iterations per algorithm")->capture_default_str();
  demo_cmd->add_option("--size", demo.size, "Parameter count")->capture_default_str();
  demo_cmd->add_option("--compute-ms", demo.compute_ms, "Computation per iteration")->capture_default_str();
  demo_cmd->add_option("--skew-ms", demo.skew_ms, "Extra computation of the straggler")->capture_default_str();
  demo_cmd->add_option("--edge", demo.edge_fraction, "Fraction of computation done at edge()")->capture_default_str();
  demo_cmd->add_option("--seed", demo.seed, "Data seed")->capture_default_str();
  add_role_options(demo_cmd, demo_role);

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench_cmd->parsed()) {
      bench.algorithms = parse_algorithms(bench_algs);
      bench.mode = parse_delay_mode(bench_mode);
      bench.op = parse_reduce_op(bench_op);
      bench.verify = !no_verify;
      if (tau_ms > 0.0) bench.tau_ms = tau_ms;
      return run_ranks(argc, argv, bench_role, [&](Transport* t) {
        if (!t) return run_benchmark_inproc(bench, bench_role.ranks, &std::cerr);
        return run_benchmark(bench, *t, &std::cerr);
      });
    }
    if (sweep_cmd->parsed()) {
      SweepConfig cfg;
      cfg.algorithms = parse_algorithms(sweep_algs);
      cfg.ranks = sweep_ranks;
      cfg.delays = sweep_delays;
      cfg.mode = parse_delay_mode(sweep_mode);
      cfg.seeds = sweep_seeds;
      cfg.threads = sweep_threads;
      const auto rows = sweep(cfg);
      if (sweep_out.empty()) {
        write_sweep_csv(std::cout, rows);
      } else {
        std::ofstream out(sweep_out);
        if (!out) throw Error("cannot write " + sweep_out);
        write_sweep_csv(out, rows);
      }
      return 0;
    }
    if (demo_cmd->parsed()) {
      demo.algorithms = parse_algorithms(demo_algs);
      return run_ranks(argc, argv, demo_role, [&](Transport* t) {
        if (!t) return run_benchmark_inproc(demo_bench_config(demo), demo_role.ranks, &std::cerr);
        return iterative_demo(demo, *t, &std::cerr);
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "papred: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
