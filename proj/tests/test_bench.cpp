#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "papred/bench.hpp"
#include "papred/errors.hpp"

using namespace papred;

namespace {
std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}
}  // namespace

TEST_CASE("bench_input is seeded per iteration and rank") {
  const auto a = bench_input(5, 1, 0, 1000);
  CHECK(a == bench_input(5, 1, 0, 1000));
  CHECK(a != bench_input(5, 1, 1, 1000));
  CHECK(a != bench_input(5, 2, 0, 1000));
  CHECK(a != bench_input(6, 1, 0, 1000));
  for (float x : a) CHECK((x >= 0.f && x < 1.f));
}

TEST_CASE("bench_delay_ms") {
  BenchConfig c;
  c.max_delay_ms = 50;
  CHECK(bench_delay_ms(c, 3, 1) == 50.0);
  CHECK(bench_delay_ms(c, 3, 0) == 0.0);
  CHECK(bench_delay_ms(c, 3, 2) == 0.0);
  c.mode = DelayMode::rand_late;
  const double d = bench_delay_ms(c, 3, 2);
  CHECK(d == bench_delay_ms(c, 3, 2));
  CHECK((d >= 0.0 && d <= 50.0));
  c.max_delay_ms = 0;
  CHECK(bench_delay_ms(c, 3, 1) == 0.0);
}

TEST_CASE("report: sigma, error bars and speedup") {
  AlgorithmRun one{Algorithm::prr, {{1, {}, {}, 0.010, false}}, 1.0, {}, 0};
  auto rows = report(std::vector<AlgorithmRun>{one});
  CHECK(rows[0].mean_ms == doctest::Approx(10.0));
  CHECK_FALSE(rows[0].stddev_ms.has_value());
  CHECK_FALSE(rows[0].speedup_vs_ring.has_value());

  AlgorithmRun ring{Algorithm::ring, {{1, {}, {}, 0.020, false}, {2, {}, {}, 0.020, false}}, 1.0, {}, 0};
  AlgorithmRun prr{Algorithm::prr, {{3, {}, {}, 0.010, false}, {4, {}, {}, 0.014, false}}, 1.0, {}, 0};
  rows = report(std::vector<AlgorithmRun>{ring, prr});
  CHECK(*rows[0].stddev_ms == 0.0);
  CHECK(*rows[0].speedup_vs_ring == doctest::Approx(1.0));
  CHECK(*rows[1].speedup_vs_ring == doctest::Approx(20.0 / 12.0));
  CHECK(*rows[1].stddev_ms == doctest::Approx(std::sqrt(8.0)));

  std::ostringstream out;
  write_summary(out, rows);
  CHECK(out.str().find("prr,2,12.000,2.828,6.343,17.657,1.6667") != std::string::npos);
  std::ostringstream lone;
  write_summary(lone, report(std::vector<AlgorithmRun>{one}));
  CHECK(lone.str().find("prr,1,10.000,,,,,") != std::string::npos);
}

TEST_CASE("iteration CSV is append-safe") {
  const auto dir = std::filesystem::temp_directory_path() / "papred-test-csv";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "t.csv").string();
  std::filesystem::remove(path);
  AlgorithmRun run{Algorithm::ring, {{1, {0.0, 0.002}, {0.010, 0.011}, 0.0095, false}}, 0.1, {}, 0};
  append_iteration_csv(path, run);
  append_iteration_csv(path, run);
  const auto text = read_file(path);
  CHECK(text ==
        "iteration,rank,arrival_ms,finish_ms,elapsed_ms,mean_elapsed_ms\n"
        "1,0,0.000,10.000,10.000,9.500\n1,1,2.000,11.000,9.000,9.500\n"
        "1,0,0.000,10.000,10.000,9.500\n1,1,2.000,11.000,9.000,9.500\n");
  CHECK(csv_path_for("out/r.csv", Algorithm::prr, true) == "out/r_prr.csv");
  CHECK(csv_path_for("r", Algorithm::slt, true) == "r_slt.csv");
  CHECK(csv_path_for("r.csv", Algorithm::slt, false) == "r.csv");
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_benchmark over the in-process transport") {
  BenchConfig c;
  c.size = 1000;
  c.iterations = 3;
  c.base_ms = 10;
  c.max_delay_ms = 10;
  c.algorithms = {Algorithm::ring, Algorithm::linear, Algorithm::rabenseifner, Algorithm::slt, Algorithm::prr};
  const auto runs = run_benchmark_inproc(c, 4);
  REQUIRE(runs.size() == 5);
  std::uint32_t last = 0;
  double skew = 0.0;
  for (const auto& run : runs) {
    REQUIRE(run.iterations.size() == 3);
    for (const auto& rec : run.iterations) {
      CHECK(rec.iteration > last);
      last = rec.iteration;
      REQUIRE(rec.arrivals.size() == 4);
      skew += rec.arrivals[1] - (rec.arrivals[0] + rec.arrivals[2] + rec.arrivals[3]) / 3.0;
      CHECK(rec.mean_elapsed > 0.0);
    }
    if (is_pap_aware(run.algorithm)) CHECK(run.estimate_hits == 3);
  }
  // Rank 1 carries the delay: on average it enters about 10 ms after the others.
  CHECK(skew / 15.0 > 0.006);
}

TEST_CASE("run_benchmark: argument checks") {
  BenchConfig c;
  c.size = 2;
  auto g = InProcTransport::create_group(4);
  CHECK_THROWS_AS(run_benchmark(c, *g[0]), InvalidArgument);
  c.size = 100;
  c.iterations = 0;
  CHECK_THROWS_AS(run_benchmark(c, *g[0]), InvalidArgument);
}

TEST_CASE("demo config") {
  DemoConfig d;
  const auto b = demo_bench_config(d);
  CHECK(b.size == 145578);
  CHECK(b.edge_fraction == doctest::Approx(0.56));
  const auto parts = partition_segments(b.size, 4);
  CHECK(parts.total() == 145578);
}
