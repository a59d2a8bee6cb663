// Acceptance checks: one PASS/FAIL line per criterion, details underneath.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "papred/bench.hpp"
#include "papred/errors.hpp"

#ifndef PAPRED_CLI_PATH
#define PAPRED_CLI_PATH "papred"
#endif

using namespace papred;
using Wall = std::chrono::steady_clock;

namespace {

int failures = 0;

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok   " : "MISS ") + what);
  }
};

double seconds_since(Wall::time_point t0) { return std::chrono::duration<double>(Wall::now() - t0).count(); }

void emit(int id, const std::string& title, const Verdict& v) {
  std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << '\n';
  for (const auto& n : v.notes) std::cout << "    " << n << '\n';
  std::cout.flush();
  if (!v.pass) ++failures;
}

std::string fmt(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

template <typename Fn>
void on_ranks(std::vector<std::shared_ptr<InProcTransport>>& group, Fn fn) {
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(group.size());
  for (std::size_t r = 0; r < group.size(); ++r) {
    threads.emplace_back([&, r] {
      try {
        fn(static_cast<Rank>(r), *group[r]);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void criterion1() {
  const auto t0 = Wall::now();
  Verdict v;
  const std::vector<double> a4{4, 0, 0, 0};
  const std::vector<double> a2{2, 0, 0, 0};
  const double linear = simulate(linear_schedule(4), a4).total;
  const double slt = simulate(build_schedule(Algorithm::slt, 4, std::span<const double>(a4), 1.0), a4).total;
  const double ring = simulate(ring_schedule(4), a2).total;
  const double prr = simulate(build_schedule(Algorithm::prr, 4, std::span<const double>(a2), 1.0), a2).total;
  v.require(linear == 14.0, "linear, a=(4,0,0,0): " + fmt(linear) + " tau (expected 14)");
  v.require(slt == 12.0, "slt, a=(4,0,0,0): " + fmt(slt) + " tau (expected 12)");
  v.require(ring == 8.0, "ring, a=(2,0,0,0): " + fmt(ring) + " tau (expected 8)");
  v.require(prr == 7.0, "prr, a=(2,0,0,0): " + fmt(prr) + " tau (expected 7)");
  const double took = seconds_since(t0);
  v.require(took < 1.0, "runtime " + fmt(took) + " s (< 1 s)");
  emit(1, "tau-model exactness", v);
}

void criterion2() {
  const auto t0 = Wall::now();
  Verdict v;
  const auto k = prr_presteps(std::vector<double>{0, 0, 0, 2}, 1.0);
  v.require(k == std::vector<std::uint32_t>{2, 1, 0, 0}, "a=(0,0,0,2tau) gives (2,1,0,0)");
  v.require(prr_presteps(std::vector<double>(4, 0.0), 1.0) == std::vector<std::uint32_t>(4, 0), "balanced gives zeros");
  std::mt19937_64 rng(2024);
  std::size_t bad = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t p = 2 + rng() % 63;
    std::vector<double> a(p);
    std::exponential_distribution<double> gap(0.5);
    for (auto& x : a) x = (rng() % 3 == 0) ? 0.0 : gap(rng) * static_cast<double>(rng() % 8);
    std::sort(a.begin(), a.end());
    const auto ks = prr_presteps(a, 0.5 + static_cast<double>(rng() % 4));
    bool ok = ks[p - 1] == 0;
    for (std::size_t i = 0; i + 1 < p; ++i) ok = ok && ks[i] >= ks[i + 1] && ks[i] - ks[i + 1] <= 1;
    bad += ok ? 0 : 1;
  }
  v.require(bad == 0, "10000 random patterns: " + std::to_string(bad) + " invariant violations");
  const double took = seconds_since(t0);
  v.require(took < 5.0, "runtime " + fmt(took) + " s (< 5 s)");
  emit(2, "pre-step vector", v);
}

void criterion3() {
  Verdict v;
  std::size_t prr_ok = 0, slt_ok = 0;
  for (std::size_t p = 2; p <= 16; ++p) {
    prr_ok += prr_schedule(make_prr_plan(std::vector<std::uint32_t>(p, 0))).steps == ring_schedule(p).steps;
    slt_ok += slt_schedule(SortedAssignment::identity(p)).steps == linear_schedule(p).steps;
  }
  v.require(prr_ok == 15, "prr(k=0) == ring for " + std::to_string(prr_ok) + "/15 values of P");
  v.require(slt_ok == 15, "slt(identity) == linear for " + std::to_string(slt_ok) + "/15 values of P");
  emit(3, "degeneracy", v);
}

void criterion4() {
  const auto t0 = Wall::now();
  Verdict v;
  std::mt19937_64 rng(4);
  for (auto alg : {Algorithm::ring, Algorithm::linear, Algorithm::rabenseifner, Algorithm::slt, Algorithm::prr}) {
    std::size_t passed = 0, estimated = 0;
    const int cases = 200;
    for (int c = 0; c < cases; ++c) {
      std::vector<std::size_t> choices = alg == Algorithm::rabenseifner ? std::vector<std::size_t>{2, 4, 8}
                                                                        : std::vector<std::size_t>{2, 3, 4, 5, 8};
      const std::size_t p = choices[rng() % choices.size()];
      const std::size_t n = p + rng() % (4096 - p + 1);
      const ReduceOp op = (c % 3 == 0) ? ReduceOp::max : ReduceOp::sum;
      const std::uint64_t seed = rng();
      std::vector<int> sleep_ms(p);
      for (auto& s : sleep_ms) s = static_cast<int>(rng() % 7);

      std::vector<std::vector<float>> inputs;
      for (std::size_t r = 0; r < p; ++r) inputs.push_back(bench_input(seed, 1, static_cast<Rank>(r), n));
      std::vector<std::vector<float>> outputs(p);
      std::vector<int> used(p, 0);
      auto group = InProcTransport::create_group(p);
      on_ranks(group, [&](Rank r, Transport& t) {
        EngineOptions o;
        o.tau = 0.0005;
        AllreduceContext ctx(t, alg, o);
        std::unique_ptr<Monitor> mon;
        if (is_pap_aware(alg)) {
          mon = std::make_unique<Monitor>(t);
          ctx.set_estimate_source(mon.get());
        }
        t.barrier();
        const auto epoch = Clock::now();
        ctx.set_epoch(epoch);
        if (mon) mon->phase_start(epoch);
        std::this_thread::sleep_until(epoch + std::chrono::microseconds(500 * sleep_ms[r]));
        if (mon) mon->edge(0.5);
        std::this_thread::sleep_until(epoch + Millis(sleep_ms[r]));
        if (mon) mon->phase_end();
        auto data = inputs[r];
        used[r] = allreduce(data, op, ctx).used_estimate;
        outputs[r] = std::move(data);
        t.barrier();
      });
      bool ok = true;
      for (std::size_t r = 0; r < p; ++r) ok = ok && check_correctness(outputs[r], inputs, op).ok;
      passed += ok;
      estimated += used[0];
    }
    std::string note = std::string(to_string(alg)) + ": " + std::to_string(passed) + "/" + std::to_string(cases) +
                       " cases match the serial fold";
    if (is_pap_aware(alg)) note += " (" + std::to_string(estimated) + " scheduled from live estimates)";
    v.require(passed == static_cast<std::size_t>(cases), note);
  }
  const double took = seconds_since(t0);
  v.require(took < 120.0, "runtime " + fmt(took) + " s (< 2 min)");
  emit(4, "correctness oracle", v);
}

void criterion5() {
  Verdict v;
  std::mt19937_64 rng(5);
  bool totals = true;
  std::size_t patterns = 0;
  for (std::size_t p : {4u, 8u}) {
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> a(p);
      for (auto& x : a) x = static_cast<double>(rng() % (4 * p));
      const auto s = build_schedule(Algorithm::prr, p, std::span<const double>(a), 1.0);
      std::size_t sends = 0;
      for (const auto& c : count_steps(s)) sends += c.sends;
      totals = totals && sends == p * (2 * p - 2);
      ++patterns;
    }
  }
  v.require(totals, "total prr sends == P(2P-2) for " + std::to_string(patterns) + " patterns (P = 4, 8)");
  for (std::size_t p : {4u, 8u}) {
    for (Rank late : {Rank{0}, Rank{1}, static_cast<Rank>(p - 1)}) {
      std::vector<double> a(p, 0.0);
      a[late] = static_cast<double>(p) + 1.5;
      const auto s = build_schedule(Algorithm::prr, p, std::span<const double>(a), 1.0);
      const auto counts = count_steps(s);
      const auto& mine = counts[s.assignment.new_id_of[late]];
      bool others_ok = true;
      std::ostringstream other_desc;
      for (std::size_t id = 0; id < p; ++id) {
        if (id == s.assignment.new_id_of[late]) continue;
        others_ok = others_ok && counts[id].sends == 2 * p - 1 && counts[id].receives == 2 * p - 1;
        other_desc << ' ' << counts[id].sends << '/' << counts[id].receives;
      }
      v.require(mine.sends == p - 1 && mine.receives == p - 1,
                "P=" + std::to_string(p) + ", rank " + std::to_string(late) + " late: it sends " +
                    std::to_string(mine.sends) + " and receives " + std::to_string(mine.receives) + " (expected " +
                    std::to_string(p - 1) + " each)");
      v.require(others_ok, "  others send/receive:" + other_desc.str() + " (expected " + std::to_string(2 * p - 1) +
                               " each)");
    }
  }
  emit(5, "message-count claims", v);
}

void criterion6() {
  const auto t0 = Wall::now();
  Verdict v;
  SweepConfig c;
  c.algorithms = {Algorithm::ring, Algorithm::slt, Algorithm::prr};
  c.ranks = {48};
  c.delays = {0, 1, 5, 10, 50, 100, 500, 1000};
  c.mode = DelayMode::one_late;
  const auto rows = sweep(c);
  auto total_of = [&](Algorithm alg, double d) {
    for (const auto& r : rows) {
      if (r.algorithm == alg && r.delay == d) return r.total;
    }
    throw InternalError("missing sweep row");
  };
  for (double d : c.delays) {
    const double ring = total_of(Algorithm::ring, d);
    const double prr = total_of(Algorithm::prr, d);
    const double slt = total_of(Algorithm::slt, d);
    const std::string tag = "delay " + fmt(d) + " tau: ring " + fmt(ring) + ", prr " + fmt(prr) + ", slt " + fmt(slt);
    if (d == 0) {
      v.require(std::abs(prr - ring) <= 0.05 * ring, tag + " (prr within 5% of ring)");
    } else if (d >= 10) {
      v.require(prr <= ring, tag + " (prr <= ring)");
      v.require(slt <= ring, tag + " (slt <= ring)");
    } else {
      v.notes.push_back("info " + tag);
    }
  }
  const double took = seconds_since(t0);
  v.require(took < 30.0, "runtime " + fmt(took) + " s (< 30 s)");
  emit(6, "direction of effect, P=48 one-late", v);
}

void criterion7() {
  Verdict v;
  const std::size_t p = 4;
  const int iterations = 25;
  auto group = InProcTransport::create_group(p);
  std::vector<std::vector<AccuracySample>> samples(p);
  on_ranks(group, [&](Rank r, Transport& t) {
    Monitor mon(t);
    std::mt19937_64 rng(700 + r);
    std::uniform_int_distribution<int> work(100, 1000);
    for (int it = 0; it < iterations; ++it) {
      const int ms = work(rng);
      t.barrier();
      const auto epoch = Clock::now();
      mon.phase_start(epoch);
      std::this_thread::sleep_until(epoch + std::chrono::microseconds(500 * ms));
      mon.edge(0.5);
      std::this_thread::sleep_until(epoch + Millis(ms));
      mon.phase_end();
    }
    t.barrier();
    samples[r] = mon.accuracy_samples();
  });
  std::vector<AccuracySample> all;
  for (auto& s : samples) all.insert(all.end(), s.begin(), s.end());
  const auto stats = summarize_accuracy(all);
  v.require(stats.count == p * iterations, std::to_string(stats.count) + " estimates collected");
  v.require(stats.fraction_within_15pct >= 0.95,
            fmt(100.0 * stats.fraction_within_15pct) + "% within 15% (mean error " +
                fmt(100.0 * stats.mean_relative_error) + "%, max " + fmt(100.0 * stats.max_relative_error) + "%)");
  emit(7, "monitor accuracy", v);
}

bool well_formed_csv(const std::string& path, std::size_t ranks, std::size_t iterations, std::string& why) {
  std::ifstream in(path);
  if (!in) {
    why = "missing " + path;
    return false;
  }
  std::string line;
  std::getline(in, line);
  if (line != "iteration,rank,arrival_ms,finish_ms,elapsed_ms,mean_elapsed_ms") {
    why = "bad header in " + path;
    return false;
  }
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream s(line);
    std::string field;
    std::vector<double> values;
    while (std::getline(s, field, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        why = "non-numeric field '" + field + "' in " + path;
        return false;
      }
    }
    if (values.size() != 6 || values[1] >= static_cast<double>(ranks) || values[4] < 0.0 ||
        std::abs(values[3] - values[2] - values[4]) > 0.01) {
      why = "inconsistent row '" + line + "' in " + path;
      return false;
    }
    ++rows;
  }
  if (rows != ranks * iterations) {
    why = path + " has " + std::to_string(rows) + " rows, expected " + std::to_string(ranks * iterations);
    return false;
  }
  return true;
}

void criterion8() {
  const auto t0 = Wall::now();
  Verdict v;
  const auto dir = std::filesystem::temp_directory_path() / ("papred-acceptance-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto out = (dir / "bench.csv").string();
  const std::string cmd = std::string(PAPRED_CLI_PATH) +
                          " bench --algorithm ring,linear,rabenseifner,slt,prr --ranks 4 --size 131072 --iters 64"
                          " --mode one-late --max-delay 10 --seed 8 --out " + out + " 2>&1";
  std::string output;
  int status = -1;
  if (FILE* pipe = ::popen(cmd.c_str(), "r")) {
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe)) output += buf;
    status = ::pclose(pipe);
  }
  v.require(status == 0, "papred bench exit status " + std::to_string(status) +
                             " (non-zero would mean a correctness or transport failure)");
  for (const char* alg : {"ring", "linear", "rabenseifner", "slt", "prr"}) {
    std::string why;
    const bool ok = well_formed_csv(csv_path_for(out, parse_algorithm(alg), true), 4, 64, why);
    v.require(ok, std::string(alg) + ": " + (ok ? "64 iterations x 4 ranks, well-formed" : why));
  }
  std::istringstream lines(output);
  std::string line;
  while (std::getline(lines, line)) v.notes.push_back("     | " + line);
  const double took = seconds_since(t0);
  v.require(took < 300.0, "runtime " + fmt(took) + " s (< 5 min)");
  std::filesystem::remove_all(dir);
  emit(8, "live benchmark smoke over TCP loopback", v);
}

}  // namespace

int main() {
  const std::vector<void (*)()> criteria{criterion1, criterion2, criterion3, criterion4,
                                         criterion5, criterion6, criterion7, criterion8};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      std::cout << "FAIL criterion " << i + 1 << ": threw " << e.what() << '\n';
      ++failures;
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}
