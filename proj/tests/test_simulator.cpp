#include <doctest.h>

#include <random>
#include <sstream>

#include "papred/errors.hpp"
#include "papred/simulator.hpp"

using namespace papred;

namespace {
std::span<const double> sp(const std::vector<double>& v) { return v; }
}  // namespace

TEST_CASE("simulate: linear and sorted linear tree, rank 0 late by 4 tau") {
  const std::vector<double> a{4, 0, 0, 0};
  // Balanced pipeline is 3P-2 = 10 tau; the late rank heads it, so +4.
  CHECK(simulate(linear_schedule(4), a).total == 14.0);
  const auto slt = build_schedule(Algorithm::slt, 4, sp(a));
  CHECK(slt.assignment.new_id_of[0] == 3);
  CHECK(simulate(slt, a).total == 12.0);
  CHECK(simulate(linear_schedule(4), std::vector<double>(4, 0.0)).total == 10.0);
}

TEST_CASE("simulate: ring and pre-reduced ring, rank 0 late by 2 tau") {
  const std::vector<double> a{2, 0, 0, 0};
  CHECK(simulate(ring_schedule(4), a).total == 8.0);
  // The late rank owns the start of one segment chain of 2P-2 hops, so
  // PRR cannot finish before 2 + 6 tau under this model.
  const auto prr = build_schedule(Algorithm::prr, 4, sp(a), 1.0);
  const auto tl = simulate(prr, a);
  CHECK(tl.total == 8.0);
  CHECK(tl.mean_elapsed < simulate(ring_schedule(4), a).mean_elapsed);
}

TEST_CASE("simulate: balanced ring takes 2P-2 tau") {
  for (std::size_t p = 2; p <= 16; ++p) {
    CHECK(simulate(ring_schedule(p), std::vector<double>(p, 0.0)).total == static_cast<double>(2 * p - 2));
  }
}

TEST_CASE("simulate: balanced totals do not depend on labels") {
  for (std::size_t p : {3u, 4u, 7u}) {
    const std::vector<double> zero(p, 0.0);
    std::vector<double> perm_key(p);
    for (std::size_t i = 0; i < p; ++i) perm_key[i] = static_cast<double>((i * 5 + 2) % p);
    const auto order = sort_by_arrival(perm_key);
    REQUIRE_FALSE(order.is_identity());
    CHECK(simulate(slt_schedule(order), zero).total == simulate(linear_schedule(p), zero).total);
    std::vector<double> late(p, 0.0);
    late.back() = 3.0;
    const auto plan = make_prr_plan(prr_presteps(late, 1.0));
    CHECK(simulate(prr_schedule(plan, order), zero).total == simulate(prr_schedule(plan), zero).total);
  }
}

TEST_CASE("simulate: timeline invariants and provenance cross-check") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t p = 2 + rng() % 10;
    std::vector<double> a(p);
    for (auto& x : a) x = static_cast<double>(rng() % (3 * p));
    for (auto alg : {Algorithm::ring, Algorithm::linear, Algorithm::slt, Algorithm::prr}) {
      const auto s = build_schedule(alg, p, sp(a), 1.0);
      const auto tl = simulate(s, a);
      CHECK(bool(validate_schedule(s)) == tl.provenance_ok);
      for (std::size_t r = 0; r < p; ++r) {
        double last = a[r];
        for (const auto& e : tl.events[r]) {
          CHECK(e.start >= a[r]);
          CHECK(e.start >= last - 1e-9);
          last = e.step.is_send() ? e.start : e.end;
        }
        CHECK(tl.finishes[r] >= a[r]);
      }
    }
  }
}

TEST_CASE("simulate: pre-reduced ring never loses to ring for one late rank") {
  for (std::size_t p = 2; p <= 16; ++p) {
    for (std::size_t late = 0; late < p; ++late) {
      for (double d = 1; d <= 3.0 * static_cast<double>(p); d += 1) {
        std::vector<double> a(p, 0.0);
        a[late] = d;
        const auto ring = simulate(ring_schedule(p), a);
        const auto prr = simulate(build_schedule(Algorithm::prr, p, sp(a), 1.0), a);
        REQUIRE_MESSAGE(prr.total <= ring.total, "P=", p, " late=", late, " d=", d);
        CHECK(prr.mean_elapsed <= ring.mean_elapsed + 1e-9);
      }
    }
  }
}

TEST_CASE("simulate: deadlock and provenance failures are reported") {
  auto s = ring_schedule(3);
  s.steps[0].erase(s.steps[0].begin());
  try {
    simulate(s, std::vector<double>(3, 0.0));
    FAIL("expected deadlock");
  } catch (const DeadlockError& e) {
    CHECK(std::string(e.what()).find("blocked") != std::string::npos);
  }
  auto dup = ring_schedule(3);
  dup.steps[1][1].kind = StepKind::recv_override;
  const auto tl = simulate(dup, std::vector<double>(3, 0.0));
  CHECK_FALSE(tl.provenance_ok);
  CHECK_THROWS_AS(simulate(ring_schedule(3), std::vector<double>(2, 0.0)), InvalidArgument);
}

TEST_CASE("make_pap") {
  CHECK(make_pap(DelayMode::one_late, 4, 7, 0) == std::vector<double>{0, 7, 0, 0});
  const auto r1 = make_pap(DelayMode::rand_late, 6, 10, 3);
  CHECK(r1 == make_pap(DelayMode::rand_late, 6, 10, 3));
  CHECK(r1 != make_pap(DelayMode::rand_late, 6, 10, 4));
  for (double x : r1) CHECK((x >= 0.0 && x <= 10.0));
  CHECK(parse_delay_mode("rand-late") == DelayMode::rand_late);
  CHECK_THROWS_AS(parse_delay_mode("late"), InvalidArgument);
}

TEST_CASE("sweep: degeneracy, direction and determinism") {
  SweepConfig c;
  c.algorithms = {Algorithm::ring, Algorithm::prr, Algorithm::rabenseifner};
  c.ranks = {6, 8};
  c.delays = {0, 10};
  const auto rows = sweep(c);
  for (const auto& r : rows) {
    if (r.algorithm == Algorithm::prr && r.delay == 0) CHECK(r.speedup_vs_ring == 1.0);
    if (r.algorithm == Algorithm::ring) CHECK(r.speedup_vs_ring == 1.0);
    CHECK_FALSE((r.algorithm == Algorithm::rabenseifner && r.ranks == 6));
  }
  CHECK(rows.size() == 2 * 2 + 2 * 3);

  SweepConfig big;
  big.algorithms = {Algorithm::ring, Algorithm::prr};
  big.ranks = {48};
  big.delays = {48, 96};
  const auto b = sweep(big);
  REQUIRE(b.size() == 4);
  CHECK(b[1].total <= b[0].total);
  CHECK(b[1].mean_elapsed < b[0].mean_elapsed);
  CHECK(b[3].mean_elapsed < b[2].mean_elapsed);

  SweepConfig rnd;
  rnd.algorithms = {Algorithm::ring, Algorithm::slt, Algorithm::prr};
  rnd.ranks = {5, 9};
  rnd.delays = {0, 3, 20};
  rnd.mode = DelayMode::rand_late;
  rnd.seeds = {1, 2, 3};
  rnd.threads = 4;
  std::ostringstream x, y;
  write_sweep_csv(x, sweep(rnd));
  rnd.threads = 1;
  write_sweep_csv(y, sweep(rnd));
  CHECK(x.str() == y.str());
  CHECK(x.str().rfind("algorithm,P,mode,delay_tau,seed,total_tau,mean_elapsed_tau,speedup_vs_ring\n", 0) == 0);
}
