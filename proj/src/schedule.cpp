#include "papred/schedule.hpp"

#include <algorithm>
#include <bit>
#include <numeric>
#include <sstream>

#include "papred/errors.hpp"

namespace papred {

namespace {

std::uint32_t mod_sub(std::uint32_t a, std::uint32_t b, std::uint32_t p) {
  return static_cast<std::uint32_t>((a + p - (b % p)) % p);
}

void require_ranks(std::size_t ranks, const char* who) {
  if (ranks < 2) throw InvalidArgument(std::string(who) + ": need at least 2 ranks");
}

Step send(std::uint32_t segment, std::uint32_t peer, Phase phase) {
  return Step{StepKind::send_segment, segment, peer, phase};
}
Step recv_reduce(std::uint32_t segment, std::uint32_t peer, Phase phase) {
  return Step{StepKind::recv_reduce, segment, peer, phase};
}
Step recv_override(std::uint32_t segment, std::uint32_t peer, Phase phase) {
  return Step{StepKind::recv_override, segment, peer, phase};
}

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::ring: return "ring";
    case Algorithm::linear: return "linear";
    case Algorithm::rabenseifner: return "rabenseifner";
    case Algorithm::slt: return "slt";
    case Algorithm::prr: return "prr";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "ring") return Algorithm::ring;
  if (name == "linear") return Algorithm::linear;
  if (name == "rabenseifner") return Algorithm::rabenseifner;
  if (name == "slt") return Algorithm::slt;
  if (name == "prr") return Algorithm::prr;
  throw InvalidArgument("unknown algorithm: " + std::string(name));
}

bool is_pap_aware(Algorithm algorithm) {
  return algorithm == Algorithm::slt || algorithm == Algorithm::prr;
}

std::string_view to_string(StepKind kind) {
  switch (kind) {
    case StepKind::send_segment: return "send";
    case StepKind::recv_reduce: return "recv-reduce";
    case StepKind::recv_override: return "recv-override";
  }
  return "?";
}

std::string_view to_string(Phase phase) {
  return phase == Phase::reduce ? "reduce" : "override";
}

SortedAssignment SortedAssignment::identity(std::size_t ranks) {
  SortedAssignment a;
  a.new_id_of.resize(ranks);
  a.old_rank_of.resize(ranks);
  std::iota(a.new_id_of.begin(), a.new_id_of.end(), 0u);
  std::iota(a.old_rank_of.begin(), a.old_rank_of.end(), 0u);
  return a;
}

bool SortedAssignment::is_identity() const {
  for (std::size_t i = 0; i < new_id_of.size(); ++i) {
    if (new_id_of[i] != i) return false;
  }
  return true;
}

SortedAssignment sort_by_arrival(std::span<const Seconds> arrivals) {
  const std::size_t p = arrivals.size();
  SortedAssignment a;
  a.old_rank_of.resize(p);
  std::iota(a.old_rank_of.begin(), a.old_rank_of.end(), 0u);
  std::stable_sort(a.old_rank_of.begin(), a.old_rank_of.end(),
                   [&](Rank x, Rank y) { return arrivals[x] < arrivals[y]; });
  a.new_id_of.resize(p);
  for (std::size_t id = 0; id < p; ++id) a.new_id_of[a.old_rank_of[id]] = static_cast<std::uint32_t>(id);
  return a;
}

std::vector<Seconds> sorted_arrivals(std::span<const Seconds> arrivals,
                                     const SortedAssignment& assignment) {
  std::vector<Seconds> out(arrivals.size());
  for (std::size_t id = 0; id < out.size(); ++id) out[id] = arrivals[assignment.old_rank_of.at(id)];
  return out;
}

std::vector<std::uint32_t> prr_presteps(std::span<const Seconds> sorted, Seconds tau) {
  if (!(tau > 0.0)) throw InvalidArgument("prr_presteps: tau must be positive");
  const std::size_t p = sorted.size();
  if (p < 2) throw InvalidArgument("prr_presteps: need at least 2 ranks");
  if (!std::is_sorted(sorted.begin(), sorted.end())) {
    throw InvalidArgument("prr_presteps: arrivals must be in non-decreasing (new id) order");
  }
  std::vector<std::uint32_t> k(p, 0);
  const Seconds last = sorted[p - 1];
  for (std::size_t i = p - 1; i-- > 0;) {
    const auto next = k[i + 1];
    k[i] = (last - sorted[i + 1] >= static_cast<double>(next + 1) * tau) ? next + 1 : next;
  }
  return k;
}

SegmentOwners prr_segment_owners(std::span<const std::uint32_t> presteps) {
  const std::size_t p = presteps.size();
  SegmentOwners owners;
  owners.first_sender.resize(p);
  owners.last_reducer.resize(p);
  // Advance until the pre-steps of rank i reach segment j. k_{P-1} = 0
  // guarantees termination at i = P-1 at the latest.
  std::size_t i = 0;
  for (std::size_t j = 0; j < p; ++j) {
    while (i + presteps[i] < j) ++i;
    owners.first_sender[j] = static_cast<std::uint32_t>(i);
    owners.last_reducer[j] = static_cast<std::uint32_t>((i + p - 1) % p);
  }
  return owners;
}

PrrPlan make_prr_plan(std::span<const std::uint32_t> presteps) {
  PrrPlan plan;
  plan.presteps.assign(presteps.begin(), presteps.end());
  check_prr_plan(PrrPlan{plan.presteps, {}, {}, {}});
  auto owners = prr_segment_owners(presteps);
  plan.first_sender = std::move(owners.first_sender);
  plan.last_reducer = std::move(owners.last_reducer);
  const std::size_t p = presteps.size();
  plan.start_segment.resize(p);
  for (std::size_t id = 0; id < p; ++id) {
    plan.start_segment[id] = static_cast<std::uint32_t>((id + presteps[id]) % p);
  }
  return plan;
}

void check_prr_plan(const PrrPlan& plan) {
  const std::size_t p = plan.presteps.size();
  if (p < 2) throw InvalidArgument("prr plan: need at least 2 ranks");
  const auto& k = plan.presteps;
  if (k[p - 1] != 0) throw InvalidArgument("prr plan: k_{P-1} must be 0");
  for (std::size_t i = 0; i + 1 < p; ++i) {
    if (k[i] < k[i + 1] || k[i] - k[i + 1] > 1) {
      throw InvalidArgument("prr plan: pre-steps must be non-increasing with steps of at most 1 (at id " +
                            std::to_string(i) + ")");
    }
    if (k[i] > p - 1) throw InvalidArgument("prr plan: pre-step count exceeds P-1");
  }
  const bool has_owners = !plan.first_sender.empty() || !plan.last_reducer.empty() ||
                          !plan.start_segment.empty();
  if (!has_owners) return;
  if (plan.first_sender.size() != p || plan.last_reducer.size() != p ||
      plan.start_segment.size() != p) {
    throw InvalidArgument("prr plan: owner vectors must have P entries");
  }
  const auto expected = prr_segment_owners(k);
  for (std::size_t j = 0; j < p; ++j) {
    if (plan.first_sender[j] != expected.first_sender[j]) {
      throw InvalidArgument("prr plan: first sender of segment " + std::to_string(j) +
                            " inconsistent with pre-steps");
    }
    if (plan.last_reducer[j] != (plan.first_sender[j] + p - 1) % p) {
      throw InvalidArgument("prr plan: rp_j must equal (sp_j + P - 1) mod P");
    }
    if (plan.start_segment[j] != (j + k[j]) % p) {
      throw InvalidArgument("prr plan: start segment of id " + std::to_string(j) + " is not id + k_id");
    }
  }
}

Schedule ring_schedule(std::size_t ranks) {
  require_ranks(ranks, "ring_schedule");
  const auto p = static_cast<std::uint32_t>(ranks);
  Schedule s;
  s.algorithm = Algorithm::ring;
  s.assignment = SortedAssignment::identity(ranks);
  s.steps.resize(ranks);
  for (std::uint32_t i = 0; i < p; ++i) {
    const std::uint32_t next = (i + 1) % p;
    const std::uint32_t prev = (i + p - 1) % p;
    auto& prog = s.steps[i];
    for (std::uint32_t r = 0; r + 1 < p; ++r) {
      prog.push_back(send(mod_sub(i, r, p), next, Phase::reduce));
      prog.push_back(recv_reduce(mod_sub(i, r + 1, p), prev, Phase::reduce));
    }
    for (std::uint32_t r = 0; r + 1 < p; ++r) {
      prog.push_back(send(mod_sub(i + 1, r, p), next, Phase::override));
      prog.push_back(recv_override(mod_sub(i, r, p), prev, Phase::override));
    }
  }
  return s;
}

// Pipelined linear tree over new ids. Reduce loop: every segment flows
// 0 -> 1 -> ... -> P-1 and the fully reduced copy wraps back to id 0. Override
// loop: id 0 takes the result from P-1 and it is forwarded down to P-1.
Schedule slt_schedule(const SortedAssignment& assignment) {
  const std::size_t ranks = assignment.size();
  require_ranks(ranks, "slt_schedule");
  const auto p = static_cast<std::uint32_t>(ranks);
  Schedule s;
  s.algorithm = Algorithm::slt;
  s.assignment = assignment;
  s.steps.resize(ranks);
  for (std::uint32_t id = 0; id < p; ++id) {
    auto& prog = s.steps[id];
    const std::uint32_t next = (id + 1) % p;
    for (std::uint32_t seg = 0; seg < p; ++seg) {
      if (id != 0) prog.push_back(recv_reduce(seg, id - 1, Phase::reduce));
      prog.push_back(send(seg, next, Phase::reduce));
    }
    for (std::uint32_t seg = 0; seg < p; ++seg) {
      if (id == 0) {
        prog.push_back(recv_override(seg, p - 1, Phase::reduce));
      } else {
        prog.push_back(recv_override(seg, id - 1, Phase::override));
      }
      if (id + 1 < p) prog.push_back(send(seg, id + 1, Phase::override));
    }
  }
  return s;
}

Schedule linear_schedule(std::size_t ranks) {
  require_ranks(ranks, "linear_schedule");
  Schedule s = slt_schedule(SortedAssignment::identity(ranks));
  s.algorithm = Algorithm::linear;
  return s;
}

Schedule prr_schedule(const PrrPlan& plan) {
  return prr_schedule(plan, SortedAssignment::identity(plan.size()));
}

Schedule prr_schedule(const PrrPlan& plan, const SortedAssignment& assignment) {
  check_prr_plan(plan);
  if (plan.first_sender.size() != plan.size()) {
    throw InvalidArgument("prr_schedule: plan has no segment owners");
  }
  const std::size_t ranks = plan.size();
  if (assignment.size() != ranks) throw InvalidArgument("prr_schedule: assignment size mismatch");
  const auto p = static_cast<std::uint32_t>(ranks);
  const auto& sp = plan.first_sender;
  const auto& rp = plan.last_reducer;

  Schedule s;
  s.algorithm = Algorithm::prr;
  s.assignment = assignment;
  s.steps.resize(ranks);

  // Segments each id finally reduces, in the order it finishes them.
  std::vector<std::vector<std::uint32_t>> finals(ranks);

  for (std::uint32_t id = 0; id < p; ++id) {
    auto& prog = s.steps[id];
    const std::uint32_t next = (id + 1) % p;
    const std::uint32_t prev = (id + p - 1) % p;
    std::uint32_t si = plan.start_segment[id];
    for (std::uint32_t iter = 0; iter < p; ++iter) {
      if (sp[si] != id) prog.push_back(recv_reduce(si, prev, Phase::reduce));
      if (rp[si] != id) {
        prog.push_back(send(si, next, Phase::reduce));
      } else {
        // Final value: start its distribution right away.
        prog.push_back(send(si, next, Phase::override));
        finals[id].push_back(si);
      }
      si = (si + p - 1) % p;
    }
  }

  // Finals arrive in ring-distance order: those of id-1 first, then id-2, ...
  for (std::uint32_t id = 0; id < p; ++id) {
    auto& prog = s.steps[id];
    const std::uint32_t next = (id + 1) % p;
    const std::uint32_t prev = (id + p - 1) % p;
    for (std::uint32_t d = 1; d < p; ++d) {
      for (std::uint32_t seg : finals[(id + p - d) % p]) {
        prog.push_back(recv_override(seg, prev, Phase::override));
        if ((rp[seg] + p - 1) % p != id) prog.push_back(send(seg, next, Phase::override));
      }
    }
  }
  return s;
}

// Recursive halving reduce-scatter followed by recursive doubling allgather.
// After the halving rounds new id r owns segment r.
Schedule rabenseifner_schedule(std::size_t ranks) {
  require_ranks(ranks, "rabenseifner_schedule");
  if (!std::has_single_bit(ranks)) {
    throw UnsupportedTopology("rabenseifner_schedule: P=" + std::to_string(ranks) +
                              " is not a power of two");
  }
  const auto p = static_cast<std::uint32_t>(ranks);
  Schedule s;
  s.algorithm = Algorithm::rabenseifner;
  s.assignment = SortedAssignment::identity(ranks);
  s.steps.resize(ranks);
  for (std::uint32_t id = 0; id < p; ++id) {
    auto& prog = s.steps[id];
    std::uint32_t lo = 0, hi = p;
    for (std::uint32_t mask = p / 2; mask >= 1; mask /= 2) {
      const std::uint32_t partner = id ^ mask;
      const std::uint32_t mid = lo + (hi - lo) / 2;
      const bool keep_low = (id & mask) == 0;
      const std::uint32_t give_lo = keep_low ? mid : lo, give_hi = keep_low ? hi : mid;
      const std::uint32_t keep_lo = keep_low ? lo : mid, keep_hi = keep_low ? mid : hi;
      for (std::uint32_t seg = give_lo; seg < give_hi; ++seg) prog.push_back(send(seg, partner, Phase::reduce));
      for (std::uint32_t seg = keep_lo; seg < keep_hi; ++seg) {
        prog.push_back(recv_reduce(seg, partner, Phase::reduce));
      }
      lo = keep_lo;
      hi = keep_hi;
    }
    for (std::uint32_t mask = 1; mask < p; mask *= 2) {
      const std::uint32_t partner = id ^ mask;
      const std::uint32_t width = hi - lo;
      const std::uint32_t partner_lo = (id & mask) ? lo - width : hi;
      for (std::uint32_t seg = lo; seg < hi; ++seg) prog.push_back(send(seg, partner, Phase::override));
      for (std::uint32_t seg = partner_lo; seg < partner_lo + width; ++seg) {
        prog.push_back(recv_override(seg, partner, Phase::override));
      }
      lo = std::min(lo, partner_lo);
      hi = lo + 2 * width;
    }
  }
  return s;
}

Schedule build_schedule(Algorithm algorithm, std::size_t ranks,
                        std::optional<std::span<const Seconds>> arrivals, Seconds tau) {
  if (arrivals && arrivals->size() != ranks) {
    throw InvalidArgument("build_schedule: arrival vector has wrong length");
  }
  switch (algorithm) {
    case Algorithm::ring: return ring_schedule(ranks);
    case Algorithm::linear: return linear_schedule(ranks);
    case Algorithm::rabenseifner: return rabenseifner_schedule(ranks);
    case Algorithm::slt: {
      require_ranks(ranks, "slt_schedule");
      return slt_schedule(arrivals ? sort_by_arrival(*arrivals) : SortedAssignment::identity(ranks));
    }
    case Algorithm::prr: {
      require_ranks(ranks, "prr_schedule");
      if (!arrivals) {
        return prr_schedule(make_prr_plan(std::vector<std::uint32_t>(ranks, 0)));
      }
      auto assignment = sort_by_arrival(*arrivals);
      const auto sorted = sorted_arrivals(*arrivals, assignment);
      return prr_schedule(make_prr_plan(prr_presteps(sorted, tau)), assignment);
    }
  }
  throw InvalidArgument("build_schedule: unknown algorithm");
}

std::vector<std::vector<Step>> relabel(const Schedule& schedule, const SortedAssignment& assignment) {
  if (assignment.size() != schedule.ranks()) throw InvalidArgument("relabel: size mismatch");
  std::vector<std::vector<Step>> out(schedule.ranks());
  for (std::size_t id = 0; id < schedule.ranks(); ++id) {
    auto& prog = out[assignment.old_rank_of[id]];
    prog = schedule.steps[id];
    for (auto& step : prog) step.peer = assignment.old_rank_of[step.peer];
  }
  return out;
}

std::vector<std::vector<Step>> in_rank_space(const Schedule& schedule) {
  return relabel(schedule, schedule.assignment);
}

std::vector<StepCounts> count_steps(const Schedule& schedule) {
  std::vector<StepCounts> counts(schedule.ranks());
  for (std::size_t id = 0; id < schedule.ranks(); ++id) {
    for (const auto& step : schedule.steps[id]) {
      if (step.is_send()) {
        ++counts[id].sends;
      } else {
        ++counts[id].receives;
      }
    }
  }
  return counts;
}

std::string dump_schedule(const Schedule& schedule) {
  std::ostringstream out;
  for (std::size_t id = 0; id < schedule.ranks(); ++id) {
    for (const auto& step : schedule.steps[id]) {
      out << id << ',' << to_string(step.phase) << ',' << to_string(step.kind) << ','
          << step.segment << ',' << step.peer << '\n';
    }
  }
  return out.str();
}

}  // namespace papred
