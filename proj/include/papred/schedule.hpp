#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "papred/core.hpp"

namespace papred {

enum class Algorithm : std::uint8_t { ring, linear, rabenseifner, slt, prr };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);
/// True for the algorithms that consume a PAP estimate.
bool is_pap_aware(Algorithm algorithm);

enum class StepKind : std::uint8_t { send_segment, recv_reduce, recv_override };

/// Wire phase of the message a step sends or expects.
enum class Phase : std::uint8_t { reduce = 0, override = 1 };

struct Step {
  StepKind kind = StepKind::send_segment;
  std::uint32_t segment = 0;
  /// Peer in new-id space.
  std::uint32_t peer = 0;
  Phase phase = Phase::reduce;

  bool is_send() const { return kind == StepKind::send_segment; }
  friend bool operator==(const Step&, const Step&) = default;
};

/// Bijection between original ranks and arrival-sorted ids.
struct SortedAssignment {
  std::vector<std::uint32_t> new_id_of;    // rank -> new id
  std::vector<Rank> old_rank_of;           // new id -> rank

  static SortedAssignment identity(std::size_t ranks);
  std::size_t size() const { return new_id_of.size(); }
  bool is_identity() const;
  friend bool operator==(const SortedAssignment&, const SortedAssignment&) = default;
};

/// Stable ascending sort by arrival; ties keep the lower original rank first.
SortedAssignment sort_by_arrival(std::span<const Seconds> arrivals);

/// Arrivals re-indexed by new id.
std::vector<Seconds> sorted_arrivals(std::span<const Seconds> arrivals,
                                     const SortedAssignment& assignment);

struct PrrPlan {
  std::vector<std::uint32_t> presteps;       // k_i
  std::vector<std::uint32_t> first_sender;   // sp_j
  std::vector<std::uint32_t> last_reducer;   // rp_j
  std::vector<std::uint32_t> start_segment;  // (id + k_id) mod P

  std::size_t size() const { return presteps.size(); }
};

/// Pre-step counts from arrivals in new-id order (non-decreasing).
std::vector<std::uint32_t> prr_presteps(std::span<const Seconds> sorted_arrivals, Seconds tau);

struct SegmentOwners {
  std::vector<std::uint32_t> first_sender;
  std::vector<std::uint32_t> last_reducer;
};

SegmentOwners prr_segment_owners(std::span<const std::uint32_t> presteps);

PrrPlan make_prr_plan(std::span<const std::uint32_t> presteps);

/// Throws InvalidArgument describing the first violated plan invariant.
void check_prr_plan(const PrrPlan& plan);

struct Schedule {
  Algorithm algorithm = Algorithm::ring;
  /// steps[id] is the ordered program of the rank with new id `id`.
  std::vector<std::vector<Step>> steps;
  SortedAssignment assignment;

  std::size_t ranks() const { return steps.size(); }
  /// Program of an original rank (peers still in new-id space).
  const std::vector<Step>& program_of(Rank rank) const {
    return steps.at(assignment.new_id_of.at(rank));
  }
  /// Peer of a step translated back to an original rank.
  Rank peer_rank(const Step& step) const { return assignment.old_rank_of.at(step.peer); }
};

Schedule ring_schedule(std::size_t ranks);
Schedule linear_schedule(std::size_t ranks);
Schedule slt_schedule(const SortedAssignment& assignment);
Schedule prr_schedule(const PrrPlan& plan);
Schedule prr_schedule(const PrrPlan& plan, const SortedAssignment& assignment);
Schedule rabenseifner_schedule(std::size_t ranks);

/// Schedule for `algorithm`. slt/prr use `arrivals` (original-rank order) when
/// given, otherwise a balanced pattern (identity order, zero pre-steps).
Schedule build_schedule(Algorithm algorithm, std::size_t ranks,
                        std::optional<std::span<const Seconds>> arrivals = std::nullopt,
                        Seconds tau = 1.0);

/// Programs re-expressed per original rank with original-rank peers.
std::vector<std::vector<Step>> in_rank_space(const Schedule& schedule);

/// Relabel a schedule's programs: new id i becomes assignment.old_rank_of[i].
std::vector<std::vector<Step>> relabel(const Schedule& schedule, const SortedAssignment& assignment);

struct StepCounts {
  std::size_t sends = 0;
  std::size_t receives = 0;
};
std::vector<StepCounts> count_steps(const Schedule& schedule);

struct ValidityReport {
  bool valid = true;
  std::string reason;
  std::optional<std::size_t> rank;  // new id
  std::optional<std::size_t> step;

  explicit operator bool() const { return valid; }
};

/// Symbolic execution over contribution multisets. Each rank starts owning
/// {self} for every segment; receive-reduce adds multisets, receive-override
/// replaces. Valid iff all messages match and every rank ends holding each
/// contribution exactly once for every segment.
ValidityReport validate_schedule(const Schedule& schedule);

/// One `rank,phase,kind,segment,peer` line per step, new ids, program order.
std::string dump_schedule(const Schedule& schedule);

std::string_view to_string(StepKind kind);
std::string_view to_string(Phase phase);

}  // namespace papred
