#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace papred {

/// Process index within a communicator, in [0, P).
using Rank = std::uint32_t;

/// Seconds on a monotonic clock, relative to a per-iteration epoch.
using Seconds = double;

enum class ReduceOp : std::uint8_t { sum, max, min };

std::string_view to_string(ReduceOp op);
ReduceOp parse_reduce_op(std::string_view name);

/// Split of a vector into P contiguous, near-equal segments.
///
/// offsets has P+1 entries; segment j covers [offsets[j], offsets[j+1]).
/// The first (length mod P) segments are one element longer.
class SegmentPartition {
 public:
  SegmentPartition() = default;
  explicit SegmentPartition(std::vector<std::size_t> offsets) : offsets_(std::move(offsets)) {}

  std::size_t count() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t begin(std::size_t segment) const { return offsets_.at(segment); }
  std::size_t end(std::size_t segment) const { return offsets_.at(segment + 1); }
  std::size_t length(std::size_t segment) const { return end(segment) - begin(segment); }
  std::size_t total() const { return offsets_.empty() ? 0 : offsets_.back(); }
  const std::vector<std::size_t>& offsets() const { return offsets_; }

  template <typename T>
  std::span<T> slice(std::span<T> data, std::size_t segment) const {
    return data.subspan(begin(segment), length(segment));
  }

 private:
  std::vector<std::size_t> offsets_;
};

SegmentPartition partition_segments(std::size_t length, std::size_t ranks);

/// dst[j] = op(dst[j], src[j]).
void reduce_into(std::span<float> dst, std::span<const float> src, ReduceOp op);

/// Per-rank arrival times a_i.
struct PapVector {
  std::vector<Seconds> arrivals;
};

/// Per-rank finish times f_i.
struct PepVector {
  std::vector<Seconds> finishes;
};

struct ElapsedStats {
  std::vector<Seconds> elapsed;
  Seconds mean = 0.0;
  double imbalance_factor = 0.0;
};

/// e_i = f_i - a_i, their mean, and the arrival spread in units of delta.
ElapsedStats elapsed_stats(const PapVector& pap, const PepVector& pep, Seconds delta);

struct ElapsedBounds {
  Seconds lower = 0.0;
  Seconds upper = 0.0;
  /// Best possible reduction of the mean elapsed time (upper - lower).
  Seconds max_saving() const { return upper - lower; }
};

/// Bounds on the mean elapsed time when a single rank arrives at a_late and
/// all others at a_others. delta: point-to-point delivery of the reduced data;
/// balanced_time: all-reduce time under a perfectly balanced PAP.
ElapsedBounds elapsed_bounds(Seconds a_late, Seconds a_others, Seconds delta,
                             Seconds balanced_time);

}  // namespace papred
