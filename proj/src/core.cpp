#include "papred/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "papred/errors.hpp"

namespace papred {

std::string_view to_string(ReduceOp op) {
  switch (op) {
    case ReduceOp::sum: return "sum";
    case ReduceOp::max: return "max";
    case ReduceOp::min: return "min";
  }
  return "?";
}

ReduceOp parse_reduce_op(std::string_view name) {
  if (name == "sum") return ReduceOp::sum;
  if (name == "max") return ReduceOp::max;
  if (name == "min") return ReduceOp::min;
  throw InvalidArgument("unknown reduce operator: " + std::string(name));
}

SegmentPartition partition_segments(std::size_t length, std::size_t ranks) {
  if (ranks < 2) throw InvalidArgument("partition_segments: need at least 2 ranks");
  if (length < ranks) {
    throw InvalidArgument("partition_segments: length " + std::to_string(length) +
                          " is smaller than rank count " + std::to_string(ranks));
  }
  const std::size_t base = length / ranks;
  const std::size_t extra = length % ranks;
  std::vector<std::size_t> offsets(ranks + 1, 0);
  for (std::size_t j = 0; j < ranks; ++j) {
    offsets[j + 1] = offsets[j] + base + (j < extra ? 1 : 0);
  }
  return SegmentPartition(std::move(offsets));
}

void reduce_into(std::span<float> dst, std::span<const float> src, ReduceOp op) {
  if (dst.size() != src.size()) {
    throw InvalidArgument("reduce_into: length mismatch (" + std::to_string(dst.size()) +
                          " vs " + std::to_string(src.size()) + ")");
  }
  const std::size_t n = dst.size();
  switch (op) {
    case ReduceOp::sum:
      for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
      break;
    case ReduceOp::max:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::max(dst[i], src[i]);
      break;
    case ReduceOp::min:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::min(dst[i], src[i]);
      break;
  }
}

ElapsedStats elapsed_stats(const PapVector& pap, const PepVector& pep, Seconds delta) {
  if (pap.arrivals.size() != pep.finishes.size()) {
    throw InvalidArgument("elapsed_stats: PAP and PEP differ in length");
  }
  if (pap.arrivals.empty()) throw InvalidArgument("elapsed_stats: empty pattern");
  if (!(delta > 0.0)) throw InvalidArgument("elapsed_stats: delta must be positive");

  ElapsedStats stats;
  stats.elapsed.reserve(pap.arrivals.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pap.arrivals.size(); ++i) {
    const Seconds e = pep.finishes[i] - pap.arrivals[i];
    if (e < 0.0) {
      throw InvalidMeasurement("elapsed_stats: rank " + std::to_string(i) +
                               " finishes before it arrives");
    }
    stats.elapsed.push_back(e);
    sum += e;
  }
  stats.mean = sum / static_cast<double>(stats.elapsed.size());
  const auto [lo, hi] = std::minmax_element(pap.arrivals.begin(), pap.arrivals.end());
  stats.imbalance_factor = (*hi - *lo) / delta;
  return stats;
}

ElapsedBounds elapsed_bounds(Seconds a_late, Seconds a_others, Seconds delta,
                             Seconds balanced_time) {
  if (!(delta > 0.0)) throw InvalidArgument("elapsed_bounds: delta must be positive");
  if (balanced_time < delta) {
    throw InvalidArgument("elapsed_bounds: balanced time must be >= delta");
  }
  if (a_late < a_others) throw InvalidArgument("elapsed_bounds: late arrival precedes the others");
  const Seconds spread = a_late - a_others;
  return ElapsedBounds{spread + delta, spread + balanced_time};
}

}  // namespace papred
