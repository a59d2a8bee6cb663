#include "papred/engine.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "papred/errors.hpp"

namespace papred {

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

namespace {

constexpr std::uint32_t kCalibrationBit = 0x8000'0000u;
constexpr std::uint32_t kGatherSegment = 0;
constexpr std::uint32_t kBroadcastSegment = 1;

PhaseTag wire_phase(Phase phase) { return phase == Phase::reduce ? PhaseTag::reduce : PhaseTag::override; }

std::uint64_t assignment_digest(const SortedAssignment& a) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (auto id : a.new_id_of) {
    for (int b = 0; b < 4; ++b) {
      h ^= (id >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace

bool PapEstimate::usable() const {
  return complete && !arrivals.empty() && std::all_of(present.begin(), present.end(), [](bool b) { return b; });
}

std::uint64_t to_micros(Seconds s) {
  if (!(s > 0.0)) return 0;
  return static_cast<std::uint64_t>(std::llround(s * 1e6));
}

Seconds from_micros(std::uint64_t us) { return static_cast<Seconds>(us) * 1e-6; }

AllreduceContext::AllreduceContext(Transport& transport, Algorithm algorithm, EngineOptions options)
    : transport_(transport), algorithm_(algorithm), options_(options) {
  if (options_.tau && !(*options_.tau > 0.0)) throw InvalidArgument("tau must be positive");
}

Seconds AllreduceContext::since_epoch(Clock::time_point t) const {
  return std::chrono::duration<double>(t - epoch_).count();
}

Seconds AllreduceContext::tau_for(std::size_t length) {
  if (options_.tau) return *options_.tau;
  if (auto it = tau_cache_.find(length); it != tau_cache_.end()) return it->second;
  const std::size_t p = size();
  Seconds tau = 1e-6;
  if (p > 1) {
    std::vector<float> scratch(length, 1.0f);
    const auto sched = ring_schedule(p);
    transport_.barrier();
    const auto t0 = Clock::now();
    execute_schedule(sched, scratch, ReduceOp::sum, transport_, kCalibrationBit | ++calibration_iteration_);
    const double mine = std::chrono::duration<double>(Clock::now() - t0).count() / static_cast<double>(2 * p - 2);
    const auto all = allgather_doubles(transport_, claim_control_seq(), mine);
    tau = std::max(1e-6, *std::max_element(all.begin(), all.end()));
    // Keep tau on the wire's microsecond grid so every rank agrees bit for bit.
    tau = from_micros(std::max<std::uint64_t>(1, to_micros(tau)));
  }
  tau_cache_[length] = tau;
  return tau;
}

void execute_schedule(const Schedule& schedule, std::span<float> data, ReduceOp op, Transport& transport,
                      std::uint32_t iteration) {
  const std::size_t p = schedule.ranks();
  if (p != transport.size()) throw InvalidArgument("schedule size does not match the transport");
  const auto parts = partition_segments(data.size(), p);
  const Rank me = transport.rank();
  const auto& program = schedule.program_of(me);
  const auto wait = transport.options().send_timeout;

  std::vector<SendTicket> outstanding(p);  // one per destination edge
  std::vector<float> incoming;
  for (const Step& step : program) {
    const Rank peer = schedule.peer_rank(step);
    auto seg = parts.slice(data, step.segment);
    if (step.is_send()) {
      if (outstanding[peer].valid()) outstanding[peer].wait(wait);
      Frame f{MsgType::data, wire_phase(step.phase), iteration, step.segment, {}};
      f.payload.resize(seg.size_bytes());
      std::memcpy(f.payload.data(), seg.data(), seg.size_bytes());
      outstanding[peer] = transport.send(peer, std::move(f));
      continue;
    }
    Frame f = transport.recv(peer, Expect{MsgType::data, wire_phase(step.phase), iteration, step.segment});
    if (f.payload.size() != seg.size_bytes()) {
      throw ProtocolError("segment " + std::to_string(step.segment) + " from rank " + std::to_string(peer) +
                          ": expected " + std::to_string(seg.size_bytes()) + " bytes, got " +
                          std::to_string(f.payload.size()));
    }
    if (step.kind == StepKind::recv_override) {
      std::memcpy(seg.data(), f.payload.data(), f.payload.size());
    } else {
      incoming.resize(seg.size());
      std::memcpy(incoming.data(), f.payload.data(), f.payload.size());
      reduce_into(seg, incoming, op);
    }
  }
  for (auto& t : outstanding) {
    if (t.valid()) t.wait(wait);
  }
}

AllreduceResult allreduce(std::span<float> data, ReduceOp op, AllreduceContext& ctx) {
  AllreduceResult result;
  result.arrival = ctx.since_epoch(Clock::now());
  result.iteration = ctx.claim_iteration();
  const std::size_t p = ctx.size();
  if (p == 1) {
    result.assignment = SortedAssignment::identity(1);
    result.finish = ctx.since_epoch(Clock::now());
    return result;
  }
  if (data.size() < p) {
    throw InvalidArgument("allreduce: vector of " + std::to_string(data.size()) + " elements is shorter than P=" +
                          std::to_string(p));
  }

  const Algorithm alg = ctx.algorithm();
  Schedule schedule;
  if (is_pap_aware(alg)) {
    const Seconds tau = ctx.tau_for(data.size());
    PapEstimate est;
    if (ctx.estimate_source()) {
      est = ctx.estimate_source()->await_estimate(result.iteration, ctx.options().estimate_wait);
    }
    if (est.iteration == result.iteration && est.usable() && est.arrivals.size() == p) {
      result.used_estimate = true;
      schedule = build_schedule(alg, p, std::span<const Seconds>(est.arrivals), tau);
    } else {
      schedule = build_schedule(alg, p, std::nullopt, tau);
    }
  } else {
    schedule = build_schedule(alg, p);
  }
  if (auto report = validate_schedule(schedule); !report) {
    throw InternalError("refusing to run invalid " + std::string(to_string(alg)) + " schedule: " + report.reason);
  }
  result.assignment = schedule.assignment;

  execute_schedule(schedule, data, op, ctx.transport(), result.iteration);
  result.finish = ctx.since_epoch(Clock::now());

  if (ctx.options().verify_assignment && is_pap_aware(alg)) {
    const auto digest = static_cast<double>(assignment_digest(schedule.assignment) >> 12);
    const auto all = allgather_doubles(ctx.transport(), ctx.claim_control_seq(), digest);
    if (std::any_of(all.begin(), all.end(), [&](double d) { return d != digest; })) {
      throw InternalError("ranks derived different sorted assignments in iteration " +
                          std::to_string(result.iteration));
    }
  }
  return result;
}

CorrectnessReport check_correctness(std::span<const float> data, std::span<const std::vector<float>> inputs,
                                    ReduceOp op) {
  CorrectnessReport report;
  if (inputs.empty()) throw InvalidArgument("check_correctness: no inputs");
  for (const auto& in : inputs) {
    if (in.size() != data.size()) throw InvalidArgument("check_correctness: input length mismatch");
  }
  for (std::size_t j = 0; j < data.size(); ++j) {
    double err = 0.0;
    bool bad = false;
    if (op == ReduceOp::sum) {
      double ref = 0.0, magnitude = 0.0;
      for (const auto& in : inputs) {
        ref += in[j];
        magnitude += std::fabs(in[j]);
      }
      const double diff = std::fabs(static_cast<double>(data[j]) - ref);
      err = magnitude > 0.0 ? diff / magnitude : diff;
      bad = !(err <= 1e-5);
    } else {
      float ref = inputs[0][j];
      for (const auto& in : inputs) ref = op == ReduceOp::max ? std::max(ref, in[j]) : std::min(ref, in[j]);
      err = std::fabs(static_cast<double>(data[j]) - ref);
      bad = !(data[j] == ref);
    }
    report.max_error = std::max(report.max_error, err);
    if (bad && report.ok) {
      report.ok = false;
      report.first_bad = j;
    }
  }
  return report;
}

std::vector<std::vector<std::uint8_t>> gather_bytes(Transport& transport, Rank root, std::uint32_t seq,
                                                    std::vector<std::uint8_t> mine) {
  const std::size_t p = transport.size();
  std::vector<std::vector<std::uint8_t>> out;
  if (transport.rank() != root) {
    transport.send(root, Frame{MsgType::data, PhaseTag::control, seq, kGatherSegment, std::move(mine)})
        .wait(transport.options().send_timeout);
    return out;
  }
  out.resize(p);
  out[root] = std::move(mine);
  for (Rank r = 0; r < p; ++r) {
    if (r == root) continue;
    out[r] = transport.recv(r, Expect{MsgType::data, PhaseTag::control, seq, kGatherSegment}).payload;
  }
  return out;
}

std::vector<std::uint8_t> broadcast_bytes(Transport& transport, Rank root, std::uint32_t seq,
                                          std::vector<std::uint8_t> value) {
  const std::size_t p = transport.size();
  if (transport.rank() != root) {
    return transport.recv(root, Expect{MsgType::data, PhaseTag::control, seq, kBroadcastSegment}).payload;
  }
  std::vector<SendTicket> tickets;
  for (Rank r = 0; r < p; ++r) {
    if (r != root) tickets.push_back(transport.send(r, Frame{MsgType::data, PhaseTag::control, seq, kBroadcastSegment, value}));
  }
  for (auto& t : tickets) t.wait(transport.options().send_timeout);
  return value;
}

std::vector<double> allgather_doubles(Transport& transport, std::uint32_t seq, double value) {
  const std::size_t p = transport.size();
  std::vector<std::uint8_t> mine(sizeof(double));
  std::memcpy(mine.data(), &value, sizeof value);
  auto gathered = gather_bytes(transport, 0, seq, std::move(mine));
  std::vector<std::uint8_t> packed;
  if (transport.rank() == 0) {
    for (auto& g : gathered) {
      if (g.size() != sizeof(double)) throw ProtocolError("allgather: bad contribution size");
      packed.insert(packed.end(), g.begin(), g.end());
    }
  }
  packed = broadcast_bytes(transport, 0, seq, std::move(packed));
  if (packed.size() != p * sizeof(double)) throw ProtocolError("allgather: bad broadcast size");
  std::vector<double> out(p);
  std::memcpy(out.data(), packed.data(), packed.size());
  return out;
}

}  // namespace papred
