#include <deque>
#include <map>
#include <sstream>
#include <tuple>

#include "papred/schedule.hpp"

namespace papred {

namespace {

using Multiset = std::vector<std::uint32_t>;  // contribution counts per original id

struct ChannelKey {
  std::uint32_t src, dst, segment;
  Phase phase;
  auto operator<=>(const ChannelKey&) const = default;
};

ValidityReport fail(std::string reason, std::optional<std::size_t> rank = std::nullopt,
                    std::optional<std::size_t> step = std::nullopt) {
  return ValidityReport{false, std::move(reason), rank, step};
}

std::string describe(const Step& step) {
  std::ostringstream out;
  out << to_string(step.kind) << " seg " << step.segment << " peer " << step.peer << " phase "
      << to_string(step.phase);
  return out.str();
}

}  // namespace

ValidityReport validate_schedule(const Schedule& schedule) {
  const std::size_t p = schedule.ranks();
  if (p < 2) return fail("schedule has fewer than 2 ranks");
  if (schedule.assignment.new_id_of.size() != p || schedule.assignment.old_rank_of.size() != p) {
    return fail("assignment size does not match the number of programs");
  }
  for (std::size_t r = 0; r < p; ++r) {
    const auto id = schedule.assignment.new_id_of[r];
    if (id >= p || schedule.assignment.old_rank_of[id] != r) return fail("assignment is not a bijection", r);
  }

  for (std::size_t id = 0; id < p; ++id) {
    const auto& prog = schedule.steps[id];
    for (std::size_t s = 0; s < prog.size(); ++s) {
      if (prog[s].peer >= p) return fail("peer out of range: " + describe(prog[s]), id, s);
      if (prog[s].peer == id) return fail("step addresses itself: " + describe(prog[s]), id, s);
      if (prog[s].segment >= p) return fail("segment out of range: " + describe(prog[s]), id, s);
    }
  }

  // state[id][seg] = multiset of contributions currently held
  std::vector<std::vector<Multiset>> state(p, std::vector<Multiset>(p, Multiset(p, 0)));
  for (std::size_t id = 0; id < p; ++id) {
    for (std::size_t seg = 0; seg < p; ++seg) state[id][seg][id] = 1;
  }
  std::map<ChannelKey, std::deque<Multiset>> channels;
  std::vector<std::size_t> pc(p, 0);

  bool progress = true;
  while (progress) {
    progress = false;
    for (std::uint32_t id = 0; id < p; ++id) {
      const auto& prog = schedule.steps[id];
      while (pc[id] < prog.size()) {
        const Step& step = prog[pc[id]];
        if (step.is_send()) {
          channels[ChannelKey{id, step.peer, step.segment, step.phase}].push_back(state[id][step.segment]);
        } else {
          auto it = channels.find(ChannelKey{step.peer, id, step.segment, step.phase});
          if (it == channels.end() || it->second.empty()) break;
          Multiset incoming = std::move(it->second.front());
          it->second.pop_front();
          auto& held = state[id][step.segment];
          if (step.kind == StepKind::recv_reduce) {
            for (std::size_t c = 0; c < p; ++c) held[c] += incoming[c];
          } else {
            held = std::move(incoming);
          }
        }
        ++pc[id];
        progress = true;
      }
    }
  }

  for (std::size_t id = 0; id < p; ++id) {
    if (pc[id] < schedule.steps[id].size()) {
      const Step& step = schedule.steps[id][pc[id]];
      return fail("unmatched receive (no send ever reaches it): " + describe(step), id, pc[id]);
    }
  }
  for (const auto& [key, queue] : channels) {
    if (!queue.empty()) {
      std::ostringstream out;
      out << "unmatched send " << key.src << "->" << key.dst << " seg " << key.segment << " phase "
          << to_string(key.phase);
      return fail(out.str(), key.src);
    }
  }
  for (std::size_t id = 0; id < p; ++id) {
    for (std::size_t seg = 0; seg < p; ++seg) {
      for (std::size_t c = 0; c < p; ++c) {
        if (state[id][seg][c] != 1) {
          std::ostringstream out;
          out << "final segment " << seg << " holds contribution " << c << " x" << state[id][seg][c];
          return fail(out.str(), id);
        }
      }
    }
  }
  return ValidityReport{};
}

}  // namespace papred
