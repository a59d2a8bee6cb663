#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace papred {

enum class MsgType : std::uint8_t { data = 0, monitor_estimate = 1, warmup = 2, barrier = 3 };
enum class PhaseTag : std::uint8_t { reduce = 0, override = 1, control = 2 };

inline constexpr std::array<std::uint8_t, 4> kFrameMagic{'P', 'A', 'P', 'R'};
inline constexpr std::size_t kFrameHeaderSize = 18;

struct Frame {
  MsgType type = MsgType::data;
  PhaseTag phase = PhaseTag::reduce;
  std::uint32_t iteration = 0;
  std::uint32_t segment = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct FrameHeader {
  MsgType type = MsgType::data;
  PhaseTag phase = PhaseTag::reduce;
  std::uint32_t iteration = 0;
  std::uint32_t segment = 0;
  std::uint32_t payload_length = 0;
};

void encode_header(const Frame& frame, std::span<std::uint8_t, kFrameHeaderSize> out);
/// Throws ProtocolError on bad magic or unknown type/phase values.
FrameHeader decode_header(std::span<const std::uint8_t, kFrameHeaderSize> in);

std::vector<std::uint8_t> encode_frame(const Frame& frame);
/// Decodes exactly one frame; trailing or missing bytes are a ProtocolError.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Little-endian helpers shared with payload codecs.
void put_u32(std::uint8_t* out, std::uint32_t value);
void put_u64(std::uint8_t* out, std::uint64_t value);
std::uint32_t get_u32(const std::uint8_t* in);
std::uint64_t get_u64(const std::uint8_t* in);

}  // namespace papred
