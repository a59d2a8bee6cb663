#include "papred/frame.hpp"

#include <algorithm>
#include <string>

#include "papred/errors.hpp"

namespace papred {

void put_u32(std::uint8_t* out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::uint8_t>(value >> (8 * i));
}

void put_u64(std::uint8_t* out, std::uint64_t value) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(value >> (8 * i));
}

std::uint32_t get_u32(const std::uint8_t* in) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | in[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | in[i];
  return v;
}

void encode_header(const Frame& frame, std::span<std::uint8_t, kFrameHeaderSize> out) {
  if (frame.payload.size() > UINT32_MAX) throw InvalidArgument("frame payload exceeds 4 GiB");
  std::copy(kFrameMagic.begin(), kFrameMagic.end(), out.begin());
  out[4] = static_cast<std::uint8_t>(frame.type);
  out[5] = static_cast<std::uint8_t>(frame.phase);
  put_u32(out.data() + 6, frame.iteration);
  put_u32(out.data() + 10, frame.segment);
  put_u32(out.data() + 14, static_cast<std::uint32_t>(frame.payload.size()));
}

FrameHeader decode_header(std::span<const std::uint8_t, kFrameHeaderSize> in) {
  if (!std::equal(kFrameMagic.begin(), kFrameMagic.end(), in.begin())) {
    throw ProtocolError("bad frame magic");
  }
  if (in[4] > static_cast<std::uint8_t>(MsgType::barrier)) {
    throw ProtocolError("unknown msg_type " + std::to_string(in[4]));
  }
  if (in[5] > static_cast<std::uint8_t>(PhaseTag::control)) {
    throw ProtocolError("unknown phase_tag " + std::to_string(in[5]));
  }
  FrameHeader h;
  h.type = static_cast<MsgType>(in[4]);
  h.phase = static_cast<PhaseTag>(in[5]);
  h.iteration = get_u32(in.data() + 6);
  h.segment = get_u32(in.data() + 10);
  h.payload_length = get_u32(in.data() + 14);
  return h;
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  std::vector<std::uint8_t> out(kFrameHeaderSize + frame.payload.size());
  encode_header(frame, std::span<std::uint8_t, kFrameHeaderSize>(out.data(), kFrameHeaderSize));
  std::copy(frame.payload.begin(), frame.payload.end(), out.begin() + kFrameHeaderSize);
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) throw ProtocolError("truncated frame header");
  const auto h = decode_header(bytes.first<kFrameHeaderSize>());
  if (bytes.size() != kFrameHeaderSize + h.payload_length) {
    throw ProtocolError("payload_length " + std::to_string(h.payload_length) + " does not match " +
                        std::to_string(bytes.size() - kFrameHeaderSize) + " payload bytes");
  }
  Frame f;
  f.type = h.type;
  f.phase = h.phase;
  f.iteration = h.iteration;
  f.segment = h.segment;
  f.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.end());
  return f;
}

}  // namespace papred
