#include "papred/transport.hpp"

namespace papred {

struct InProcTransport::Hub {
  std::vector<InProcTransport*> members;
};

std::vector<std::shared_ptr<InProcTransport>> InProcTransport::create_group(std::size_t size,
                                                                           TransportOptions options) {
  auto hub = std::make_shared<Hub>();
  std::vector<std::shared_ptr<InProcTransport>> group;
  for (std::size_t r = 0; r < size; ++r) {
    group.push_back(std::shared_ptr<InProcTransport>(
        new InProcTransport(static_cast<Rank>(r), size, options, hub)));
    hub->members.push_back(group.back().get());
  }
  return group;
}

InProcTransport::InProcTransport(Rank rank, std::size_t size, TransportOptions options,
                                 std::shared_ptr<Hub> hub)
    : Transport(rank, size, options), hub_(std::move(hub)) {}

void InProcTransport::transmit(Rank to, Frame frame, const SendTicket& ticket) {
  hub_->members.at(to)->deliver(rank(), std::move(frame));
  ticket.complete();
}

}  // namespace papred
