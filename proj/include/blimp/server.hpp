#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "blimp/gateway.hpp"

namespace blimp {

namespace inbound {
struct Opened {
    Transport transport;
};
struct FrameIn {
    proto::DecodeResult result;
};
struct TextIn {
    std::string text;
};
struct Closed {};
}  // namespace inbound

struct InboundEvent {
    SessionId session;
    std::variant<inbound::Opened, inbound::FrameIn, inbound::TextIn, inbound::Closed> event;
};

/// Network front end: binary frames over TCP and JSON over WebSocket. All
/// socket work happens on a private I/O thread; the simulation loop exchanges
/// data with it only through drain() and dispatch().
class Server {
public:
    struct Ports {
        std::uint16_t frames = 7787;
        std::uint16_t console = 7788;
        std::string address = "0.0.0.0";
    };

    /// Binds both listeners; throws std::system_error when a port is taken.
    explicit Server(const Ports& ports);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Actual bound ports (differ from the request when it asked for 0).
    std::uint16_t frame_port() const;
    std::uint16_t console_port() const;

    void start();
    void stop();

    std::vector<InboundEvent> drain();
    void dispatch(std::vector<Delivery> deliveries);

    /// Session ids the server hands out start here, clear of in-process ids.
    static constexpr SessionId kFirstSessionId = SessionId{1} << 32;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Feeds queued transport events into the gateway.
void apply_inbound(Gateway& gateway, std::vector<InboundEvent> events);

}  // namespace blimp
