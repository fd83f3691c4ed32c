#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "blimp/protocol.hpp"
#include "blimp/replay.hpp"
#include "blimp/world.hpp"

namespace blimp {

/// How a session's outbound traffic is encoded.
enum class Transport : std::uint8_t {
    frames,   // binary frames (TCP)
    console,  // JSON documents (WebSocket)
};

using Role = proto::Role;

struct Session {
    SessionId id = kNoSession;
    Transport transport = Transport::frames;
    Role role = Role::observer;
    std::string name;
    std::set<std::uint8_t> drones;
    bool subscribed = false;
    proto::SeqTracker seq;
    std::uint16_t out_seq = 0;  // for unsolicited frames (PEER, TELEMETRY)
};

using Message = std::variant<proto::Frame, nlohmann::json>;

struct Delivery {
    SessionId session;
    Message message;
};

struct RaceRow {
    std::uint8_t drone_id = 0;
    std::optional<std::string> pilot;
    std::optional<double> start_t;
    std::optional<double> finish_t;
    bool dnf = false;

    std::optional<double> trial_time() const {
        if (dnf || !start_t || !finish_t) return std::nullopt;
        return *finish_t - *start_t;
    }
};

nlohmann::json race_row_json(const RaceRow& r);
std::optional<RaceRow> race_row_from_json(const nlohmann::json& j);

/// Ground-station logic: sessions, pilot exclusivity, command routing,
/// telemetry fan-out and race bookkeeping. Single-threaded; the simulation
/// loop owns it and feeds it transport events between steps.
class Gateway {
public:
    struct Options {
        std::optional<std::filesystem::path> runs_dir;  // races.jsonl lives here when set
        replay::Recorder* recorder = nullptr;
    };

    Gateway(World& world, Options options);

    World& world() { return world_; }
    const World& world() const { return world_; }

    /// Registers a session created by a transport with a caller-chosen id.
    void open_session(SessionId id, Transport transport);
    /// Creates an in-process session with a gateway-assigned id.
    SessionId create_session(Role role, Transport transport = Transport::frames, std::string name = {});
    /// Drops the session and releases its pilot claims.
    void close_session(SessionId id);

    const Session* session(SessionId id) const;
    std::optional<SessionId> pilot_of(std::uint8_t drone) const;

    /// Attaches under the session's current role.
    proto::AckStatus attach_drone(SessionId id, std::uint8_t drone);
    proto::AckStatus detach_drone(SessionId id, std::uint8_t drone);
    /// Role changes are refused while the session holds any drone.
    proto::AckStatus set_role(SessionId id, Role role);
    proto::AckStatus subscribe(SessionId id, bool on);

    void handle_frame(SessionId id, const proto::Frame& frame);
    void handle_decode_error(SessionId id, proto::DecodeError error);
    void handle_console(SessionId id, const nlohmann::json& request);
    void handle_console_text(SessionId id, const std::string& text);

    /// Advances the world by one step and fans out what it produced.
    void step();

    std::vector<Delivery> take_outgoing();

    /// Completed races, fastest first, followed by DNFs in arrival order.
    std::vector<RaceRow> leaderboard() const;
    const std::vector<RaceRow>& race_log() const { return races_; }

private:
    Session* find(SessionId id);
    bool may_pilot(const Session& s, std::uint8_t drone) const;
    bool may_operate(const Session& s, std::uint8_t drone) const;

    void send(SessionId id, proto::Frame f);
    void send(SessionId id, nlohmann::json doc);
    void ack(const Session& s, const proto::Frame& f, proto::AckStatus status);
    void reject(const Session& s, std::string_view reason, std::string detail);
    void apply(const Input& in);

    /// Validates a command and forwards it; nullopt when it was queued and
    /// its ACK will follow once the drone executes it.
    std::optional<proto::AckStatus> route_command(Session& s, std::uint8_t drone, std::uint16_t seq,
                                                  std::span<const std::uint8_t> payload);
    void route_discover(Session& s, const proto::Frame& f);

    void on_output(const Output& out);
    void record_race(const output::RaceResult& r);

    nlohmann::json welcome(const Session& s) const;
    nlohmann::json telemetry_json(const output::Telemetry& t) const;

    World& world_;
    Options options_;
    std::map<SessionId, Session> sessions_;
    std::map<std::uint8_t, SessionId> pilots_;
    SessionId next_id_ = 1;
    std::vector<Delivery> outbox_;
    std::vector<RaceRow> races_;
};

}  // namespace blimp
