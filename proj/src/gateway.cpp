#include "blimp/gateway.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

namespace blimp {

using nlohmann::json;
using proto::AckStatus;
using proto::Frame;
using proto::FrameType;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Reports in JSON use snake_case names for ACK statuses.
std::string_view status_key(AckStatus s) {
    switch (s) {
    case AckStatus::ok: return "ok";
    case AckStatus::duplicate: return "duplicate";
    case AckStatus::bad_duration: return "bad_duration";
    case AckStatus::unknown_opcode: return "unknown_opcode";
    case AckStatus::not_pilot: return "not_pilot";
    case AckStatus::malformed: return "malformed";
    case AckStatus::unknown_drone: return "unknown_drone";
    case AckStatus::conflict: return "conflict";
    case AckStatus::stale: return "stale";
    case AckStatus::bad_request: return "bad_request";
    }
    return "unknown";
}

AckStatus status_of(CommandVerdict v) {
    switch (v) {
    case CommandVerdict::accepted: return AckStatus::ok;
    case CommandVerdict::bad_duration: return AckStatus::bad_duration;
    case CommandVerdict::unknown_opcode: return AckStatus::unknown_opcode;
    }
    return AckStatus::bad_request;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

constexpr std::uint8_t kCmdClass = proto::frame_class(FrameType::cmd);

// Extracts a drone id from a console request; nullopt when absent or out of byte range.
std::optional<std::uint8_t> drone_arg(const json& req, const char* key = "drone") {
    if (!req.contains(key) || !req[key].is_number_integer()) return std::nullopt;
    const auto v = req[key].get<std::int64_t>();
    if (v < 0 || v > 255) return std::nullopt;
    return static_cast<std::uint8_t>(v);
}

}  // namespace

json race_row_json(const RaceRow& r) {
    return {{"drone_id", r.drone_id},
            {"pilot", r.pilot ? json(*r.pilot) : json(nullptr)},
            {"start_t", optional_number(r.start_t)},
            {"finish_t", optional_number(r.finish_t)},
            {"dnf", r.dnf}};
}

std::optional<RaceRow> race_row_from_json(const json& j) {
    if (!j.is_object() || !j.contains("drone_id") || !j["drone_id"].is_number_integer() || !j.contains("dnf") ||
        !j["dnf"].is_boolean()) {
        return std::nullopt;
    }
    RaceRow r;
    r.drone_id = j["drone_id"].get<std::uint8_t>();
    r.dnf = j["dnf"].get<bool>();
    if (j.contains("pilot") && j["pilot"].is_string()) r.pilot = j["pilot"].get<std::string>();
    if (j.contains("start_t") && j["start_t"].is_number()) r.start_t = j["start_t"].get<double>();
    if (j.contains("finish_t") && j["finish_t"].is_number()) r.finish_t = j["finish_t"].get<double>();
    return r;
}

Gateway::Gateway(World& world, Options options) : world_(world), options_(std::move(options)) {
    if (!options_.runs_dir) return;
    std::filesystem::create_directories(*options_.runs_dir);
    std::ifstream in(*options_.runs_dir / "races.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (auto row = race_row_from_json(json::parse(line, nullptr, false))) races_.push_back(*row);
    }
}

// ---- sessions ----------------------------------------------------------------

void Gateway::open_session(SessionId id, Transport transport) {
    Session s;
    s.id = id;
    s.transport = transport;
    s.subscribed = transport == Transport::console;
    sessions_[id] = std::move(s);
}

SessionId Gateway::create_session(Role role, Transport transport, std::string name) {
    const SessionId id = next_id_++;
    open_session(id, transport);
    Session& s = sessions_[id];
    s.role = role;
    s.name = std::move(name);
    return id;
}

void Gateway::close_session(SessionId id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return;
    for (std::uint8_t d : it->second.drones) {
        auto p = pilots_.find(d);
        if (p != pilots_.end() && p->second == id) pilots_.erase(p);
    }
    sessions_.erase(it);
    std::erase_if(outbox_, [id](const Delivery& d) { return d.session == id; });
}

Session* Gateway::find(SessionId id) {
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : &it->second;
}

const Session* Gateway::session(SessionId id) const {
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : &it->second;
}

std::optional<SessionId> Gateway::pilot_of(std::uint8_t drone) const {
    auto it = pilots_.find(drone);
    if (it == pilots_.end()) return std::nullopt;
    return it->second;
}

AckStatus Gateway::attach_drone(SessionId id, std::uint8_t drone) {
    Session* s = find(id);
    if (!s) return AckStatus::bad_request;
    if (!world_.has_drone(drone)) return AckStatus::unknown_drone;
    if (s->role == Role::pilot) {
        auto it = pilots_.find(drone);
        if (it != pilots_.end() && it->second != id) return AckStatus::conflict;
        pilots_[drone] = id;
    }
    s->drones.insert(drone);
    return AckStatus::ok;
}

AckStatus Gateway::detach_drone(SessionId id, std::uint8_t drone) {
    Session* s = find(id);
    if (!s) return AckStatus::bad_request;
    if (!s->drones.erase(drone)) return world_.has_drone(drone) ? AckStatus::bad_request : AckStatus::unknown_drone;
    auto it = pilots_.find(drone);
    if (it != pilots_.end() && it->second == id) pilots_.erase(it);
    return AckStatus::ok;
}

AckStatus Gateway::set_role(SessionId id, Role role) {
    Session* s = find(id);
    if (!s) return AckStatus::bad_request;
    if (s->role != role && !s->drones.empty()) return AckStatus::conflict;
    s->role = role;
    return AckStatus::ok;
}

AckStatus Gateway::subscribe(SessionId id, bool on) {
    Session* s = find(id);
    if (!s) return AckStatus::bad_request;
    s->subscribed = on;
    return AckStatus::ok;
}

bool Gateway::may_pilot(const Session& s, std::uint8_t drone) const {
    auto it = pilots_.find(drone);
    return s.role == Role::pilot && it != pilots_.end() && it->second == s.id;
}

bool Gateway::may_operate(const Session& s, std::uint8_t drone) const {
    return s.role == Role::operator_ || may_pilot(s, drone);
}

// ---- plumbing ----------------------------------------------------------------

void Gateway::send(SessionId id, Frame f) {
    outbox_.push_back(Delivery{id, Message(std::in_place_type<Frame>, std::move(f))});
}

void Gateway::send(SessionId id, json doc) {
    outbox_.push_back(Delivery{id, Message(std::in_place_type<json>, std::move(doc))});
}

std::vector<Delivery> Gateway::take_outgoing() { return std::exchange(outbox_, {}); }

void Gateway::ack(const Session& s, const Frame& f, AckStatus status) {
    send(s.id, proto::make_ack(f.drone_id, f.seq, status, f.type));
}

void Gateway::reject(const Session& s, std::string_view reason, std::string detail) {
    if (options_.recorder) options_.recorder->reject(world_.tick(), s.id, std::string(reason), detail);
}

void Gateway::apply(const Input& in) {
    if (options_.recorder) options_.recorder->input(in, world_.tick());
    world_.apply(in);
}

// ---- frames ------------------------------------------------------------------

std::optional<AckStatus> Gateway::route_command(Session& s, std::uint8_t drone, std::uint16_t seq,
                                                std::span<const std::uint8_t> payload) {
    if (!world_.has_drone(drone)) return AckStatus::unknown_drone;
    if (!may_pilot(s, drone)) return AckStatus::not_pilot;
    auto cmd = proto::decode_command(payload, seq);
    if (!cmd) {
        return cmd.error == proto::PayloadError::unknown_opcode ? AckStatus::unknown_opcode : AckStatus::malformed;
    }
    switch (s.seq.accept(drone, kCmdClass, seq)) {
    case proto::SeqVerdict::duplicate: return AckStatus::duplicate;
    case proto::SeqVerdict::stale: return AckStatus::stale;
    case proto::SeqVerdict::accept: break;
    }
    apply(input::Command{drone, *cmd.value, s.id});
    return std::nullopt;
}

void Gateway::handle_frame(SessionId id, const Frame& f) {
    Session* s = find(id);
    if (!s) return;
    switch (f.type) {
    case FrameType::cmd:
        if (auto status = route_command(*s, f.drone_id, f.seq, f.payload)) {
            reject(*s, status_key(*status), proto::to_hex(proto::encode_frame(f)));
            ack(*s, f, *status);
        }
        break;
    case FrameType::height_req:
        if (!world_.has_drone(f.drone_id)) {
            ack(*s, f, AckStatus::unknown_drone);
        } else if (!s->drones.contains(f.drone_id) && s->role != Role::operator_) {
            ack(*s, f, AckStatus::not_pilot);
        } else {
            apply(input::Height{f.drone_id, f.seq, s->id});
        }
        break;
    case FrameType::peer: {
        auto env = proto::decode_peer(f.payload);
        if (!env) {
            ack(*s, f, AckStatus::malformed);
        } else if (!world_.has_drone(f.drone_id) ||
                   (env.value->dst != proto::kBroadcast && !world_.has_drone(env.value->dst))) {
            ack(*s, f, AckStatus::unknown_drone);
        } else if (!may_pilot(*s, f.drone_id)) {
            ack(*s, f, AckStatus::not_pilot);
        } else {
            apply(input::Peer{f.drone_id, env.value->dst, std::move(env.value->app)});
        }
        break;
    }
    case FrameType::discover: route_discover(*s, f); break;
    default:
        // Drone-to-ground frame types are never valid from a client.
        reject(*s, "unexpected_type", proto::to_hex(proto::encode_frame(f)));
        ack(*s, f, AckStatus::bad_request);
        break;
    }
}

void Gateway::route_discover(Session& s, const Frame& f) {
    auto req = proto::decode_discover(f.payload);
    if (!req) {
        ack(s, f, AckStatus::malformed);
        return;
    }
    switch (req.value->verb) {
    case proto::DiscoverVerb::query:
        if (!world_.has_drone(f.drone_id)) {
            ack(s, f, AckStatus::unknown_drone);
            return;
        }
        send(s.id, proto::make_announce(f.drone_id, f.seq,
                                        {static_cast<std::uint8_t>(world_.drone_count()),
                                         pilots_.contains(f.drone_id)}));
        return;
    case proto::DiscoverVerb::attach: {
        AckStatus st = set_role(s.id, req.value->role);
        if (st == AckStatus::ok) st = attach_drone(s.id, f.drone_id);
        ack(s, f, st);
        return;
    }
    case proto::DiscoverVerb::detach: ack(s, f, detach_drone(s.id, f.drone_id)); return;
    case proto::DiscoverVerb::subscribe: ack(s, f, subscribe(s.id, req.value->subscribe)); return;
    }
}

void Gateway::handle_decode_error(SessionId id, proto::DecodeError error) {
    // Corrupt bytes carry no trustworthy header, so there is nobody to ACK.
    if (const Session* s = find(id)) reject(*s, "decode", std::string(proto::describe(error)));
}

// ---- console -----------------------------------------------------------------

json Gateway::welcome(const Session& s) const {
    const auto& cfg = world_.config();
    return {{"event", "welcome"},
            {"session", s.id},
            {"role", proto::role_name(s.role)},
            {"name", s.name},
            {"drones", world_.drone_count()},
            {"dt", cfg.physics.dt},
            {"telemetry_hz", 1.0 / (cfg.physics.dt * cfg.telemetry_divisor)},
            {"tick", world_.tick()},
            {"arena", arena_to_json(cfg.arena)}};
}

void Gateway::handle_console_text(SessionId id, const std::string& text) {
    json req = json::parse(text, nullptr, false);
    if (req.is_discarded()) {
        send(id, json{{"event", "error"}, {"reason", "bad_request"}, {"message", "not valid JSON"}});
        return;
    }
    handle_console(id, req);
}

void Gateway::handle_console(SessionId id, const json& req) {
    Session* sp = find(id);
    if (!sp) return;
    Session& s = *sp;

    std::string op;
    if (req.is_object() && req.contains("op") && req["op"].is_string()) op = req["op"].get<std::string>();
    auto error = [&](AckStatus status, std::string message) {
        json e{{"event", "error"}, {"op", op}, {"reason", status_key(status)}, {"message", std::move(message)}};
        if (req.is_object() && req.contains("id")) e["id"] = req["id"];
        send(id, std::move(e));
    };
    auto reply = [&](json body) {
        if (req.is_object() && req.contains("id")) body["id"] = req["id"];
        send(id, std::move(body));
    };
    if (op.empty()) {
        error(AckStatus::bad_request, "request needs a string \"op\"");
        return;
    }

    if (op == "hello") {
        if (req.contains("role")) {
            const auto role = req["role"].is_string() ? proto::role_from_name(req["role"].get<std::string>())
                                                      : std::nullopt;
            if (!role) return error(AckStatus::bad_request, "role must be pilot, operator or observer");
            if (auto st = set_role(id, *role); st != AckStatus::ok) {
                return error(st, "detach all drones before changing role");
            }
        }
        if (req.contains("name") && req["name"].is_string()) s.name = req["name"].get<std::string>();
        return reply(welcome(s));
    }
    if (op == "leaderboard") {
        json rows = json::array();
        for (const auto& r : leaderboard()) {
            json row = race_row_json(r);
            row["trial_time"] = optional_number(r.trial_time());
            rows.push_back(std::move(row));
        }
        return reply({{"event", "leaderboard"}, {"rows", std::move(rows)}});
    }
    if (op == "subscribe") {
        if (!req.contains("on") || !req["on"].is_boolean()) return error(AckStatus::bad_request, "\"on\" must be a boolean");
        s.subscribed = req["on"].get<bool>();
        return reply({{"event", "subscribe"}, {"on", s.subscribed}});
    }

    const char* drone_key = op == "peer" ? "src" : "drone";
    const auto drone = drone_arg(req, drone_key);
    if (!drone) return error(AckStatus::bad_request, fmt::format("\"{}\" must be a drone id", drone_key));
    if (!world_.has_drone(*drone)) return error(AckStatus::unknown_drone, fmt::format("no drone {}", *drone));

    if (op == "attach" || op == "detach") {
        const AckStatus st = op == "attach" ? attach_drone(id, *drone) : detach_drone(id, *drone);
        return reply({{"event", op}, {"drone", *drone}, {"status", status_key(st)}});
    }
    if (op == "cmd") {
        if (!req.contains("action") || !req["action"].is_string()) {
            return error(AckStatus::bad_request, "\"action\" must be a command name");
        }
        const auto opcode = opcode_from_name(req["action"].get<std::string>());
        if (!opcode) return error(AckStatus::unknown_opcode, "unknown action");
        std::uint32_t duration = 0;
        if (is_timed(*opcode)) {
            if (!req.contains("duration_ms") || !req["duration_ms"].is_number_integer() ||
                req["duration_ms"].get<std::int64_t>() < 0 || req["duration_ms"].get<std::int64_t>() > 0xFFFFFFFFLL) {
                return error(AckStatus::bad_request, "\"duration_ms\" must be a non-negative integer");
            }
            duration = req["duration_ms"].get<std::uint32_t>();
        }
        std::uint16_t seq;
        if (req.contains("seq")) {
            if (!req["seq"].is_number_integer() || req["seq"].get<std::int64_t>() < 0 ||
                req["seq"].get<std::int64_t>() > 0xFFFF) {
                return error(AckStatus::bad_request, "\"seq\" must be within 0..65535");
            }
            seq = req["seq"].get<std::uint16_t>();
        } else {
            seq = static_cast<std::uint16_t>(s.seq.last(*drone, kCmdClass).value_or(0) + 1);
        }
        const auto payload = proto::encode_command(TimedCommand{*opcode, duration, seq});
        if (auto st = route_command(s, *drone, seq, payload)) {
            reject(s, status_key(*st), req.dump());
            reply({{"event", "ack"}, {"drone", *drone}, {"seq", seq}, {"status", status_key(*st)}});
        }
        return;
    }
    if (op == "height") {
        if (!s.drones.contains(*drone) && s.role != Role::operator_) {
            return error(AckStatus::not_pilot, "attach the drone first");
        }
        std::uint16_t seq = 0;
        if (req.contains("seq") && req["seq"].is_number_integer()) seq = req["seq"].get<std::uint16_t>();
        apply(input::Height{*drone, seq, id});
        return;
    }
    if (op == "peer") {
        std::uint8_t dst = proto::kBroadcast;
        if (req.contains("dst") && !(req["dst"].is_string() && req["dst"] == "all")) {
            const auto d = drone_arg(req, "dst");
            if (!d || !world_.has_drone(*d)) return error(AckStatus::unknown_drone, "unknown destination");
            dst = *d;
        }
        auto app = proto::parse_hex(req.value("app_hex", std::string{}));
        if (!app || app->size() > proto::kMaxPeerApp) {
            return error(AckStatus::malformed, fmt::format("\"app_hex\" must be hex, at most {} bytes", proto::kMaxPeerApp));
        }
        if (!may_pilot(s, *drone)) return error(AckStatus::not_pilot, "only the pilot may send from this drone");
        apply(input::Peer{*drone, dst, std::move(*app)});
        return;
    }
    if (op == "flock" || op == "race_arm" || op == "race_abort") {
        if (!may_operate(s, *drone)) return error(AckStatus::not_pilot, "operator or pilot role required");
        if (op == "flock") {
            if (!req.contains("on") || !req["on"].is_boolean()) {
                return error(AckStatus::bad_request, "\"on\" must be a boolean");
            }
            apply(input::Flock{*drone, req["on"].get<bool>()});
            return reply({{"event", "flock"}, {"drone", *drone}, {"on", req["on"]}});
        }
        const auto& d = world_.drone(*drone);
        if (op == "race_arm" && d.course && !d.course->finished()) {
            return error(AckStatus::conflict, "a trial is already active for this drone");
        }
        if (op == "race_abort" && (!d.course || d.course->finished())) {
            return error(AckStatus::bad_request, "no active trial for this drone");
        }
        if (op == "race_arm") {
            apply(input::RaceArm{*drone});
        } else {
            apply(input::RaceAbort{*drone});
        }
        return reply({{"event", op}, {"drone", *drone}, {"t", world_.time()}});
    }
    error(AckStatus::bad_request, fmt::format("unknown op '{}'", op));
}

// ---- stepping ----------------------------------------------------------------

void Gateway::step() {
    for (const auto& out : world_.step()) on_output(out);
    if (options_.recorder) options_.recorder->after_step(world_);
}

json Gateway::telemetry_json(const output::Telemetry& t) const {
    static constexpr const char* kChannels[] = {"vertical", "yaw", "lateral"};
    const auto& s = t.snapshot;
    json channels = json::array();
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& c = s.channels[i];
        const auto op = opcode_from_byte(c.opcode);
        channels.push_back({{"channel", kChannels[i]},
                            {"opcode", op ? json(opcode_name(*op)) : json(nullptr)},
                            {"remaining_ms", c.remaining_ms}});
    }
    return {{"event", "telemetry"},
            {"drone", t.drone},
            {"tick", s.tick},
            {"t", s.time},
            {"position", vec_json(s.position)},
            {"velocity", vec_json(s.velocity)},
            {"heading", s.heading},
            {"yaw_rate", s.yaw_rate},
            {"height", s.height},
            {"channels", std::move(channels)},
            {"hold", {{"engaged", s.hold_engaged}, {"target", s.hold_target}}},
            {"flocking", s.flocking},
            {"next_hoop", s.next_hoop}};
}

void Gateway::on_output(const Output& out) {
    std::visit(
        Overloaded{
            [&](const output::CommandResult& r) {
                Session* s = find(r.session);
                if (!s) return;
                const AckStatus st = status_of(r.verdict);
                if (s->transport == Transport::frames) {
                    send(s->id, proto::make_ack(r.drone, r.seq, st, FrameType::cmd));
                } else {
                    send(s->id, json{{"event", "ack"}, {"drone", r.drone}, {"seq", r.seq}, {"status", status_key(st)}});
                }
            },
            [&](const output::HeightResult& r) {
                Session* s = find(r.session);
                if (!s) return;
                if (s->transport == Transport::frames) {
                    send(s->id, proto::make_height_response(r.drone, r.seq, r.meters));
                } else {
                    send(s->id, json{{"event", "height"}, {"drone", r.drone}, {"seq", r.seq}, {"meters", r.meters}});
                }
            },
            [&](const output::PeerDelivered& p) {
                // Delivered to the destination drone's pilot, which speaks for that drone.
                const auto pilot = pilot_of(p.dst);
                if (!pilot) return;
                Session* s = find(*pilot);
                if (s->transport == Transport::frames) {
                    send(s->id, proto::make_peer(p.src, s->out_seq++, p.dst, p.app));
                } else {
                    send(s->id, json{{"event", "peer"}, {"src", p.src}, {"dst", p.dst}, {"app_hex", proto::to_hex(p.app)}});
                }
            },
            [&](const output::Progress& p) {
                const json ev{{"event", "progress"},
                              {"drone", p.drone},
                              {"hoop", p.hoop},
                              {"t", p.t},
                              {"split", optional_number(p.split)}};
                for (const auto& [id, s] : sessions_) {
                    if (s.transport == Transport::console) send(id, ev);
                }
            },
            [&](const output::RaceResult& r) { record_race(r); },
            [&](const output::Telemetry& t) {
                std::optional<json> doc;
                std::optional<Frame> frame;
                for (auto& [id, s] : sessions_) {
                    if (!s.subscribed || (!s.drones.empty() && !s.drones.contains(t.drone))) continue;
                    if (s.transport == Transport::frames) {
                        if (!frame) {
                            const auto seq = static_cast<std::uint16_t>(world_.tick() / world_.config().telemetry_divisor);
                            frame = Frame{FrameType::telemetry, t.drone, seq, proto::encode_telemetry(t.snapshot)};
                        }
                        send(id, *frame);
                    } else {
                        if (!doc) doc = telemetry_json(t);
                        send(id, *doc);
                    }
                }
            },
        },
        out);
}

void Gateway::record_race(const output::RaceResult& r) {
    RaceRow row{r.drone, std::nullopt, r.start_t, r.finish_t, r.dnf};
    if (auto p = pilot_of(r.drone)) {
        const Session& s = sessions_.at(*p);
        row.pilot = s.name.empty() ? fmt::format("session-{}", s.id) : s.name;
    }
    races_.push_back(row);
    if (options_.runs_dir) {
        std::ofstream out(*options_.runs_dir / "races.jsonl", std::ios::app);
        out << race_row_json(row).dump() << '\n';
    }
    json ev = race_row_json(row);
    ev["event"] = "race_result";
    ev["trial_time"] = optional_number(row.trial_time());
    for (const auto& [id, s] : sessions_) {
        if (s.transport == Transport::console) send(id, ev);
    }
}

std::vector<RaceRow> Gateway::leaderboard() const {
    std::vector<RaceRow> done;
    std::vector<RaceRow> dnf;
    for (const auto& r : races_) (r.trial_time() ? done : dnf).push_back(r);
    std::stable_sort(done.begin(), done.end(),
                     [](const RaceRow& a, const RaceRow& b) { return *a.trial_time() < *b.trial_time(); });
    done.insert(done.end(), dnf.begin(), dnf.end());
    return done;
}

}  // namespace blimp
