#include "blimp/replay.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "blimp/config.hpp"

namespace blimp::replay {

using nlohmann::json;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::uint8_t drone_field(const json& rec, const char* key) {
    const int v = rec.at(key).get<int>();
    if (v < 0 || v > 255) throw std::invalid_argument(fmt::format("{} out of range", key));
    return static_cast<std::uint8_t>(v);
}

std::vector<std::uint8_t> hex_field(const json& rec, const char* key) {
    auto bytes = proto::parse_hex(rec.at(key).get<std::string>());
    if (!bytes) throw std::invalid_argument(fmt::format("{} is not hex", key));
    return *bytes;
}

}  // namespace

json header(const WorldConfig& config) {
    return {
        {"kind", "header"},
        {"format", kFormat},
        {"version", kFormatVersion},
        {"model", kModelVersion},
        {"world", world_to_json(config)},
        {"arena_hash", hash_hex(arena_hash(config.arena))},
    };
}

json input_record(const Input& in, Tick tick, double dt) {
    json rec = std::visit(
        Overloaded{
            [](const input::Command& c) -> json {
                return {{"kind", "cmd"},
                        {"drone", c.drone},
                        {"frame", proto::to_hex(proto::encode_frame(proto::make_command(c.drone, c.cmd)))}};
            },
            [](const input::Height& h) -> json {
                return {{"kind", "height"}, {"drone", h.drone}, {"seq", h.seq}};
            },
            [](const input::Peer& p) -> json {
                return {{"kind", "peer"}, {"src", p.src}, {"dst", p.dst}, {"app", proto::to_hex(p.app)}};
            },
            [](const input::Flock& f) -> json {
                return {{"kind", "flock"}, {"drone", f.drone}, {"on", f.on}};
            },
            [](const input::RaceArm& r) -> json {
                return {{"kind", "race_arm"}, {"drone", r.drone}};
            },
            [](const input::RaceAbort& r) -> json {
                return {{"kind", "race_abort"}, {"drone", r.drone}};
            },
        },
        in);
    rec["t"] = static_cast<double>(tick) * dt;
    return rec;
}

std::optional<Input> input_from_record(const json& rec) {
    const std::string kind = rec.at("kind").get<std::string>();
    try {
        if (kind == "cmd") {
            const auto bytes = hex_field(rec, "frame");
            const auto decoded = proto::decode_frame(bytes);
            if (!decoded.frame || decoded.frame->type != proto::FrameType::cmd) {
                throw std::invalid_argument("frame is not a valid CMD frame");
            }
            const auto& f = *decoded.frame;
            auto cmd = proto::decode_command(f.payload, f.seq);
            if (!cmd) throw std::invalid_argument("CMD payload does not decode");
            return input::Command{f.drone_id, *cmd.value, kNoSession};
        }
        if (kind == "height") {
            const int seq = rec.at("seq").get<int>();
            if (seq < 0 || seq > 0xFFFF) throw std::invalid_argument("seq out of range");
            return input::Height{drone_field(rec, "drone"), static_cast<std::uint16_t>(seq), kNoSession};
        }
        if (kind == "peer") return input::Peer{drone_field(rec, "src"), drone_field(rec, "dst"), hex_field(rec, "app")};
        if (kind == "flock") return input::Flock{drone_field(rec, "drone"), rec.at("on").get<bool>()};
        if (kind == "race_arm") return input::RaceArm{drone_field(rec, "drone")};
        if (kind == "race_abort") return input::RaceAbort{drone_field(rec, "drone")};
    } catch (const json::exception& e) {
        throw std::invalid_argument(fmt::format("{} record: {}", kind, e.what()));
    }
    return std::nullopt;
}

Recorder::Recorder(std::ostream& out, const WorldConfig& config) : out_(out), dt_(config.physics.dt) {
    write(header(config));
}

void Recorder::write(const json& rec) {
    out_ << rec.dump() << '\n';
    out_.flush();
}

void Recorder::input(const Input& in, Tick tick) { write(input_record(in, tick, dt_)); }

void Recorder::reject(Tick tick, SessionId session, const std::string& reason, const std::string& detail) {
    write({{"kind", "reject"},
           {"t", static_cast<double>(tick) * dt_},
           {"session", session},
           {"reason", reason},
           {"detail", detail}});
}

void Recorder::after_step(const World& world) {
    if (world.tick() % kCheckpointEvery != 0) return;
    write({{"kind", "checkpoint"}, {"t", world.time()}, {"hash", hash_hex(world.state_hash())}});
}

void Recorder::end(const World& world) {
    if (ended_) return;
    ended_ = true;
    write({{"kind", "end"}, {"t", world.time()}, {"hash", hash_hex(world.state_hash())}});
}

std::string_view describe(Status s) {
    switch (s) {
    case Status::ok: return "ok";
    case Status::io_error: return "io error";
    case Status::malformed: return "malformed record";
    case Status::header_mismatch: return "header mismatch";
    case Status::non_monotonic: return "non-monotonic time";
    case Status::diverged: return "checkpoint diverged";
    case Status::truncated: return "missing end record";
    }
    return "unknown";
}

namespace {

Outcome fail(Status s, std::string msg) {
    Outcome o;
    o.status = s;
    o.message = std::move(msg);
    return o;
}

std::optional<std::uint64_t> parse_hash(const json& rec) {
    if (!rec.contains("hash") || !rec["hash"].is_string()) return std::nullopt;
    const auto text = rec["hash"].get<std::string>();
    if (text.size() != 16) return std::nullopt;
    std::uint64_t v = 0;
    for (char c : text) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else return std::nullopt;
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return v;
}

}  // namespace

Outcome run(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;

    auto next_record = [&](json& rec) -> bool {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            rec = json::parse(line, nullptr, false);
            return true;
        }
        return false;
    };

    json head;
    if (!next_record(head)) return fail(Status::malformed, "empty log");
    if (head.is_discarded() || !head.is_object() || head.value("kind", "") != "header") {
        return fail(Status::malformed, "line 1: expected a header record");
    }
    if (head.value("format", "") != kFormat) return fail(Status::header_mismatch, "unknown log format");
    if (head.value("version", -1) != kFormatVersion) {
        return fail(Status::header_mismatch,
                    fmt::format("log format version {} (expected {})", head.value("version", -1), kFormatVersion));
    }
    if (head.value("model", -1) != kModelVersion) {
        return fail(Status::header_mismatch,
                    fmt::format("model version {} (expected {})", head.value("model", -1), kModelVersion));
    }

    std::optional<World> world;
    try {
        world.emplace(world_from_json(head.at("world")));
    } catch (const std::exception& e) {
        return fail(Status::header_mismatch, fmt::format("header world: {}", e.what()));
    }
    if (head.value("arena_hash", "") != hash_hex(arena_hash(world->config().arena))) {
        return fail(Status::header_mismatch, "arena hash does not match the embedded arena");
    }

    const double dt = world->config().physics.dt;
    Outcome out;
    double last_t = 0.0;
    json rec;
    while (next_record(rec)) {
        const auto where = fmt::format("line {}", line_no);
        if (rec.is_discarded() || !rec.is_object() || !rec.contains("kind") || !rec["kind"].is_string() ||
            !rec.contains("t") || !rec["t"].is_number()) {
            return fail(Status::malformed, where + ": record needs kind and t");
        }
        const double t = rec["t"].get<double>();
        if (!std::isfinite(t) || t < last_t) {
            return fail(Status::non_monotonic, fmt::format("{}: t={} after t={}", where, t, last_t));
        }
        last_t = t;
        const Tick target = static_cast<Tick>(std::llround(t / dt));
        while (world->tick() < target) world->step();

        const std::string kind = rec["kind"].get<std::string>();
        if (kind == "reject") continue;
        if (kind == "checkpoint" || kind == "end") {
            const auto recorded = parse_hash(rec);
            if (!recorded) return fail(Status::malformed, where + ": bad hash");
            const auto actual = world->state_hash();
            if (kind == "end") {
                out.recorded_hash = recorded;
                break;
            }
            ++out.checkpoints;
            if (*recorded != actual) {
                return fail(Status::diverged, fmt::format("{}: tick {} hash {} (recorded {})", where, world->tick(),
                                                          hash_hex(actual), hash_hex(*recorded)));
            }
            continue;
        }
        try {
            auto input = input_from_record(rec);
            if (!input) return fail(Status::malformed, fmt::format("{}: unknown kind '{}'", where, kind));
            world->apply(*input);
            ++out.inputs;
        } catch (const std::exception& e) {
            return fail(Status::malformed, fmt::format("{}: {}", where, e.what()));
        }
    }

    out.final_hash = world->state_hash();
    out.final_tick = world->tick();
    if (!out.recorded_hash) {
        out.status = Status::truncated;
        out.message = "log ends without an end record";
    } else if (*out.recorded_hash != out.final_hash) {
        out.status = Status::diverged;
        out.message = fmt::format("final hash {} (recorded {})", hash_hex(out.final_hash), hash_hex(*out.recorded_hash));
    }
    return out;
}

Outcome run_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) return fail(Status::io_error, fmt::format("{}: cannot open", path));
    return run(in);
}

}  // namespace blimp::replay
