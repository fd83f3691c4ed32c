#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "blimp/gateway.hpp"

using namespace blimp;
using nlohmann::json;
using proto::AckStatus;
using proto::Frame;
using proto::FrameType;

namespace {

struct Bench {
    World world;
    Gateway gw;

    explicit Bench(int drones = 3, Gateway::Options opt = {}) : world(config(drones)), gw(world, std::move(opt)) {}

    static WorldConfig config(int drones) {
        WorldConfig c;
        c.drone_count = drones;
        return c;
    }

    std::vector<Delivery> pump(int steps = 0) {
        for (int i = 0; i < steps; ++i) gw.step();
        return gw.take_outgoing();
    }
};

std::vector<Frame> frames_to(const std::vector<Delivery>& out, SessionId id, std::optional<FrameType> type = {}) {
    std::vector<Frame> r;
    for (const auto& d : out) {
        if (d.session != id) continue;
        if (const auto* f = std::get_if<Frame>(&d.message); f && (!type || f->type == *type)) r.push_back(*f);
    }
    return r;
}

std::vector<json> docs_to(const std::vector<Delivery>& out, SessionId id, const std::string& event = {}) {
    std::vector<json> r;
    for (const auto& d : out) {
        if (d.session != id) continue;
        if (const auto* j = std::get_if<json>(&d.message); j && (event.empty() || (*j)["event"] == event)) r.push_back(*j);
    }
    return r;
}

AckStatus ack_status(const Frame& f) {
    const auto a = proto::decode_ack(f.payload);
    EXPECT_TRUE(a);
    return a.value->status;
}

Frame attach_frame(std::uint8_t drone, proto::Role role, std::uint16_t seq = 1) {
    return proto::make_discover(drone, seq, {proto::DiscoverVerb::attach, role, false});
}

}  // namespace

// ---- exclusivity and roles ---------------------------------------------------------

TEST(Gateway, OnePilotPerDrone) {
    Bench b;
    const auto a = b.gw.create_session(Role::pilot);
    const auto c = b.gw.create_session(Role::pilot);
    const auto o = b.gw.create_session(Role::observer);
    EXPECT_EQ(b.gw.attach_drone(a, 0), AckStatus::ok);
    EXPECT_EQ(b.gw.attach_drone(a, 0), AckStatus::ok);  // idempotent
    EXPECT_EQ(b.gw.attach_drone(c, 0), AckStatus::conflict);
    EXPECT_EQ(b.gw.attach_drone(o, 0), AckStatus::ok);
    EXPECT_EQ(b.gw.pilot_of(0), a);
    b.gw.close_session(a);
    EXPECT_FALSE(b.gw.pilot_of(0));
    EXPECT_EQ(b.gw.attach_drone(c, 0), AckStatus::ok);
    EXPECT_EQ(b.gw.attach_drone(c, 7), AckStatus::unknown_drone);
}

TEST(Gateway, DiscoverAttachOverFrames) {
    Bench b;
    b.gw.open_session(100, Transport::frames);
    b.gw.open_session(200, Transport::frames);
    b.gw.handle_frame(100, attach_frame(1, Role::pilot));
    b.gw.handle_frame(200, attach_frame(1, Role::pilot));
    const auto out = b.pump();
    ASSERT_EQ(frames_to(out, 100).size(), 1u);
    EXPECT_EQ(ack_status(frames_to(out, 100)[0]), AckStatus::ok);
    EXPECT_EQ(ack_status(frames_to(out, 200)[0]), AckStatus::conflict);
    EXPECT_EQ(b.gw.session(100)->role, Role::pilot);
    // The losing session has the pilot role but no drone, so it may change role.
    b.gw.handle_frame(200, attach_frame(1, Role::observer, 2));
    EXPECT_EQ(ack_status(frames_to(b.pump(), 200)[0]), AckStatus::ok);
    // A session holding a drone may not switch role.
    b.gw.handle_frame(100, attach_frame(2, Role::observer, 2));
    EXPECT_EQ(ack_status(frames_to(b.pump(), 100)[0]), AckStatus::conflict);
}

TEST(Gateway, DiscoverQueryAnnounces) {
    Bench b;
    b.gw.open_session(1, Transport::frames);
    b.gw.handle_frame(1, proto::make_discover(0, 9));
    const auto f = frames_to(b.pump(), 1, FrameType::announce);
    ASSERT_EQ(f.size(), 1u);
    EXPECT_EQ(f[0].seq, 9);
    const auto a = proto::decode_announce(f[0].payload);
    ASSERT_TRUE(a);
    EXPECT_EQ(a.value->drone_count, 3);
    EXPECT_FALSE(a.value->piloted);
}

TEST(Gateway, ObserverCannotCommand) {
    Bench b;
    const auto o = b.gw.create_session(Role::observer);
    b.gw.attach_drone(o, 0);
    b.gw.handle_frame(o, proto::make_command(0, {Opcode::up, 1000, 1}));
    const auto out = b.pump(5);
    const auto acks = frames_to(out, o, FrameType::ack);
    ASSERT_EQ(acks.size(), 1u);
    EXPECT_EQ(ack_status(acks[0]), AckStatus::not_pilot);
    EXPECT_FALSE(b.world.drone(0).runtime.channel(Channel::vertical).active);
}

TEST(Gateway, UnknownDrone) {
    Bench b;
    const auto p = b.gw.create_session(Role::pilot);
    b.gw.handle_frame(p, proto::make_command(250, {Opcode::up, 1000, 1}));
    b.gw.handle_frame(p, proto::make_height_request(250, 2));
    const auto acks = frames_to(b.pump(), p, FrameType::ack);
    ASSERT_EQ(acks.size(), 2u);
    EXPECT_EQ(ack_status(acks[0]), AckStatus::unknown_drone);
    EXPECT_EQ(ack_status(acks[1]), AckStatus::unknown_drone);
}

// ---- command path ------------------------------------------------------------

TEST(Gateway, AckArrivesWhenTheDroneExecutes) {
    Bench b;
    const auto p = b.gw.create_session(Role::pilot);
    b.gw.attach_drone(p, 0);
    b.gw.handle_frame(p, proto::make_command(0, {Opcode::up, 1000, 1}));
    EXPECT_TRUE(frames_to(b.pump(1), p, FrameType::ack).empty());
    EXPECT_TRUE(frames_to(b.pump(1), p, FrameType::ack).empty());
    const auto acks = frames_to(b.pump(1), p, FrameType::ack);
    ASSERT_EQ(acks.size(), 1u);
    EXPECT_EQ(acks[0].seq, 1);
    EXPECT_EQ(ack_status(acks[0]), AckStatus::ok);
    EXPECT_TRUE(b.world.drone(0).runtime.channel(Channel::vertical).active);
}

TEST(Gateway, DuplicateSeqExecutesOnce) {
    std::ostringstream log;
    World world(Bench::config(3));
    replay::Recorder rec(log, world.config());
    Gateway gw(world, {std::nullopt, &rec});
    const auto p = gw.create_session(Role::pilot);
    gw.attach_drone(p, 0);
    const auto frame = proto::make_command(0, {Opcode::forward, 500, 5});
    gw.handle_frame(p, frame);
    gw.handle_frame(p, frame);
    const auto immediate = frames_to(gw.take_outgoing(), p, FrameType::ack);
    ASSERT_EQ(immediate.size(), 1u);
    EXPECT_EQ(ack_status(immediate[0]), AckStatus::duplicate);

    for (int i = 0; i < 3; ++i) gw.step();
    const auto later = frames_to(gw.take_outgoing(), p, FrameType::ack);
    ASSERT_EQ(later.size(), 1u);
    EXPECT_EQ(ack_status(later[0]), AckStatus::ok);

    gw.handle_frame(p, proto::make_command(0, {Opcode::forward, 500, 4}));
    const auto stale = frames_to(gw.take_outgoing(), p, FrameType::ack);
    ASSERT_EQ(stale.size(), 1u);
    EXPECT_EQ(ack_status(stale[0]), AckStatus::stale);

    int cmd_records = 0;
    std::istringstream in(log.str());
    for (std::string line; std::getline(in, line);) {
        if (json::parse(line)["kind"] == "cmd") ++cmd_records;
    }
    EXPECT_EQ(cmd_records, 1);
}

TEST(Gateway, DriveRejectionsAreAckedImmediately) {
    Bench b;
    const auto p = b.gw.create_session(Role::pilot);
    b.gw.attach_drone(p, 0);
    b.gw.handle_frame(p, proto::make_command(0, {Opcode::up, 0, 1}));
    Frame bad_op = proto::make_command(0, {Opcode::up, 100, 2});
    bad_op.payload[0] = 0x0C;
    b.gw.handle_frame(p, bad_op);
    Frame short_payload = proto::make_command(0, {Opcode::up, 100, 3});
    short_payload.payload.pop_back();
    b.gw.handle_frame(p, short_payload);
    // Zero duration is a drone-side verdict, so it arrives after the link latency.
    auto acks = frames_to(b.pump(), p, FrameType::ack);
    ASSERT_EQ(acks.size(), 2u);
    EXPECT_EQ(ack_status(acks[0]), AckStatus::unknown_opcode);
    EXPECT_EQ(ack_status(acks[1]), AckStatus::malformed);
    acks = frames_to(b.pump(3), p, FrameType::ack);
    ASSERT_EQ(acks.size(), 1u);
    EXPECT_EQ(ack_status(acks[0]), AckStatus::bad_duration);
}

TEST(Gateway, DecodeErrorsAreNotAcked) {
    std::ostringstream log;
    World world(Bench::config(1));
    replay::Recorder rec(log, world.config());
    Gateway gw(world, {std::nullopt, &rec});
    const auto p = gw.create_session(Role::pilot);
    gw.handle_decode_error(p, proto::DecodeError::crc_mismatch);
    EXPECT_TRUE(gw.take_outgoing().empty());
    EXPECT_NE(log.str().find("\"reject\""), std::string::npos);
}

TEST(Gateway, ClientMayNotSendDroneFrames) {
    Bench b;
    const auto p = b.gw.create_session(Role::pilot);
    b.gw.handle_frame(p, proto::make_ack(0, 1, AckStatus::ok, FrameType::cmd));
    const auto acks = frames_to(b.pump(), p, FrameType::ack);
    ASSERT_EQ(acks.size(), 1u);
    EXPECT_EQ(ack_status(acks[0]), AckStatus::bad_request);
}

TEST(Gateway, HeightRequiresAttachment) {
    Bench b;
    const auto o = b.gw.create_session(Role::observer);
    b.gw.handle_frame(o, proto::make_height_request(1, 3));
    EXPECT_EQ(ack_status(frames_to(b.pump(), o, FrameType::ack).at(0)), AckStatus::not_pilot);
    b.gw.attach_drone(o, 1);
    b.gw.handle_frame(o, proto::make_height_request(1, 4));
    const auto r = frames_to(b.pump(3), o, FrameType::height_resp);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].seq, 4);
    EXPECT_NEAR(*proto::decode_height(r[0].payload).value, 1.5, 0.011);
}

TEST(Gateway, PeerReachesDestinationPilot) {
    Bench b;
    const auto a = b.gw.create_session(Role::pilot);
    const auto c = b.gw.create_session(Role::pilot);
    b.gw.attach_drone(a, 0);
    b.gw.attach_drone(c, 1);
    const std::vector<std::uint8_t> app{0xca, 0xfe};
    b.gw.handle_frame(a, proto::make_peer(0, 1, 1, app));
    b.gw.handle_frame(c, proto::make_peer(0, 1, 1, app));  // c does not fly drone 0
    auto out = b.pump();
    EXPECT_EQ(ack_status(frames_to(out, c, FrameType::ack).at(0)), AckStatus::not_pilot);
    out = b.pump(3);
    const auto got = frames_to(out, c, FrameType::peer);
    ASSERT_EQ(got.size(), 1u);
    EXPECT_EQ(got[0].drone_id, 0);
    const auto env = proto::decode_peer(got[0].payload);
    EXPECT_EQ(env.value->dst, 1);
    EXPECT_EQ(env.value->app, app);
    EXPECT_TRUE(frames_to(out, a, FrameType::peer).empty());
}

// ---- telemetry ---------------------------------------------------------------

TEST(Gateway, UnsubscribedFrameSessionsGetNoTelemetry) {
    Bench b;
    b.gw.open_session(1, Transport::frames);
    EXPECT_TRUE(frames_to(b.pump(100), 1, FrameType::telemetry).empty());
    b.gw.handle_frame(1, proto::make_discover(0, 1, {proto::DiscoverVerb::subscribe, Role::observer, true}));
    b.pump();
    const auto t = frames_to(b.pump(100), 1, FrameType::telemetry);
    EXPECT_EQ(t.size(), 3u * 20u);
    EXPECT_EQ(t.back().seq, 40);  // tick 200 / divisor 5
    b.gw.subscribe(1, false);
    EXPECT_TRUE(frames_to(b.pump(100), 1, FrameType::telemetry).empty());
}

TEST(Gateway, TelemetryIsScopedToAttachedDrones) {
    Bench b;
    const auto o = b.gw.create_session(Role::observer);
    b.gw.subscribe(o, true);
    b.gw.attach_drone(o, 2);
    const auto t = frames_to(b.pump(50), o, FrameType::telemetry);
    ASSERT_EQ(t.size(), 10u);
    for (const auto& f : t) EXPECT_EQ(f.drone_id, 2);
    const auto snap = proto::decode_telemetry(t.back().payload);
    ASSERT_TRUE(snap);
    EXPECT_EQ(snap.value->tick, 50u);
}

// ---- console -----------------------------------------------------------------

TEST(Console, HelloCommandAndAck) {
    Bench b;
    b.gw.open_session(5, Transport::console);
    b.gw.handle_console(5, {{"op", "hello"}, {"role", "pilot"}, {"name", "ada"}, {"id", 1}});
    auto out = b.pump();
    const auto w = docs_to(out, 5, "welcome");
    ASSERT_EQ(w.size(), 1u);
    EXPECT_EQ(w[0]["role"], "pilot");
    EXPECT_EQ(w[0]["name"], "ada");
    EXPECT_EQ(w[0]["drones"], 3);
    EXPECT_EQ(w[0]["id"], 1);
    EXPECT_DOUBLE_EQ(w[0]["telemetry_hz"].get<double>(), 20.0);

    b.gw.handle_console(5, {{"op", "attach"}, {"drone", 0}});
    EXPECT_EQ(docs_to(b.pump(), 5, "attach").at(0)["status"], "ok");

    b.gw.handle_console(5, {{"op", "cmd"}, {"drone", 0}, {"action", "up"}, {"duration_ms", 500}});
    b.gw.handle_console(5, {{"op", "cmd"}, {"drone", 0}, {"action", "off"}});
    out = b.pump(3);
    const auto acks = docs_to(out, 5, "ack");
    ASSERT_EQ(acks.size(), 2u);
    EXPECT_EQ(acks[0]["seq"], 1);
    EXPECT_EQ(acks[1]["seq"], 2);
    EXPECT_EQ(acks[0]["status"], "ok");
    // Console sessions start subscribed.
    EXPECT_EQ(docs_to(b.pump(2), 5, "telemetry").size(), 1u);

    b.gw.handle_console(5, {{"op", "cmd"}, {"drone", 0}, {"action", "up"}, {"duration_ms", 500}, {"seq", 2}});
    EXPECT_EQ(docs_to(b.pump(), 5, "ack").at(0)["status"], "duplicate");
}

TEST(Console, HeightPeerAndErrors) {
    Bench b;
    b.gw.open_session(5, Transport::console);
    b.gw.handle_console(5, {{"op", "height"}, {"drone", 1}, {"seq", 3}});
    EXPECT_EQ(docs_to(b.pump(), 5, "error").at(0)["reason"], "not_pilot");
    b.gw.handle_console(5, {{"op", "attach"}, {"drone", 1}});
    b.gw.handle_console(5, {{"op", "height"}, {"drone", 1}, {"seq", 3}});
    const auto h = docs_to(b.pump(3), 5, "height");
    ASSERT_EQ(h.size(), 1u);
    EXPECT_EQ(h[0]["seq"], 3);

    b.gw.handle_console(5, {{"op", "peer"}, {"src", 1}, {"dst", "all"}, {"app_hex", "0102"}});
    EXPECT_EQ(docs_to(b.pump(), 5, "error").at(0)["reason"], "not_pilot");

    b.gw.handle_console(5, {{"op", "nope"}, {"drone", 0}});
    b.gw.handle_console(5, {{"op", "cmd"}, {"drone", 9}, {"action", "up"}});
    b.gw.handle_console(5, {{"op", "cmd"}, {"drone", 0}, {"action", "hover"}});
    b.gw.handle_console(5, {{"noop", 1}});
    b.gw.handle_console_text(5, "{oops");
    const auto errors = docs_to(b.pump(), 5, "error");
    ASSERT_EQ(errors.size(), 5u);
    EXPECT_EQ(errors[0]["reason"], "bad_request");
    EXPECT_EQ(errors[1]["reason"], "unknown_drone");
    EXPECT_EQ(errors[2]["reason"], "unknown_opcode");
    EXPECT_EQ(errors[3]["reason"], "bad_request");
    EXPECT_EQ(errors[4]["reason"], "bad_request");
}

TEST(Console, FlockAndRaceNeedOperatorOrPilot) {
    Bench b;
    b.gw.open_session(5, Transport::console);
    b.gw.handle_console(5, {{"op", "flock"}, {"drone", 0}, {"on", true}});
    EXPECT_EQ(docs_to(b.pump(), 5, "error").at(0)["reason"], "not_pilot");
    b.gw.handle_console(5, {{"op", "hello"}, {"role", "operator"}});
    b.gw.handle_console(5, {{"op", "flock"}, {"drone", 0}, {"on", true}});
    b.gw.handle_console(5, {{"op", "race_arm"}, {"drone", 1}});
    b.gw.handle_console(5, {{"op", "race_arm"}, {"drone", 1}});
    b.gw.handle_console(5, {{"op", "race_abort"}, {"drone", 2}});
    const auto out = b.pump();
    EXPECT_EQ(docs_to(out, 5, "flock").size(), 1u);
    EXPECT_EQ(docs_to(out, 5, "race_arm").size(), 1u);
    const auto errors = docs_to(out, 5, "error");
    ASSERT_EQ(errors.size(), 2u);
    EXPECT_EQ(errors[0]["reason"], "conflict");
    EXPECT_EQ(errors[1]["reason"], "bad_request");
    EXPECT_TRUE(b.world.drone(0).flocking);
    EXPECT_TRUE(b.world.drone(1).course);

    b.gw.handle_console(5, {{"op", "race_abort"}, {"drone", 1}});
    const auto results = docs_to(b.pump(1), 5, "race_result");
    ASSERT_EQ(results.size(), 1u);
    EXPECT_TRUE(results[0]["dnf"].get<bool>());
    EXPECT_TRUE(results[0]["pilot"].is_null());
}

// ---- race log ----------------------------------------------------------------

TEST(Races, ResultsPersistAndRankOnLeaderboard) {
    const auto dir = std::filesystem::temp_directory_path() / "blimp_gateway_races";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    {
        std::ofstream seed(dir / "races.jsonl");
        seed << race_row_json({4, "slow", 0.0, 30.0, false}).dump() << '\n';
        seed << race_row_json({5, "quit", 1.0, std::nullopt, true}).dump() << '\n';
        seed << "not json\n";
    }
    {
        Bench b(3, {dir, nullptr});
        ASSERT_EQ(b.gw.race_log().size(), 2u);
        b.gw.open_session(9, Transport::console);
        b.gw.handle_console(9, {{"op", "hello"}, {"role", "pilot"}, {"name", "grace"}});
        b.gw.handle_console(9, {{"op", "attach"}, {"drone", 0}});
        b.gw.handle_console(9, {{"op", "race_arm"}, {"drone", 0}});
        b.gw.handle_console(9, {{"op", "cmd"}, {"drone", 0}, {"action", "forward"}, {"duration_ms", 9000}});
        std::vector<json> progress;
        std::vector<json> results;
        for (int i = 0; i < 1500 && results.empty(); ++i) {
            const auto out = b.pump(1);
            for (auto& p : docs_to(out, 9, "progress")) progress.push_back(p);
            for (auto& r : docs_to(out, 9, "race_result")) results.push_back(r);
        }
        ASSERT_EQ(progress.size(), 3u);
        ASSERT_EQ(results.size(), 1u);
        EXPECT_EQ(results[0]["pilot"], "grace");
        EXPECT_FALSE(results[0]["dnf"].get<bool>());
        EXPECT_LT(results[0]["trial_time"].get<double>(), 30.0);

        b.gw.handle_console(9, {{"op", "leaderboard"}});
        const auto rows = docs_to(b.pump(), 9, "leaderboard").at(0)["rows"];
        ASSERT_EQ(rows.size(), 3u);
        EXPECT_EQ(rows[0]["pilot"], "grace");
        EXPECT_EQ(rows[1]["pilot"], "slow");
        EXPECT_EQ(rows[2]["pilot"], "quit");
        EXPECT_TRUE(rows[2]["trial_time"].is_null());
    }
    Bench reopened(3, {dir, nullptr});
    EXPECT_EQ(reopened.gw.race_log().size(), 3u);
    EXPECT_EQ(reopened.gw.leaderboard().front().pilot, "grace");
    std::filesystem::remove_all(dir);
}

TEST(Races, UnnamedPilotIsIdentifiedBySession) {
    Bench b;
    const auto p = b.gw.create_session(Role::pilot);
    b.gw.attach_drone(p, 2);
    b.gw.open_session(50, Transport::console);
    b.gw.handle_console(50, {{"op", "hello"}, {"role", "operator"}});
    b.gw.handle_console(50, {{"op", "race_arm"}, {"drone", 2}});
    b.pump(1);
    b.gw.handle_console(50, {{"op", "race_abort"}, {"drone", 2}});
    b.pump(1);
    ASSERT_EQ(b.gw.race_log().size(), 1u);
    EXPECT_EQ(b.gw.race_log()[0].pilot, "session-" + std::to_string(p));
}

TEST(Races, RowJsonRoundTrip) {
    const RaceRow r{7, "x", 1.5, 9.25, false};
    const auto back = race_row_from_json(race_row_json(r));
    ASSERT_TRUE(back);
    EXPECT_EQ(back->drone_id, 7);
    EXPECT_EQ(back->pilot, "x");
    EXPECT_EQ(back->trial_time(), 7.75);
    EXPECT_FALSE(race_row_from_json(json{{"drone_id", "x"}}));
}

// ---- exclusivity under arbitrary interleavings -------------------------------

TEST(Gateway, ExclusivityHoldsUnderRandomInterleavings) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Bench b(4);
        std::mt19937_64 gen(seed);
        std::vector<SessionId> live;
        SessionId next = 1000;
        for (int i = 0; i < 800; ++i) {
            const int action = static_cast<int>(gen() % 6);
            const auto drone = static_cast<std::uint8_t>(gen() % 5);
            if (live.empty() || action == 0) {
                live.push_back(next);
                b.gw.open_session(next++, gen() % 2 ? Transport::frames : Transport::console);
                continue;
            }
            const SessionId s = live[gen() % live.size()];
            const auto role = static_cast<Role>(1 + gen() % 3);
            switch (action) {
            case 1: b.gw.handle_frame(s, attach_frame(drone, role, static_cast<std::uint16_t>(i))); break;
            case 2: b.gw.detach_drone(s, drone); break;
            case 3: b.gw.set_role(s, role); break;
            case 4: b.gw.attach_drone(s, drone); break;
            case 5:
                b.gw.close_session(s);
                std::erase(live, s);
                break;
            }
            b.gw.take_outgoing();
            for (std::uint8_t d = 0; d < 4; ++d) {
                int holders = 0;
                for (SessionId id : live) {
                    const Session* ss = b.gw.session(id);
                    ASSERT_TRUE(ss);
                    if (ss->role == Role::pilot && ss->drones.contains(d)) {
                        ++holders;
                        ASSERT_EQ(b.gw.pilot_of(d), id);
                    }
                }
                ASSERT_LE(holders, 1) << "seed " << seed << " step " << i;
                if (holders == 0) ASSERT_FALSE(b.gw.pilot_of(d)) << "seed " << seed << " step " << i;
            }
        }
    }
}
