#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "blimp/world.hpp"

using namespace blimp;

namespace {

WorldConfig config(int drones, double loss = 0.0, std::uint64_t link_seed = 1) {
    WorldConfig c;
    c.drone_count = drones;
    c.link.loss_prob = loss;
    c.link.rng_seed = link_seed;
    return c;
}

template <class T>
std::vector<T> only(const std::vector<Output>& out) {
    std::vector<T> r;
    for (const auto& o : out) {
        if (const auto* p = std::get_if<T>(&o)) r.push_back(*p);
    }
    return r;
}

template <class T>
std::vector<T> run_collect(World& w, int steps) {
    std::vector<T> r;
    for (int i = 0; i < steps; ++i) {
        for (auto& x : only<T>(w.step())) r.push_back(std::move(x));
    }
    return r;
}

input::Command cmd(std::uint8_t drone, Opcode op, std::uint32_t ms, std::uint16_t seq = 1) {
    return {drone, {op, ms, seq}, 7};
}

}  // namespace

TEST(Relay, LossZeroDeliversEveryCopy) {
    World w(config(3));
    const std::vector<std::uint8_t> app{1, 2, 3};
    EXPECT_EQ(w.relay_peer(0, proto::kBroadcast, app).delivered, 2);
    EXPECT_EQ(w.relay_peer(0, 2, app).delivered, 1);
    const auto got = run_collect<output::PeerDelivered>(w, 3);
    ASSERT_EQ(got.size(), 3u);
    EXPECT_EQ(got[0].dst, 1);
    EXPECT_EQ(got[1].dst, 2);
    EXPECT_EQ(got[2].dst, 2);
    EXPECT_EQ(got[0].app, app);
}

TEST(Relay, LossOneDropsEveryCopy) {
    World w(config(3, 1.0));
    for (int i = 0; i < 100; ++i) EXPECT_EQ(w.relay_peer(1, proto::kBroadcast, std::vector<std::uint8_t>{9}).delivered, 0);
    EXPECT_EQ(w.relay_draws(), 200u);
    EXPECT_TRUE(run_collect<output::PeerDelivered>(w, 5).empty());
}

TEST(Relay, UnknownDestination) {
    World w(config(2));
    EXPECT_TRUE(w.relay_peer(0, 5, std::vector<std::uint8_t>{1}).unknown_destination);
    EXPECT_EQ(w.apply(input::Peer{0, 5, {1}}), ApplyStatus::unknown_drone);
    EXPECT_EQ(w.apply(input::Peer{0, 1, std::vector<std::uint8_t>(proto::kMaxPeerApp + 1)}), ApplyStatus::rejected);
    EXPECT_EQ(w.relay_draws(), 0u);
}

// Independent model of the loss stream: 64-bit Mersenne Twister, top 53 bits
// as a uniform in [0, 1), one draw per copy.
TEST(Relay, LossMatchesSeededStreamOracle) {
    World w(config(2, 0.5, 7));
    std::mt19937_64 oracle(7);
    int expected = 0;
    int delivered = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const double u = static_cast<double>(oracle() >> 11) * 0x1.0p-53;
        if (!(u < 0.5)) ++expected;
        delivered += w.relay_peer(0, proto::kBroadcast, std::vector<std::uint8_t>{static_cast<std::uint8_t>(i)}).delivered;
    }
    EXPECT_EQ(delivered, expected);
    EXPECT_NEAR(static_cast<double>(delivered) / n, 0.5, 0.02);
    EXPECT_EQ(run_collect<output::PeerDelivered>(w, 3).size(), static_cast<std::size_t>(delivered));
}

TEST(Relay, LossyPresetLatency) {
    auto c = config(2);
    c.link = LinkModel::lossy_preset(3);
    World w(c);
    EXPECT_EQ(w.latency_ticks(), 5);
    EXPECT_DOUBLE_EQ(c.link.loss_prob, 0.1);
}

TEST(World, CommandsTakeEffectAfterLinkLatency) {
    World w(config(1));
    ASSERT_EQ(w.latency_ticks(), 2);
    ASSERT_EQ(w.apply(cmd(0, Opcode::up, 1000, 11)), ApplyStatus::ok);
    EXPECT_TRUE(only<output::CommandResult>(w.step()).empty());
    EXPECT_TRUE(only<output::CommandResult>(w.step()).empty());
    const auto r = only<output::CommandResult>(w.step());
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].session, 7u);
    EXPECT_EQ(r[0].seq, 11);
    EXPECT_EQ(r[0].verdict, CommandVerdict::accepted);
    const auto& active = w.drone(0).runtime.channel(Channel::vertical).active;
    ASSERT_TRUE(active);
    EXPECT_EQ(active->activated_at, 2);
    EXPECT_EQ(active->expires_at, 102);
}

TEST(World, RejectedCommandIsReported) {
    World w(config(1));
    w.apply(cmd(0, Opcode::up, 0));
    const auto r = run_collect<output::CommandResult>(w, 3);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].verdict, CommandVerdict::bad_duration);
    EXPECT_EQ(w.apply(cmd(3, Opcode::up, 100)), ApplyStatus::unknown_drone);
}

TEST(World, TelemetryCadence) {
    for (int steps : {1, 4, 5, 99, 333, 1000}) {
        World w(config(3));
        const auto t = run_collect<output::Telemetry>(w, steps);
        const double seconds = steps * 0.01;
        EXPECT_EQ(t.size(), 3u * static_cast<std::size_t>(std::floor(20.0 * seconds + 1e-9))) << steps;
    }
}

TEST(World, TelemetryReportsActiveChannels) {
    World w(config(1));
    w.apply(cmd(0, Opcode::forward, 1000));
    const auto t = run_collect<output::Telemetry>(w, 5);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].snapshot.tick, 5u);
    EXPECT_EQ(t[0].snapshot.channels[static_cast<int>(Channel::lateral)].opcode,
              static_cast<std::uint8_t>(Opcode::forward));
    EXPECT_EQ(t[0].snapshot.channels[static_cast<int>(Channel::lateral)].remaining_ms, 970u);
}

TEST(World, HeightReadingEndToEnd) {
    World w(config(1));
    w.apply(input::Height{0, 21, 9});
    w.step();
    w.step();
    const double z = w.drone(0).state.position.z;
    const auto r = only<output::HeightResult>(w.step());
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].session, 9u);
    EXPECT_EQ(r[0].seq, 21);
    EXPECT_DOUBLE_EQ(r[0].meters, std::floor(z / 0.01) * 0.01);
}

TEST(World, ForwardFlightRunsTheDefaultCourse) {
    World w(config(1));
    ASSERT_EQ(w.apply(input::RaceArm{0}), ApplyStatus::ok);
    ASSERT_EQ(w.apply(cmd(0, Opcode::forward, 9000)), ApplyStatus::ok);
    std::vector<output::Progress> progress;
    std::vector<output::RaceResult> results;
    for (int i = 0; i < 1500 && results.empty(); ++i) {
        const auto out = w.step();
        for (auto& p : only<output::Progress>(out)) progress.push_back(p);
        for (auto& r : only<output::RaceResult>(out)) results.push_back(r);
    }
    ASSERT_EQ(progress.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_EQ(progress[static_cast<std::size_t>(i)].hoop, i);
    ASSERT_TRUE(progress[0].split);
    EXPECT_EQ(*progress[0].split, 0.0);  // the start gate starts the clock
    EXPECT_GT(*progress[2].split, *progress[1].split);
    ASSERT_EQ(results.size(), 1u);
    EXPECT_FALSE(results[0].dnf);
    // Two 2 m legs at no more than terminal speed.
    EXPECT_GE(*results[0].finish_t - *results[0].start_t, 4.0 / 1.2);
    EXPECT_EQ(results[0].finish_t, progress[2].t);
}

TEST(World, AbortRecordsDnf) {
    World w(config(2));
    EXPECT_EQ(w.apply(input::RaceAbort{1}), ApplyStatus::rejected);
    ASSERT_EQ(w.apply(input::RaceArm{1}), ApplyStatus::ok);
    EXPECT_EQ(w.apply(input::RaceArm{1}), ApplyStatus::rejected);
    w.step();
    ASSERT_EQ(w.apply(input::RaceAbort{1}), ApplyStatus::ok);
    const auto r = only<output::RaceResult>(w.step());
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].drone, 1);
    EXPECT_TRUE(r[0].dnf);
    EXPECT_FALSE(r[0].start_t);
    EXPECT_FALSE(w.drone(1).course);
}

TEST(World, FlockingDronesExchangeSnapshots) {
    World w(config(3));
    w.apply(input::Flock{0, true});
    w.apply(input::Flock{1, true});
    for (int i = 0; i < 10; ++i) w.step();
    // Drone 0 hears from 1 only; drone 2 is not flocking and sends nothing.
    ASSERT_EQ(w.drone(0).peers.size(), 1u);
    EXPECT_EQ(w.drone(0).peers.begin()->first, 1);
    EXPECT_TRUE(w.drone(2).peers.empty());
    w.apply(input::Flock{0, false});
    EXPECT_TRUE(w.drone(0).peers.empty());
}

TEST(World, IdenticalInputsGiveIdenticalHashes) {
    auto c = config(3, 0.3, 5);
    c.sensor.noise_sd = 0.02;
    auto run = [&](std::uint64_t seed) {
        auto cc = c;
        cc.seed = seed;
        World w(cc);
        w.apply(input::Flock{0, true});
        w.apply(input::Flock{1, true});
        w.apply(input::Flock{2, true});
        for (int i = 0; i < 500; ++i) {
            if (i == 100) w.apply(cmd(0, Opcode::turn_left, 700));
            w.step();
        }
        return w.state_hash();
    };
    EXPECT_EQ(run(1), run(1));
    EXPECT_NE(run(1), run(2));
}

TEST(World, RejectsInvalidConfig) {
    auto c = config(9);
    EXPECT_THROW(World{c}, std::invalid_argument);
    c = config(0);
    EXPECT_THROW(World{c}, std::invalid_argument);
    c = config(2, 1.5);
    EXPECT_THROW(World{c}, std::invalid_argument);
}
