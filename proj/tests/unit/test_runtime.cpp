#include <cmath>

#include <gtest/gtest.h>

#include "blimp/runtime.hpp"

using namespace blimp;

namespace {

struct Rig {
    PhysicsParams p;
    DroneState s;
    DroneRuntime rt;
    Tick now = 0;

    explicit Rig(double z = 1.0) : rt(p, z) { s.position.z = z; }

    ChannelThrust tick() {
        const auto out = rt.tick(s, now);
        s.thrust = clamp_thrust(out, p);
        s = step(s, p);
        ++now;
        return out;
    }

    CommandVerdict send(Opcode op, std::uint32_t ms = 0) { return rt.enqueue({op, ms, 0}, now, s); }
};

}  // namespace

TEST(Runtime, DurationTicks) {
    EXPECT_EQ(duration_ticks(2000, 0.01), 200);
    EXPECT_EQ(duration_ticks(1, 0.01), 1);
    EXPECT_EQ(duration_ticks(14, 0.01), 1);
    EXPECT_EQ(duration_ticks(15, 0.01), 2);
    EXPECT_EQ(duration_ticks(60000, 0.01), 6000);
}

TEST(Runtime, UpTwoSecondsIsExactly200TicksOfMaxThrust) {
    Rig r;
    ASSERT_EQ(r.send(Opcode::up, 2000), CommandVerdict::accepted);
    int at_max = 0;
    int first = -1;
    int last = -1;
    for (int i = 0; i < 400; ++i) {
        const auto out = r.tick();
        if (out.vertical == r.p.max_vertical_thrust) {
            ++at_max;
            if (first < 0) first = i;
            last = i;
        }
    }
    EXPECT_EQ(at_max, 200);
    EXPECT_EQ(first, 0);
    EXPECT_EQ(last, 199);
}

TEST(Runtime, DurationLimits) {
    Rig r;
    EXPECT_EQ(r.send(Opcode::up, 0), CommandVerdict::bad_duration);
    EXPECT_EQ(r.send(Opcode::up, kMaxCommandMs + 1), CommandVerdict::bad_duration);
    EXPECT_FALSE(r.rt.channel(Channel::vertical).active);
    EXPECT_EQ(r.send(Opcode::up, kMaxCommandMs), CommandVerdict::accepted);
    EXPECT_EQ(r.rt.channel(Channel::vertical).active->expires_at, 6000);
}

TEST(Runtime, UnknownOpcodeRejected) {
    Rig r;
    EXPECT_EQ(r.rt.enqueue({static_cast<Opcode>(0x09), 100, 0}, 0, r.s), CommandVerdict::unknown_opcode);
}

TEST(Runtime, LatestCommandOnChannelWins) {
    Rig r;
    r.send(Opcode::up, 2000);
    for (int i = 0; i < 50; ++i) r.tick();
    r.send(Opcode::down, 300);
    const auto& v = r.rt.channel(Channel::vertical).active;
    ASSERT_TRUE(v);
    EXPECT_EQ(v->opcode, Opcode::down);
    EXPECT_EQ(v->activated_at, 50);
    EXPECT_EQ(v->expires_at, 80);
    EXPECT_EQ(r.tick().vertical, -r.p.max_vertical_thrust);
}

TEST(Runtime, ChannelsRunIndependently) {
    Rig r;
    r.send(Opcode::up, 1000);
    r.send(Opcode::forward, 500);
    r.send(Opcode::turn_right, 200);
    const auto out = r.tick();
    EXPECT_EQ(out.vertical, r.p.max_vertical_thrust);
    EXPECT_EQ(out.lateral, r.p.max_lateral_thrust);
    EXPECT_EQ(out.yaw, -r.p.max_yaw_torque);
    for (int i = 0; i < 30; ++i) r.tick();
    EXPECT_FALSE(r.rt.channel(Channel::yaw).active);
    EXPECT_TRUE(r.rt.channel(Channel::lateral).active);
    EXPECT_TRUE(r.rt.channel(Channel::vertical).active);
}

TEST(Runtime, TurnDirections) {
    Rig r;
    r.send(Opcode::turn_left, 100);
    EXPECT_GT(r.tick().yaw, 0.0);
    r.send(Opcode::turn_right, 100);
    EXPECT_LT(r.tick().yaw, 0.0);
    r.send(Opcode::backward, 100);
    EXPECT_LT(r.tick().lateral, 0.0);
}

TEST(Runtime, OffClearsChannelsAndHoldsCurrentAltitude) {
    Rig r;
    r.send(Opcode::up, 3000);
    r.send(Opcode::forward, 3000);
    r.send(Opcode::turn_left, 3000);
    for (int i = 0; i < 100; ++i) r.tick();
    EXPECT_FALSE(r.rt.hold().engaged);
    const double z = r.s.position.z;
    ASSERT_EQ(r.send(Opcode::off), CommandVerdict::accepted);
    for (const auto& ch : r.rt.channels()) EXPECT_FALSE(ch.active);
    EXPECT_TRUE(r.rt.hold().engaged);
    EXPECT_EQ(r.rt.hold().target_z, z);
    const auto out = r.tick();
    EXPECT_EQ(out.yaw, 0.0);
    EXPECT_EQ(out.lateral, 0.0);
}

TEST(Runtime, OffIgnoresDuration) {
    Rig r;
    EXPECT_EQ(r.send(Opcode::off, 0), CommandVerdict::accepted);
    EXPECT_EQ(r.send(Opcode::off, 999999), CommandVerdict::accepted);
}

TEST(Runtime, HoldRecapturesAltitudeWhenVerticalExpires) {
    Rig r;
    r.send(Opcode::up, 1000);
    for (int i = 0; i < 100; ++i) r.tick();
    const double z_at_expiry = r.s.position.z;
    r.tick();
    EXPECT_TRUE(r.rt.hold().engaged);
    EXPECT_EQ(r.rt.hold().target_z, z_at_expiry);
    EXPECT_GT(z_at_expiry, 1.0);
}

TEST(Runtime, HoverThrustSettlesToNetWeight) {
    Rig r(1.5);
    double out = 0.0;
    for (int i = 0; i < 60000; ++i) out = r.tick().vertical;
    EXPECT_NEAR(out, r.p.net_weight, 0.05 * r.p.net_weight);
    EXPECT_NEAR(r.s.position.z, 1.5, 0.02);
}

// Hold from a warmed-up hover after the target moves by `delta`.
void check_step_response(double delta) {
    Rig r(1.5);
    for (int i = 0; i < 6000; ++i) r.tick();
    r.rt.hold_at(1.5 + delta);
    const Tick start = r.now;
    double worst_after_15 = 0.0;
    for (int i = 0; i < 30000; ++i) {
        r.tick();
        const double t = static_cast<double>(r.now - start) * r.p.dt;
        ASSERT_LE(std::abs(r.rt.hold().integral), r.rt.hold().gains.integral_limit);
        if (t >= 15.0) worst_after_15 = std::max(worst_after_15, std::abs(r.s.position.z - (1.5 + delta)));
    }
    EXPECT_LE(worst_after_15, 0.02) << "delta " << delta;
}

TEST(Runtime, HoldSettlesFromHalfMeterAbove) { check_step_response(-0.5); }
TEST(Runtime, HoldSettlesFromHalfMeterBelow) { check_step_response(0.5); }

TEST(Runtime, HoldOutputStaysWithinActuatorRange) {
    Rig r(0.2);
    r.rt.hold_at(2.8);
    for (int i = 0; i < 5000; ++i) {
        const auto out = r.tick();
        ASSERT_GE(out.vertical, 0.0);
        ASSERT_LE(out.vertical, r.p.max_vertical_thrust);
    }
}

TEST(Runtime, HeightIsFloorQuantized) {
    RngStream rng(1);
    DroneState s;
    s.position.z = 1.234;
    EXPECT_DOUBLE_EQ(read_height(s, 0.01, 0.0, rng), 1.23);
    s.position.z = 1.23;
    EXPECT_DOUBLE_EQ(read_height(s, 0.01, 0.0, rng), 1.23);
    s.position.z = 0.0;
    EXPECT_EQ(read_height(s, 0.01, 0.0, rng), 0.0);
    s.position.z = 0.009;
    EXPECT_EQ(read_height(s, 0.01, 0.0, rng), 0.0);
}

TEST(Runtime, NoiselessHeightDrawsNothing) {
    RngStream used(5);
    RngStream fresh(5);
    DroneState s;
    s.position.z = 1.0;
    for (int i = 0; i < 10; ++i) read_height(s, 0.01, 0.0, used);
    EXPECT_EQ(used.next_u64(), fresh.next_u64());
}

TEST(Runtime, NoisyHeightDrawsTwicePerReading) {
    RngStream used(5);
    RngStream fresh(5);
    DroneState s;
    s.position.z = 1.0;
    const double h = read_height(s, 0.01, 0.05, used);
    EXPECT_GE(h, 0.0);
    fresh.next_u64();
    fresh.next_u64();
    EXPECT_EQ(used.next_u64(), fresh.next_u64());
}

TEST(Runtime, OpcodeNames) {
    for (std::uint8_t b = 1; b <= 7; ++b) {
        const auto op = opcode_from_byte(b);
        ASSERT_TRUE(op);
        EXPECT_EQ(opcode_from_name(opcode_name(*op)), op);
    }
    EXPECT_FALSE(opcode_from_byte(0));
    EXPECT_FALSE(opcode_from_byte(8));
    EXPECT_FALSE(opcode_from_name("hover"));
    EXPECT_FALSE(channel_of(Opcode::off));
}
