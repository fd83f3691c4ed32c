#pragma once

// Binary frame layout (all multi-byte fields little-endian):
//
//   0  magic      'B' 'D' (0x42 0x44)
//   2  version    0x01
//   3  ftype      see FrameType
//   4  drone_id
//   5  seq        u16
//   7  length     u16, payload bytes, <= 512
//   9  payload
//   .. crc        u16, CRC-16/CCITT-FALSE over every preceding byte
//
// docs/protocol.md is the byte-level reference for every payload below.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blimp/runtime.hpp"
#include "blimp/vec3.hpp"

namespace blimp::proto {

inline constexpr std::uint8_t kMagic0 = 0x42;
inline constexpr std::uint8_t kMagic1 = 0x44;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 9;
inline constexpr std::size_t kCrcSize = 2;
inline constexpr std::size_t kMaxPayload = 512;
inline constexpr std::size_t kMaxFrameSize = kHeaderSize + kMaxPayload + kCrcSize;
inline constexpr std::uint8_t kBroadcast = 0xFF;

enum class FrameType : std::uint8_t {
    cmd = 0x10,
    ack = 0x11,
    telemetry = 0x20,
    peer = 0x30,
    discover = 0x40,
    announce = 0x41,
    height_req = 0x50,
    height_resp = 0x51,
};

bool is_known_type(std::uint8_t t);
std::string_view type_name(FrameType t);

struct Frame {
    FrameType type = FrameType::discover;
    std::uint8_t drone_id = 0;
    std::uint16_t seq = 0;
    std::vector<std::uint8_t> payload;

    friend bool operator==(const Frame&, const Frame&) = default;
};

std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data);

class EncodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);

enum class DecodeError : std::uint8_t {
    none,
    magic_mismatch,
    version_unsupported,
    length_overrun,
    crc_mismatch,
    unknown_type,
};

std::string_view describe(DecodeError e);

struct DecodeResult {
    std::optional<Frame> frame;
    DecodeError error = DecodeError::none;

    explicit operator bool() const { return frame.has_value(); }
};

/// Decodes a buffer holding exactly one frame.
DecodeResult decode_frame(std::span<const std::uint8_t> bytes);

/// Reassembles frames from a byte stream. On a bad frame the reader reports
/// the error once and resynchronises on the next magic pair.
class FrameReader {
public:
    void feed(std::span<const std::uint8_t> bytes);

    /// Next complete frame or decode error; nullopt when more bytes are needed.
    std::optional<DecodeResult> next();

    std::size_t buffered() const { return buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
};

// ---- payloads --------------------------------------------------------------

enum class AckStatus : std::uint8_t {
    ok = 0x00,
    duplicate = 0x01,
    bad_duration = 0x02,
    unknown_opcode = 0x03,
    not_pilot = 0x04,
    malformed = 0x05,
    unknown_drone = 0x06,
    conflict = 0x07,
    stale = 0x08,
    bad_request = 0x09,
};

std::string_view describe(AckStatus s);

struct Ack {
    AckStatus status = AckStatus::ok;
    FrameType acked = FrameType::cmd;
};

enum class PayloadError : std::uint8_t { none, bad_length, unknown_opcode, bad_value };

template <typename T>
struct Parsed {
    std::optional<T> value;
    PayloadError error = PayloadError::none;

    explicit operator bool() const { return value.has_value(); }
};

std::vector<std::uint8_t> encode_command(const TimedCommand& cmd);
Parsed<TimedCommand> decode_command(std::span<const std::uint8_t> payload, std::uint16_t seq);

Frame make_command(std::uint8_t drone_id, const TimedCommand& cmd);
Frame make_ack(std::uint8_t drone_id, std::uint16_t seq, AckStatus status, FrameType acked);
Parsed<Ack> decode_ack(std::span<const std::uint8_t> payload);

Frame make_height_request(std::uint8_t drone_id, std::uint16_t seq);
Frame make_height_response(std::uint8_t drone_id, std::uint16_t seq, double meters);
Parsed<double> decode_height(std::span<const std::uint8_t> payload);

/// Session verbs carried in DISCOVER payloads. An empty payload is a query.
enum class DiscoverVerb : std::uint8_t { query = 0x00, attach = 0x01, detach = 0x02, subscribe = 0x03 };

enum class Role : std::uint8_t { pilot = 0x01, operator_ = 0x02, observer = 0x03 };
std::optional<Role> role_from_byte(std::uint8_t b);
std::optional<Role> role_from_name(std::string_view name);
std::string_view role_name(Role r);

struct DiscoverRequest {
    DiscoverVerb verb = DiscoverVerb::query;
    Role role = Role::observer;  // attach only
    bool subscribe = false;      // subscribe only
};

Frame make_discover(std::uint8_t drone_id, std::uint16_t seq, const DiscoverRequest& req = {});
Parsed<DiscoverRequest> decode_discover(std::span<const std::uint8_t> payload);

struct Announce {
    std::uint8_t drone_count = 0;
    bool piloted = false;
};

Frame make_announce(std::uint8_t drone_id, std::uint16_t seq, const Announce& a);
Parsed<Announce> decode_announce(std::span<const std::uint8_t> payload);

/// PEER payload: destination byte (0xFF broadcast) followed by the
/// application bytes. The frame's drone_id is the sender.
inline constexpr std::size_t kMaxPeerApp = kMaxPayload - 1;

struct PeerEnvelope {
    std::uint8_t dst = kBroadcast;
    std::vector<std::uint8_t> app;
};

Frame make_peer(std::uint8_t src, std::uint16_t seq, std::uint8_t dst, std::span<const std::uint8_t> app);
Parsed<PeerEnvelope> decode_peer(std::span<const std::uint8_t> payload);

/// Application payload flocking drones exchange over PEER frames.
struct SnapshotPayload {
    std::array<float, 3> position{};
    std::array<float, 3> velocity{};
    std::uint32_t stamp_ms = 0;

    friend bool operator==(const SnapshotPayload&, const SnapshotPayload&) = default;
};

inline constexpr std::uint8_t kSnapshotTag = 0x01;
inline constexpr std::size_t kSnapshotSize = 1 + 6 * 4 + 4;

std::vector<std::uint8_t> encode_snapshot(const SnapshotPayload& s);
Parsed<SnapshotPayload> decode_snapshot(std::span<const std::uint8_t> app);

struct ChannelReport {
    std::uint8_t opcode = 0;  // 0 when idle
    std::uint32_t remaining_ms = 0;

    friend bool operator==(const ChannelReport&, const ChannelReport&) = default;
};

struct Telemetry {
    std::uint32_t tick = 0;
    double time = 0.0;
    Vec3 position;
    Vec3 velocity;
    double heading = 0.0;
    double yaw_rate = 0.0;
    double height = 0.0;
    std::array<ChannelReport, 3> channels{};  // vertical, yaw, lateral
    bool hold_engaged = false;
    bool flocking = false;
    double hold_target = 0.0;
    std::uint8_t next_hoop = 0;

    friend bool operator==(const Telemetry&, const Telemetry&) = default;
};

inline constexpr std::size_t kTelemetrySize = 109;

std::vector<std::uint8_t> encode_telemetry(const Telemetry& t);
Parsed<Telemetry> decode_telemetry(std::span<const std::uint8_t> payload);

// ---- sequencing ------------------------------------------------------------

enum class SeqVerdict : std::uint8_t { accept, duplicate, stale };

inline constexpr std::uint16_t kSeqWindow = 1024;

/// Tracks the newest sequence number per (drone, frame class). A number is
/// newer when its forward circular distance from the last one is in
/// [1, kSeqWindow).
class SeqTracker {
public:
    SeqVerdict accept(std::uint8_t drone_id, std::uint8_t frame_class, std::uint16_t seq);
    std::optional<std::uint16_t> last(std::uint8_t drone_id, std::uint8_t frame_class) const;

private:
    std::map<std::uint16_t, std::uint16_t> last_;
};

constexpr std::uint8_t frame_class(FrameType t) { return static_cast<std::uint8_t>(t) >> 4; }

/// Pure classification used by SeqTracker.
SeqVerdict classify_seq(std::uint16_t last, std::uint16_t incoming);

// ---- text helpers ----------------------------------------------------------

std::optional<std::vector<std::uint8_t>> parse_hex(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes, bool spaced = false);

/// Multi-line human-readable description of a frame.
std::string describe(const Frame& f);

}  // namespace blimp::proto
