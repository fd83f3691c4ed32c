#include "blimp/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <sstream>

#include <fmt/format.h>

namespace blimp::proto {

namespace {

constexpr std::array<std::uint16_t, 256> make_crc_table() {
    std::array<std::uint16_t, 256> table{};
    for (std::uint16_t i = 0; i < 256; ++i) {
        std::uint16_t crc = static_cast<std::uint16_t>(i << 8);
        for (int b = 0; b < 8; ++b) {
            crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x1021)
                                 : static_cast<std::uint16_t>(crc << 1);
        }
        table[i] = crc;
    }
    return table;
}

constexpr auto kCrcTable = make_crc_table();

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        out_.push_back(static_cast<std::uint8_t>(v));
        out_.push_back(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }

private:
    std::vector<std::uint8_t>& out_;
};

// Callers check the total length up front; reads past the end are a bug.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() { return in_[pos_++]; }
    std::uint16_t u16() {
        const std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

bool is_known_type(std::uint8_t t) {
    switch (t) {
    case 0x10: case 0x11: case 0x20: case 0x30:
    case 0x40: case 0x41: case 0x50: case 0x51:
        return true;
    default:
        return false;
    }
}

std::string_view type_name(FrameType t) {
    switch (t) {
    case FrameType::cmd: return "CMD";
    case FrameType::ack: return "ACK";
    case FrameType::telemetry: return "TELEMETRY";
    case FrameType::peer: return "PEER";
    case FrameType::discover: return "DISCOVER";
    case FrameType::announce: return "ANNOUNCE";
    case FrameType::height_req: return "HEIGHT_REQ";
    case FrameType::height_resp: return "HEIGHT_RESP";
    }
    return "UNKNOWN";
}

std::uint16_t crc16_ccitt(std::span<const std::uint8_t> data) {
    std::uint16_t crc = 0xFFFF;
    for (std::uint8_t b : data) {
        crc = static_cast<std::uint16_t>((crc << 8) ^ kCrcTable[((crc >> 8) ^ b) & 0xFF]);
    }
    return crc;
}

std::vector<std::uint8_t> encode_frame(const Frame& f) {
    if (f.payload.size() > kMaxPayload) {
        throw EncodeError(fmt::format("payload of {} bytes exceeds the {} byte limit", f.payload.size(), kMaxPayload));
    }
    if (!is_known_type(static_cast<std::uint8_t>(f.type))) throw EncodeError("unknown frame type");

    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + f.payload.size() + kCrcSize);
    Writer w(out);
    w.u8(kMagic0);
    w.u8(kMagic1);
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(f.type));
    w.u8(f.drone_id);
    w.u16(f.seq);
    w.u16(static_cast<std::uint16_t>(f.payload.size()));
    w.bytes(f.payload);
    w.u16(crc16_ccitt(out));
    return out;
}

std::string_view describe(DecodeError e) {
    switch (e) {
    case DecodeError::none: return "ok";
    case DecodeError::magic_mismatch: return "MagicMismatch";
    case DecodeError::version_unsupported: return "VersionUnsupported";
    case DecodeError::length_overrun: return "LengthOverrun";
    case DecodeError::crc_mismatch: return "CrcMismatch";
    case DecodeError::unknown_type: return "UnknownType";
    }
    return "unknown";
}

DecodeResult decode_frame(std::span<const std::uint8_t> b) {
    if (b.size() < kHeaderSize) return {std::nullopt, DecodeError::length_overrun};
    if (b[0] != kMagic0 || b[1] != kMagic1) return {std::nullopt, DecodeError::magic_mismatch};
    if (b[2] != kVersion) return {std::nullopt, DecodeError::version_unsupported};

    const std::size_t len = read_u16(b, 7);
    // A frame must fill the buffer exactly; a length field that disagrees
    // either way is an overrun of the declared extent.
    if (len > kMaxPayload || kHeaderSize + len + kCrcSize != b.size()) {
        return {std::nullopt, DecodeError::length_overrun};
    }
    const std::size_t body = kHeaderSize + len;
    if (crc16_ccitt(b.first(body)) != read_u16(b, body)) return {std::nullopt, DecodeError::crc_mismatch};
    if (!is_known_type(b[3])) return {std::nullopt, DecodeError::unknown_type};

    Frame f;
    f.type = static_cast<FrameType>(b[3]);
    f.drone_id = b[4];
    f.seq = read_u16(b, 5);
    f.payload.assign(b.begin() + kHeaderSize, b.begin() + static_cast<std::ptrdiff_t>(body));
    return {std::move(f), DecodeError::none};
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

std::optional<DecodeResult> FrameReader::next() {
    // Drop leading garbage up to the next candidate magic.
    std::size_t skip = 0;
    while (skip < buf_.size() && buf_[skip] != kMagic0) ++skip;
    if (skip > 0) {
        buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(skip));
        return DecodeResult{std::nullopt, DecodeError::magic_mismatch};
    }
    if (buf_.size() < kHeaderSize) return std::nullopt;

    auto fail = [this](DecodeError e) {
        buf_.erase(buf_.begin());
        return DecodeResult{std::nullopt, e};
    };
    if (buf_[1] != kMagic1) return fail(DecodeError::magic_mismatch);
    if (buf_[2] != kVersion) return fail(DecodeError::version_unsupported);
    const std::size_t len = read_u16(buf_, 7);
    if (len > kMaxPayload) return fail(DecodeError::length_overrun);
    const std::size_t total = kHeaderSize + len + kCrcSize;
    if (buf_.size() < total) return std::nullopt;

    DecodeResult r = decode_frame(std::span(buf_).first(total));
    if (!r) return fail(r.error);
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(total));
    return r;
}

// ---- payloads --------------------------------------------------------------

std::string_view describe(AckStatus s) {
    switch (s) {
    case AckStatus::ok: return "ok";
    case AckStatus::duplicate: return "duplicate";
    case AckStatus::bad_duration: return "duration out of range (1..60000 ms)";
    case AckStatus::unknown_opcode: return "unknown opcode";
    case AckStatus::not_pilot: return "session is not the pilot of this drone";
    case AckStatus::malformed: return "malformed frame";
    case AckStatus::unknown_drone: return "unknown drone";
    case AckStatus::conflict: return "drone already has a pilot";
    case AckStatus::stale: return "stale sequence number";
    case AckStatus::bad_request: return "bad request";
    }
    return "unknown status";
}

std::vector<std::uint8_t> encode_command(const TimedCommand& cmd) {
    std::vector<std::uint8_t> out;
    Writer w(out);
    w.u8(static_cast<std::uint8_t>(cmd.opcode));
    if (is_timed(cmd.opcode)) w.u32(cmd.duration_ms);
    return out;
}

Parsed<TimedCommand> decode_command(std::span<const std::uint8_t> p, std::uint16_t seq) {
    if (p.empty()) return {std::nullopt, PayloadError::bad_length};
    const auto op = opcode_from_byte(p[0]);
    if (!op) return {std::nullopt, PayloadError::unknown_opcode};
    TimedCommand cmd{*op, 0, seq};
    if (is_timed(*op)) {
        if (p.size() != 5) return {std::nullopt, PayloadError::bad_length};
        Reader r(p.subspan(1));
        cmd.duration_ms = r.u32();
    } else if (p.size() != 1) {
        return {std::nullopt, PayloadError::bad_length};
    }
    return {cmd, PayloadError::none};
}

Frame make_command(std::uint8_t drone_id, const TimedCommand& cmd) {
    return Frame{FrameType::cmd, drone_id, cmd.seq, encode_command(cmd)};
}

Frame make_ack(std::uint8_t drone_id, std::uint16_t seq, AckStatus status, FrameType acked) {
    return Frame{FrameType::ack, drone_id, seq,
                 {static_cast<std::uint8_t>(status), static_cast<std::uint8_t>(acked)}};
}

Parsed<Ack> decode_ack(std::span<const std::uint8_t> p) {
    if (p.size() != 2) return {std::nullopt, PayloadError::bad_length};
    if (p[0] > static_cast<std::uint8_t>(AckStatus::bad_request) || !is_known_type(p[1])) {
        return {std::nullopt, PayloadError::bad_value};
    }
    return {Ack{static_cast<AckStatus>(p[0]), static_cast<FrameType>(p[1])}, PayloadError::none};
}

Frame make_height_request(std::uint8_t drone_id, std::uint16_t seq) {
    return Frame{FrameType::height_req, drone_id, seq, {}};
}

Frame make_height_response(std::uint8_t drone_id, std::uint16_t seq, double meters) {
    Frame f{FrameType::height_resp, drone_id, seq, {}};
    Writer(f.payload).f64(meters);
    return f;
}

Parsed<double> decode_height(std::span<const std::uint8_t> p) {
    if (p.size() != 8) return {std::nullopt, PayloadError::bad_length};
    return {Reader(p).f64(), PayloadError::none};
}

std::optional<Role> role_from_byte(std::uint8_t b) {
    if (b >= 0x01 && b <= 0x03) return static_cast<Role>(b);
    return std::nullopt;
}

std::optional<Role> role_from_name(std::string_view name) {
    if (name == "pilot") return Role::pilot;
    if (name == "operator") return Role::operator_;
    if (name == "observer") return Role::observer;
    return std::nullopt;
}

std::string_view role_name(Role r) {
    switch (r) {
    case Role::pilot: return "pilot";
    case Role::operator_: return "operator";
    case Role::observer: return "observer";
    }
    return "unknown";
}

Frame make_discover(std::uint8_t drone_id, std::uint16_t seq, const DiscoverRequest& req) {
    Frame f{FrameType::discover, drone_id, seq, {}};
    switch (req.verb) {
    case DiscoverVerb::query:
        break;
    case DiscoverVerb::attach:
        f.payload = {static_cast<std::uint8_t>(req.verb), static_cast<std::uint8_t>(req.role)};
        break;
    case DiscoverVerb::detach:
        f.payload = {static_cast<std::uint8_t>(req.verb)};
        break;
    case DiscoverVerb::subscribe:
        f.payload = {static_cast<std::uint8_t>(req.verb), static_cast<std::uint8_t>(req.subscribe ? 1 : 0)};
        break;
    }
    return f;
}

Parsed<DiscoverRequest> decode_discover(std::span<const std::uint8_t> p) {
    if (p.empty()) return {DiscoverRequest{}, PayloadError::none};
    DiscoverRequest req;
    switch (p[0]) {
    case 0x01: {
        if (p.size() != 2) return {std::nullopt, PayloadError::bad_length};
        const auto role = role_from_byte(p[1]);
        if (!role) return {std::nullopt, PayloadError::bad_value};
        req.verb = DiscoverVerb::attach;
        req.role = *role;
        return {req, PayloadError::none};
    }
    case 0x02:
        if (p.size() != 1) return {std::nullopt, PayloadError::bad_length};
        req.verb = DiscoverVerb::detach;
        return {req, PayloadError::none};
    case 0x03:
        if (p.size() != 2 || p[1] > 1) return {std::nullopt, PayloadError::bad_value};
        req.verb = DiscoverVerb::subscribe;
        req.subscribe = p[1] == 1;
        return {req, PayloadError::none};
    default:
        return {std::nullopt, PayloadError::bad_value};
    }
}

Frame make_announce(std::uint8_t drone_id, std::uint16_t seq, const Announce& a) {
    return Frame{FrameType::announce, drone_id, seq, {a.drone_count, static_cast<std::uint8_t>(a.piloted ? 1 : 0)}};
}

Parsed<Announce> decode_announce(std::span<const std::uint8_t> p) {
    if (p.size() != 2) return {std::nullopt, PayloadError::bad_length};
    return {Announce{p[0], (p[1] & 1) != 0}, PayloadError::none};
}

Frame make_peer(std::uint8_t src, std::uint16_t seq, std::uint8_t dst, std::span<const std::uint8_t> app) {
    if (app.size() > kMaxPeerApp) throw EncodeError("peer payload exceeds 511 bytes");
    Frame f{FrameType::peer, src, seq, {}};
    f.payload.reserve(app.size() + 1);
    f.payload.push_back(dst);
    f.payload.insert(f.payload.end(), app.begin(), app.end());
    return f;
}

Parsed<PeerEnvelope> decode_peer(std::span<const std::uint8_t> p) {
    if (p.empty()) return {std::nullopt, PayloadError::bad_length};
    return {PeerEnvelope{p[0], {p.begin() + 1, p.end()}}, PayloadError::none};
}

std::vector<std::uint8_t> encode_snapshot(const SnapshotPayload& s) {
    std::vector<std::uint8_t> out;
    out.reserve(kSnapshotSize);
    Writer w(out);
    w.u8(kSnapshotTag);
    for (float v : s.position) w.f32(v);
    for (float v : s.velocity) w.f32(v);
    w.u32(s.stamp_ms);
    return out;
}

Parsed<SnapshotPayload> decode_snapshot(std::span<const std::uint8_t> app) {
    if (app.size() != kSnapshotSize) return {std::nullopt, PayloadError::bad_length};
    if (app[0] != kSnapshotTag) return {std::nullopt, PayloadError::bad_value};
    Reader r(app.subspan(1));
    SnapshotPayload s;
    for (float& v : s.position) v = r.f32();
    for (float& v : s.velocity) v = r.f32();
    s.stamp_ms = r.u32();
    return {s, PayloadError::none};
}

std::vector<std::uint8_t> encode_telemetry(const Telemetry& t) {
    std::vector<std::uint8_t> out;
    out.reserve(kTelemetrySize);
    Writer w(out);
    w.u32(t.tick);
    w.f64(t.time);
    for (const Vec3* v : {&t.position, &t.velocity}) {
        w.f64(v->x);
        w.f64(v->y);
        w.f64(v->z);
    }
    w.f64(t.heading);
    w.f64(t.yaw_rate);
    w.f64(t.height);
    for (const auto& c : t.channels) {
        w.u8(c.opcode);
        w.u32(c.remaining_ms);
    }
    w.u8(static_cast<std::uint8_t>((t.hold_engaged ? 1 : 0) | (t.flocking ? 2 : 0)));
    w.f64(t.hold_target);
    w.u8(t.next_hoop);
    return out;
}

Parsed<Telemetry> decode_telemetry(std::span<const std::uint8_t> p) {
    if (p.size() != kTelemetrySize) return {std::nullopt, PayloadError::bad_length};
    Reader r(p);
    Telemetry t;
    t.tick = r.u32();
    t.time = r.f64();
    for (Vec3* v : {&t.position, &t.velocity}) {
        v->x = r.f64();
        v->y = r.f64();
        v->z = r.f64();
    }
    t.heading = r.f64();
    t.yaw_rate = r.f64();
    t.height = r.f64();
    for (auto& c : t.channels) {
        c.opcode = r.u8();
        c.remaining_ms = r.u32();
    }
    const std::uint8_t flags = r.u8();
    t.hold_engaged = (flags & 1) != 0;
    t.flocking = (flags & 2) != 0;
    t.hold_target = r.f64();
    t.next_hoop = r.u8();
    return {t, PayloadError::none};
}

// ---- sequencing ------------------------------------------------------------

SeqVerdict classify_seq(std::uint16_t last, std::uint16_t incoming) {
    const auto forward = static_cast<std::uint16_t>(incoming - last);
    if (forward == 0) return SeqVerdict::duplicate;
    if (forward < kSeqWindow) return SeqVerdict::accept;
    return SeqVerdict::stale;
}

SeqVerdict SeqTracker::accept(std::uint8_t drone_id, std::uint8_t cls, std::uint16_t seq) {
    const auto key = static_cast<std::uint16_t>((drone_id << 8) | cls);
    auto it = last_.find(key);
    if (it == last_.end()) {
        last_.emplace(key, seq);
        return SeqVerdict::accept;
    }
    const SeqVerdict v = classify_seq(it->second, seq);
    if (v == SeqVerdict::accept) it->second = seq;
    return v;
}

std::optional<std::uint16_t> SeqTracker::last(std::uint8_t drone_id, std::uint8_t cls) const {
    const auto it = last_.find(static_cast<std::uint16_t>((drone_id << 8) | cls));
    if (it == last_.end()) return std::nullopt;
    return it->second;
}

// ---- text helpers ----------------------------------------------------------

std::optional<std::vector<std::uint8_t>> parse_hex(std::string_view text) {
    std::string digits;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c)) || c == ':' || c == ',') continue;
        if (c == '0' && i + 1 < text.size() && (text[i + 1] == 'x' || text[i + 1] == 'X')) {
            ++i;
            continue;
        }
        if (!std::isxdigit(static_cast<unsigned char>(c))) return std::nullopt;
        digits.push_back(c);
    }
    if (digits.empty() || digits.size() % 2 != 0) return std::nullopt;
    std::vector<std::uint8_t> out;
    out.reserve(digits.size() / 2);
    for (std::size_t i = 0; i < digits.size(); i += 2) {
        out.push_back(static_cast<std::uint8_t>(std::stoul(digits.substr(i, 2), nullptr, 16)));
    }
    return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes, bool spaced) {
    std::string out;
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (spaced && i > 0) out.push_back(' ');
        out += fmt::format("{:02X}", bytes[i]);
    }
    return out;
}

std::string describe(const Frame& f) {
    std::ostringstream os;
    os << fmt::format("type      {} (0x{:02X})\n", type_name(f.type), static_cast<unsigned>(f.type));
    os << fmt::format("drone_id  {}\n", f.drone_id);
    os << fmt::format("seq       {}\n", f.seq);
    os << fmt::format("length    {}\n", f.payload.size());
    switch (f.type) {
    case FrameType::cmd:
        if (auto c = decode_command(f.payload, f.seq)) {
            os << fmt::format("opcode    {}\n", opcode_name(c.value->opcode));
            if (is_timed(c.value->opcode)) os << fmt::format("duration  {} ms\n", c.value->duration_ms);
        } else {
            os << "opcode    <invalid>\n";
        }
        break;
    case FrameType::ack:
        if (auto a = decode_ack(f.payload)) {
            os << fmt::format("status    {}\n", describe(a.value->status));
            os << fmt::format("acks      {}\n", type_name(a.value->acked));
        }
        break;
    case FrameType::height_resp:
        if (auto h = decode_height(f.payload)) os << fmt::format("height    {:.3f} m\n", *h.value);
        break;
    case FrameType::announce:
        if (auto a = decode_announce(f.payload)) {
            os << fmt::format("drones    {}\npiloted   {}\n", a.value->drone_count, a.value->piloted ? "yes" : "no");
        }
        break;
    case FrameType::discover:
        if (auto d = decode_discover(f.payload)) {
            static constexpr std::array<std::string_view, 4> verbs = {"query", "attach", "detach", "subscribe"};
            os << fmt::format("verb      {}\n", verbs[static_cast<std::size_t>(d.value->verb)]);
            if (d.value->verb == DiscoverVerb::attach) os << fmt::format("role      {}\n", role_name(d.value->role));
        }
        break;
    case FrameType::peer:
        if (auto p = decode_peer(f.payload)) {
            if (p.value->dst == kBroadcast) {
                os << "dst       broadcast\n";
            } else {
                os << fmt::format("dst       {}\n", p.value->dst);
            }
            if (auto s = decode_snapshot(p.value->app)) {
                const auto& v = *s.value;
                os << fmt::format("snapshot  pos ({:.3f}, {:.3f}, {:.3f}) vel ({:.3f}, {:.3f}, {:.3f}) t {} ms\n",
                                  v.position[0], v.position[1], v.position[2], v.velocity[0], v.velocity[1],
                                  v.velocity[2], v.stamp_ms);
            } else {
                os << fmt::format("app       {}\n", to_hex(p.value->app, true));
            }
        }
        break;
    case FrameType::telemetry:
        if (auto t = decode_telemetry(f.payload)) {
            const auto& v = *t.value;
            os << fmt::format("time      {:.2f} s\n", v.time);
            os << fmt::format("position  ({:.3f}, {:.3f}, {:.3f})\n", v.position.x, v.position.y, v.position.z);
            os << fmt::format("heading   {:.3f} rad\n", v.heading);
            os << fmt::format("height    {:.3f} m\n", v.height);
        }
        break;
    case FrameType::height_req:
        break;
    }
    return os.str();
}

}  // namespace blimp::proto
