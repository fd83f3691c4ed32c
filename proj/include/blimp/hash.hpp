#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <string_view>

namespace blimp {

// Incremental 64-bit FNV-1a. Multi-byte values are fed little-endian so the
// digest does not depend on host byte order.
class Fnv1a {
public:
    void bytes(std::span<const std::uint8_t> data) {
        for (std::uint8_t b : data) mix(b);
    }
    void text(std::string_view s) {
        for (char c : s) mix(static_cast<std::uint8_t>(c));
    }
    void u8(std::uint8_t v) { mix(v); }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) mix(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    std::uint64_t digest() const { return state_; }

private:
    void mix(std::uint8_t b) {
        state_ ^= b;
        state_ *= 0x100000001B3ULL;
    }

    std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace blimp
