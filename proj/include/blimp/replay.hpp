#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "blimp/world.hpp"

namespace blimp::replay {

inline constexpr const char* kFormat = "blimp-replay";
inline constexpr int kFormatVersion = 1;
inline constexpr Tick kCheckpointEvery = 100;

nlohmann::json header(const WorldConfig& config);
nlohmann::json input_record(const Input& in, Tick tick, double dt);

/// Reconstructs an input from its record; nullopt when `rec` is not an input.
/// Throws std::invalid_argument when an input record is malformed.
std::optional<Input> input_from_record(const nlohmann::json& rec);

/// Appends line-delimited JSON records. Each line is flushed so a crash
/// leaves a readable prefix.
class Recorder {
public:
    Recorder(std::ostream& out, const WorldConfig& config);

    void input(const Input& in, Tick tick);
    /// Inputs the gateway refused before they reached the world; informational.
    void reject(Tick tick, SessionId session, const std::string& reason, const std::string& detail);
    /// Call after each step; emits a checkpoint every kCheckpointEvery ticks.
    void after_step(const World& world);
    void end(const World& world);

private:
    void write(const nlohmann::json& rec);

    std::ostream& out_;
    double dt_;
    bool ended_ = false;
};

enum class Status : std::uint8_t {
    ok,
    io_error,
    malformed,
    header_mismatch,
    non_monotonic,
    diverged,    // a checkpoint hash disagreed
    truncated,   // no end record
};

std::string_view describe(Status s);

struct Outcome {
    Status status = Status::ok;
    std::string message;
    std::uint64_t final_hash = 0;
    std::optional<std::uint64_t> recorded_hash;  // from the end record
    Tick final_tick = 0;
    int checkpoints = 0;
    std::size_t inputs = 0;
};

/// Re-executes a recorded session and reports the final world hash.
Outcome run(std::istream& in);
Outcome run_file(const std::string& path);

}  // namespace blimp::replay
