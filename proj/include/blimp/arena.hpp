#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "blimp/dynamics.hpp"

namespace blimp {

struct Box {
    Vec3 min;
    Vec3 max;

    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z && p.z <= max.z;
    }
};

struct Hoop {
    Vec3 center;
    Vec3 normal;  // unit
    double radius = 0.0;
    int order = 0;
};

struct Spawn {
    Vec3 position;
    double heading = 0.0;
};

struct Arena {
    std::string name;
    Box bounds;
    std::vector<Hoop> hoops;  // sorted by order
    std::vector<Box> obstacles;
    std::vector<Spawn> spawns;
    // Crossing hoop 0 starts the clock; otherwise arming does.
    bool start_gate = true;
};

inline constexpr double kDroneRadius = 0.15;
inline constexpr double kTangentTolerance = 1e-9;

/// Point where the segment p0->p1 passes through the hoop's disc. The plane
/// splits space into a closed side (signed distance <= 0) and an open side
/// (> 0); a crossing is a change of side, so a pass through the plane counts
/// exactly once however the steps straddle it. The crossing must lie strictly
/// inside the rim: points within 1e-9 of the rim are misses.
std::optional<Vec3> segment_crosses_hoop(const Vec3& p0, const Vec3& p1, const Hoop& hoop);

struct Crossing {
    int hoop = 0;
    double t = 0.0;
};

struct CourseProgress {
    std::size_t next_hoop = 0;
    std::optional<double> start_t;
    std::optional<double> finish_t;
    std::vector<Crossing> crossings;

    bool finished() const { return finish_t.has_value(); }
    std::optional<double> trial_time() const {
        if (!start_t || !finish_t) return std::nullopt;
        return *finish_t - *start_t;
    }
};

/// Starts a trial at time `t`. With a start gate the clock waits for hoop 0.
CourseProgress arm_course(const Arena& arena, double t);

/// Advances progress when the movement p0->p1 ending at time `t` passes the
/// next hoop in order. Returns true when a hoop was crossed.
bool update_progress(CourseProgress& progress, const Arena& arena, const Vec3& p0, const Vec3& p1, double t);

enum class Surface : std::uint8_t { wall_min_x, wall_max_x, wall_min_y, wall_max_y, floor, ceiling, obstacle };

struct Contact {
    Surface surface;
    int obstacle = -1;  // index when surface == obstacle
    Vec3 normal;        // unit, pointing from the surface toward the drone
    double depth = 0.0;  // penetration of the proxy sphere
};

/// Surfaces the drone's proxy sphere currently penetrates.
std::vector<Contact> check_collision(const DroneState& state, const Arena& arena);

/// Pushes the drone out of every contact and removes velocity into the
/// surface. Bounds are applied last so the result is always inside them.
DroneState resolve_collisions(const DroneState& state, const Arena& arena);

std::string_view surface_name(Surface s);

struct ArenaValidation {
    std::optional<Arena> arena;
    std::vector<std::string> errors;

    bool ok() const { return arena.has_value(); }
};

ArenaValidation validate_arena(const nlohmann::json& doc);
ArenaValidation load_arena_file(const std::string& path);

nlohmann::json arena_to_json(const Arena& arena);

/// FNV-1a over the canonical JSON serialisation.
std::uint64_t arena_hash(const Arena& arena);

/// Ten by ten by three meter room with three hoops along +x.
Arena default_arena();

}  // namespace blimp
