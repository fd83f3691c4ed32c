#include "blimp/arena.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "blimp/hash.hpp"

namespace blimp {

using nlohmann::json;

std::optional<Vec3> segment_crosses_hoop(const Vec3& p0, const Vec3& p1, const Hoop& hoop) {
    const double s0 = dot(hoop.normal, p0 - hoop.center);
    const double s1 = dot(hoop.normal, p1 - hoop.center);
    const bool crosses = (s0 <= 0.0 && s1 > 0.0) || (s1 <= 0.0 && s0 > 0.0);
    if (!crosses) return std::nullopt;

    const double frac = s0 / (s0 - s1);
    const Vec3 point = p0 + (p1 - p0) * frac;
    const Vec3 offset = point - hoop.center;
    // Remove the residual normal component so the distance is measured in-plane.
    const double off_center = norm(offset - hoop.normal * dot(offset, hoop.normal));
    if (off_center >= hoop.radius - kTangentTolerance) return std::nullopt;
    return point;
}

CourseProgress arm_course(const Arena& arena, double t) {
    CourseProgress p;
    if (!arena.start_gate || arena.hoops.empty()) p.start_t = t;
    if (arena.hoops.empty()) p.finish_t = t;
    return p;
}

bool update_progress(CourseProgress& progress, const Arena& arena, const Vec3& p0, const Vec3& p1, double t) {
    if (progress.finished() || progress.next_hoop >= arena.hoops.size()) return false;
    if (!progress.crossings.empty() && t <= progress.crossings.back().t) return false;

    const Hoop& hoop = arena.hoops[progress.next_hoop];
    if (!segment_crosses_hoop(p0, p1, hoop)) return false;

    progress.crossings.push_back({hoop.order, t});
    if (progress.next_hoop == 0 && arena.start_gate) progress.start_t = t;
    ++progress.next_hoop;
    if (progress.next_hoop == arena.hoops.size()) progress.finish_t = t;
    return true;
}

std::string_view surface_name(Surface s) {
    switch (s) {
    case Surface::wall_min_x: return "wall -x";
    case Surface::wall_max_x: return "wall +x";
    case Surface::wall_min_y: return "wall -y";
    case Surface::wall_max_y: return "wall +y";
    case Surface::floor: return "floor";
    case Surface::ceiling: return "ceiling";
    case Surface::obstacle: return "obstacle";
    }
    return "unknown";
}

namespace {

void wall_contacts(const Vec3& p, const Box& b, std::vector<Contact>& out) {
    const double r = kDroneRadius;
    if (p.x - r < b.min.x) out.push_back({Surface::wall_min_x, -1, {1, 0, 0}, b.min.x - (p.x - r)});
    if (p.x + r > b.max.x) out.push_back({Surface::wall_max_x, -1, {-1, 0, 0}, p.x + r - b.max.x});
    if (p.y - r < b.min.y) out.push_back({Surface::wall_min_y, -1, {0, 1, 0}, b.min.y - (p.y - r)});
    if (p.y + r > b.max.y) out.push_back({Surface::wall_max_y, -1, {0, -1, 0}, p.y + r - b.max.y});
    if (p.z - r < b.min.z) out.push_back({Surface::floor, -1, {0, 0, 1}, b.min.z - (p.z - r)});
    if (p.z + r > b.max.z) out.push_back({Surface::ceiling, -1, {0, 0, -1}, p.z + r - b.max.z});
}

std::optional<Contact> obstacle_contact(const Vec3& p, const Box& box, int index) {
    const Vec3 closest{std::clamp(p.x, box.min.x, box.max.x), std::clamp(p.y, box.min.y, box.max.y),
                       std::clamp(p.z, box.min.z, box.max.z)};
    const Vec3 away = p - closest;
    const double d = norm(away);
    if (d > 0.0) {
        if (d >= kDroneRadius) return std::nullopt;
        return Contact{Surface::obstacle, index, away * (1.0 / d), kDroneRadius - d};
    }
    // Center inside the box: exit through the nearest face.
    const std::array<std::pair<double, Vec3>, 6> faces = {{
        {p.x - box.min.x, {-1, 0, 0}},
        {box.max.x - p.x, {1, 0, 0}},
        {p.y - box.min.y, {0, -1, 0}},
        {box.max.y - p.y, {0, 1, 0}},
        {p.z - box.min.z, {0, 0, -1}},
        {box.max.z - p.z, {0, 0, 1}},
    }};
    const auto nearest = std::min_element(faces.begin(), faces.end(),
                                          [](const auto& a, const auto& b) { return a.first < b.first; });
    return Contact{Surface::obstacle, index, nearest->second, nearest->first + kDroneRadius};
}

void remove_inbound_velocity(Vec3& v, const Vec3& n) {
    const double vn = dot(v, n);
    if (vn < 0.0) v -= n * vn;
}

}  // namespace

std::vector<Contact> check_collision(const DroneState& state, const Arena& arena) {
    std::vector<Contact> out;
    wall_contacts(state.position, arena.bounds, out);
    for (std::size_t i = 0; i < arena.obstacles.size(); ++i) {
        if (auto c = obstacle_contact(state.position, arena.obstacles[i], static_cast<int>(i))) out.push_back(*c);
    }
    return out;
}

DroneState resolve_collisions(const DroneState& state, const Arena& arena) {
    DroneState s = state;
    for (std::size_t i = 0; i < arena.obstacles.size(); ++i) {
        if (auto c = obstacle_contact(s.position, arena.obstacles[i], static_cast<int>(i))) {
            s.position += c->normal * c->depth;
            remove_inbound_velocity(s.velocity, c->normal);
        }
    }
    const double r = kDroneRadius;
    const Box& b = arena.bounds;
    auto clamp_axis = [r](double& p, double& v, double lo, double hi) {
        if (p < lo + r) {
            p = lo + r;
            v = std::max(v, 0.0);
        } else if (p > hi - r) {
            p = hi - r;
            v = std::min(v, 0.0);
        }
    };
    clamp_axis(s.position.x, s.velocity.x, b.min.x, b.max.x);
    clamp_axis(s.position.y, s.velocity.y, b.min.y, b.max.y);
    clamp_axis(s.position.z, s.velocity.z, b.min.z, b.max.z);
    return s;
}

// ---- documents ---------------------------------------------------------------

namespace {

class FieldReader {
public:
    explicit FieldReader(std::vector<std::string>& errors) : errors_(errors) {}

    std::optional<Vec3> vec3(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.is_object() || !obj.contains(key)) {
            errors_.push_back(fmt::format("{}.{}: missing", path, key));
            return std::nullopt;
        }
        const json& v = obj.at(key);
        if (!v.is_array() || v.size() != 3 || !std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); })) {
            errors_.push_back(fmt::format("{}.{}: expected an array of three numbers", path, key));
            return std::nullopt;
        }
        Vec3 out{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
        if (!is_finite(out)) {
            errors_.push_back(fmt::format("{}.{}: non-finite value", path, key));
            return std::nullopt;
        }
        return out;
    }

    std::optional<double> number(const json& obj, const std::string& key, const std::string& path) {
        if (!obj.is_object() || !obj.contains(key) || !obj.at(key).is_number()) {
            errors_.push_back(fmt::format("{}.{}: expected a number", path, key));
            return std::nullopt;
        }
        return obj.at(key).get<double>();
    }

    std::optional<Box> box(const json& obj, const std::string& path) {
        auto lo = vec3(obj, "min", path);
        auto hi = vec3(obj, "max", path);
        if (!lo || !hi) return std::nullopt;
        if (!(lo->x < hi->x && lo->y < hi->y && lo->z < hi->z)) {
            errors_.push_back(fmt::format("{}: min must be below max on every axis", path));
            return std::nullopt;
        }
        return Box{*lo, *hi};
    }

private:
    std::vector<std::string>& errors_;
};

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

}  // namespace

ArenaValidation validate_arena(const json& doc) {
    ArenaValidation result;
    auto& errors = result.errors;
    if (!doc.is_object()) {
        errors.emplace_back("arena: expected a JSON object");
        return result;
    }
    FieldReader read(errors);
    Arena arena;
    if (doc.contains("name") && doc["name"].is_string()) arena.name = doc["name"].get<std::string>();
    if (doc.contains("start_gate")) {
        if (doc["start_gate"].is_boolean()) {
            arena.start_gate = doc["start_gate"].get<bool>();
        } else {
            errors.emplace_back("start_gate: expected a boolean");
        }
    }

    std::optional<Box> bounds;
    if (!doc.contains("bounds")) {
        errors.emplace_back("bounds: missing");
    } else {
        bounds = read.box(doc["bounds"], "bounds");
        if (bounds) {
            const Vec3 extent = bounds->max - bounds->min;
            if (std::min({extent.x, extent.y, extent.z}) <= 2.0 * kDroneRadius) {
                errors.emplace_back("bounds: every axis must be wider than the 0.3 m drone proxy");
            }
            arena.bounds = *bounds;
        }
    }

    const json empty = json::array();
    const json& hoops = doc.contains("hoops") ? doc["hoops"] : empty;
    if (!hoops.is_array()) errors.emplace_back("hoops: expected an array");
    std::set<int> orders;
    if (hoops.is_array()) {
        for (std::size_t i = 0; i < hoops.size(); ++i) {
            const std::string path = fmt::format("hoops[{}]", i);
            const json& h = hoops[i];
            Hoop hoop;
            bool ok = true;
            if (auto c = read.vec3(h, "center", path)) hoop.center = *c; else ok = false;
            if (auto n = read.vec3(h, "normal", path)) {
                const double len = norm(*n);
                if (std::abs(len - 1.0) > 1e-9) {
                    errors.push_back(fmt::format("{}.normal: not unit length (|n| = {})", path, len));
                    ok = false;
                }
                hoop.normal = *n;
            } else {
                ok = false;
            }
            if (auto r = read.number(h, "radius", path)) {
                if (!(*r > 0.0) || !std::isfinite(*r)) {
                    errors.push_back(fmt::format("{}.radius: must be positive (got {})", path, *r));
                    ok = false;
                }
                hoop.radius = *r;
            } else {
                ok = false;
            }
            if (!h.is_object() || !h.contains("order") || !h["order"].is_number_integer()) {
                errors.push_back(fmt::format("{}.order: expected an integer", path));
                ok = false;
            } else {
                hoop.order = h["order"].get<int>();
                if (!orders.insert(hoop.order).second) {
                    errors.push_back(fmt::format("{}.order: duplicate order index {}", path, hoop.order));
                    ok = false;
                }
            }
            if (ok) arena.hoops.push_back(hoop);
        }
        if (errors.empty()) {
            int expected = 0;
            for (int o : orders) {
                if (o != expected++) {
                    errors.emplace_back("hoops: order indices must be dense from 0");
                    break;
                }
            }
        }
        std::sort(arena.hoops.begin(), arena.hoops.end(), [](const Hoop& a, const Hoop& b) { return a.order < b.order; });
    }

    const json& obstacles = doc.contains("obstacles") ? doc["obstacles"] : empty;
    if (!obstacles.is_array()) {
        errors.emplace_back("obstacles: expected an array");
    } else {
        for (std::size_t i = 0; i < obstacles.size(); ++i) {
            if (auto b = read.box(obstacles[i], fmt::format("obstacles[{}]", i))) arena.obstacles.push_back(*b);
        }
    }

    const json& spawns = doc.contains("spawns") ? doc["spawns"] : empty;
    if (!spawns.is_array() || spawns.empty()) {
        errors.emplace_back("spawns: expected a non-empty array");
    } else {
        for (std::size_t i = 0; i < spawns.size(); ++i) {
            const std::string path = fmt::format("spawns[{}]", i);
            auto pos = read.vec3(spawns[i], "position", path);
            double heading = 0.0;
            if (spawns[i].is_object() && spawns[i].contains("heading")) {
                if (auto h = read.number(spawns[i], "heading", path)) heading = *h;
            }
            if (!pos) continue;
            if (bounds && !bounds->contains(*pos)) {
                errors.push_back(fmt::format("{}.position: outside bounds", path));
                continue;
            }
            arena.spawns.push_back({*pos, wrap_heading(heading)});
        }
    }

    if (errors.empty()) result.arena = std::move(arena);
    return result;
}

ArenaValidation load_arena_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) return {std::nullopt, {fmt::format("{}: cannot open", path)}};
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) return {std::nullopt, {fmt::format("{}: not valid JSON", path)}};
    return validate_arena(doc);
}

json arena_to_json(const Arena& a) {
    json hoops = json::array();
    for (const auto& h : a.hoops) {
        hoops.push_back({{"order", h.order}, {"center", vec_json(h.center)}, {"normal", vec_json(h.normal)},
                         {"radius", h.radius}});
    }
    json obstacles = json::array();
    for (const auto& o : a.obstacles) obstacles.push_back({{"min", vec_json(o.min)}, {"max", vec_json(o.max)}});
    json spawns = json::array();
    for (const auto& s : a.spawns) spawns.push_back({{"position", vec_json(s.position)}, {"heading", s.heading}});
    return {
        {"name", a.name},
        {"bounds", {{"min", vec_json(a.bounds.min)}, {"max", vec_json(a.bounds.max)}}},
        {"hoops", hoops},
        {"obstacles", obstacles},
        {"spawns", spawns},
        {"start_gate", a.start_gate},
    };
}

std::uint64_t arena_hash(const Arena& arena) {
    Fnv1a h;
    h.text(arena_to_json(arena).dump());
    return h.digest();
}

Arena default_arena() {
    Arena a;
    a.name = "classroom";
    a.bounds = {{-5.0, -5.0, 0.0}, {5.0, 5.0, 3.0}};
    a.hoops = {
        {{-2.0, 0.0, 1.5}, {1.0, 0.0, 0.0}, 0.4, 0},
        {{0.0, 0.0, 1.5}, {1.0, 0.0, 0.0}, 0.4, 1},
        {{2.0, 0.0, 1.5}, {1.0, 0.0, 0.0}, 0.4, 2},
    };
    a.obstacles = {{{-1.2, 1.5, 0.0}, {-0.8, 2.5, 2.0}}};
    a.spawns = {
        {{-4.0, 0.0, 1.5}, 0.0},
        {{-4.0, 1.0, 1.5}, 0.0},
        {{-4.0, -1.0, 1.5}, 0.0},
        {{-4.0, 2.0, 1.5}, 0.0},
        {{-4.0, -2.0, 1.5}, 0.0},
        {{-3.0, 3.0, 1.5}, 0.0},
        {{-3.0, -3.0, 1.5}, 0.0},
        {{-3.0, 0.0, 1.0}, 0.0},
    };
    return a;
}

}  // namespace blimp
