#include "blimp/config.hpp"

#include <filesystem>
#include <fstream>

#include <fmt/format.h>

namespace blimp {

using nlohmann::json;

namespace {

// Reads optional numeric members into existing defaults, collecting type errors.
class Overlay {
public:
    Overlay(const json& obj, std::string section, std::vector<std::string>& errors)
        : obj_(obj), section_(std::move(section)), errors_(errors) {
        if (!obj_.is_object()) errors_.push_back(fmt::format("{}: expected an object", section_));
    }

    template <typename T>
    void read(const char* key, T& into) {
        if (!obj_.is_object() || !obj_.contains(key)) return;
        const json& v = obj_.at(key);
        if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) {
                errors_.push_back(fmt::format("{}.{}: expected a string", section_, key));
                return;
            }
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) {
                errors_.push_back(fmt::format("{}.{}: expected a boolean", section_, key));
                return;
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) {
                errors_.push_back(fmt::format("{}.{}: expected an integer", section_, key));
                return;
            }
        } else {
            if (!v.is_number()) {
                errors_.push_back(fmt::format("{}.{}: expected a number", section_, key));
                return;
            }
        }
        into = v.get<T>();
    }

private:
    const json& obj_;
    std::string section_;
    std::vector<std::string>& errors_;
};

void read_physics(const json& j, PhysicsParams& p, std::vector<std::string>& errors) {
    Overlay o(j, "physics", errors);
    o.read("mass", p.mass);
    o.read("net_weight", p.net_weight);
    o.read("c_lin", p.c_lin);
    o.read("c_yaw", p.c_yaw);
    o.read("I_z", p.inertia_z);
    o.read("max_vertical_thrust", p.max_vertical_thrust);
    o.read("max_lateral_thrust", p.max_lateral_thrust);
    o.read("max_yaw_torque", p.max_yaw_torque);
    o.read("dt", p.dt);
}

void read_hold(const json& j, HoldGains& g, std::vector<std::string>& errors) {
    Overlay o(j, "hold", errors);
    o.read("kp", g.kp);
    o.read("ki", g.ki);
    o.read("kd", g.kd);
    o.read("integral_limit", g.integral_limit);
}

void read_flock(const json& j, FlockParams& f, std::vector<std::string>& errors) {
    Overlay o(j, "flock", errors);
    o.read("k_coh", f.k_coh);
    o.read("k_sep", f.k_sep);
    o.read("k_ali", f.k_ali);
    o.read("r_neigh", f.r_neigh);
    o.read("r_sep", f.r_sep);
    o.read("safety_radius", f.safety_radius);
    o.read("max_accel", f.max_accel);
    o.read("horizon", f.horizon);
    o.read("heading_gain", f.heading_gain);
    o.read("heading_damping", f.heading_damping);
}

void read_link(const json& j, LinkModel& l, bool& seed_given, std::vector<std::string>& errors) {
    if (j.is_object() && j.contains("preset")) {
        const json& preset = j["preset"];
        if (preset == "lossy") {
            l = LinkModel::lossy_preset(l.rng_seed);
        } else if (preset != "lessons") {
            errors.emplace_back("link.preset: expected \"lessons\" or \"lossy\"");
        }
    }
    Overlay o(j, "link", errors);
    o.read("latency_ms", l.latency_ms);
    o.read("loss_prob", l.loss_prob);
    if (j.is_object() && j.contains("seed")) {
        o.read("seed", l.rng_seed);
        seed_given = true;
    }
}

}  // namespace

ConfigResult parse_config(const json& doc, const std::string& base_dir) {
    ConfigResult result;
    auto& errors = result.errors;
    if (!doc.is_object()) {
        errors.emplace_back("config: expected a JSON object");
        return result;
    }
    SimConfig cfg;
    WorldConfig& w = cfg.world;
    Overlay top(doc, "config", errors);
    top.read("seed", w.seed);
    top.read("drones", w.drone_count);
    top.read("runs_dir", cfg.runs_dir);
    if (doc.contains("runs_dir") && std::filesystem::path(cfg.runs_dir).is_relative()) {
        cfg.runs_dir = (std::filesystem::path(base_dir) / cfg.runs_dir).lexically_normal().string();
    }

    if (doc.contains("physics")) read_physics(doc["physics"], w.physics, errors);
    if (doc.contains("hold")) read_hold(doc["hold"], w.hold, errors);
    if (doc.contains("flock")) read_flock(doc["flock"], w.flock, errors);
    if (doc.contains("sensor")) {
        Overlay o(doc["sensor"], "sensor", errors);
        o.read("quantum", w.sensor.quantum);
        o.read("noise_sd", w.sensor.noise_sd);
    }
    bool link_seed_given = false;
    if (doc.contains("link")) read_link(doc["link"], w.link, link_seed_given, errors);
    if (!link_seed_given) w.link.rng_seed = mix_seed(w.seed, 0xFFFF);

    if (doc.contains("ports")) {
        Overlay o(doc["ports"], "ports", errors);
        o.read("frames", cfg.frame_port);
        o.read("console", cfg.console_port);
    }
    for (int port : {cfg.frame_port, cfg.console_port}) {
        if (port < 0 || port > 65535) errors.push_back(fmt::format("ports: {} is out of range", port));
    }
    if (cfg.frame_port != 0 && cfg.frame_port == cfg.console_port) {
        errors.push_back(fmt::format("ports: frames and console both use {}", cfg.frame_port));
    }

    if (doc.contains("arena")) {
        const json& a = doc["arena"];
        ArenaValidation v;
        if (a.is_string()) {
            std::filesystem::path p(a.get<std::string>());
            if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
            cfg.arena_path = p.string();
            v = load_arena_file(cfg.arena_path);
        } else {
            v = validate_arena(a);
        }
        for (const auto& e : v.errors) errors.push_back("arena: " + e);
        if (v.arena) w.arena = *v.arena;
    }

    if (auto e = validate_params(w.physics); !e.empty()) errors.push_back("physics: " + e);
    if (auto e = validate_flock_params(w.flock); !e.empty()) errors.push_back("flock: " + e);
    if (!(w.link.loss_prob >= 0.0 && w.link.loss_prob <= 1.0)) errors.emplace_back("link.loss_prob: must be in [0, 1]");
    if (!(w.link.latency_ms >= 0.0)) errors.emplace_back("link.latency_ms: must be non-negative");
    if (!(w.sensor.quantum > 0.0)) errors.emplace_back("sensor.quantum: must be positive");
    if (!(w.sensor.noise_sd >= 0.0)) errors.emplace_back("sensor.noise_sd: must be non-negative");
    if (w.drone_count < 1 || w.drone_count > 254) errors.emplace_back("drones: must be within 1..254");
    if (errors.empty() && static_cast<std::size_t>(w.drone_count) > w.arena.spawns.size()) {
        errors.push_back(fmt::format("drones: arena has only {} spawns", w.arena.spawns.size()));
    }

    if (errors.empty()) result.config = std::move(cfg);
    return result;
}

ConfigResult load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) return {std::nullopt, {fmt::format("{}: cannot open", path)}};
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) return {std::nullopt, {fmt::format("{}: not valid JSON", path)}};
    const auto dir = std::filesystem::path(path).parent_path();
    return parse_config(doc, dir.empty() ? "." : dir.string());
}

json world_to_json(const WorldConfig& w) {
    const auto& p = w.physics;
    const auto& f = w.flock;
    return {
        {"seed", w.seed},
        {"drones", w.drone_count},
        {"physics",
         {{"mass", p.mass}, {"net_weight", p.net_weight}, {"c_lin", p.c_lin}, {"c_yaw", p.c_yaw}, {"I_z", p.inertia_z},
          {"max_vertical_thrust", p.max_vertical_thrust}, {"max_lateral_thrust", p.max_lateral_thrust},
          {"max_yaw_torque", p.max_yaw_torque}, {"dt", p.dt}}},
        {"hold", {{"kp", w.hold.kp}, {"ki", w.hold.ki}, {"kd", w.hold.kd}, {"integral_limit", w.hold.integral_limit}}},
        {"link", {{"latency_ms", w.link.latency_ms}, {"loss_prob", w.link.loss_prob}, {"seed", w.link.rng_seed}}},
        {"flock",
         {{"k_coh", f.k_coh}, {"k_sep", f.k_sep}, {"k_ali", f.k_ali}, {"r_neigh", f.r_neigh}, {"r_sep", f.r_sep},
          {"safety_radius", f.safety_radius}, {"max_accel", f.max_accel}, {"horizon", f.horizon},
          {"heading_gain", f.heading_gain}, {"heading_damping", f.heading_damping}}},
        {"sensor", {{"quantum", w.sensor.quantum}, {"noise_sd", w.sensor.noise_sd}}},
        {"telemetry_divisor", w.telemetry_divisor},
        {"arena", arena_to_json(w.arena)},
    };
}

WorldConfig world_from_json(const json& doc) {
    std::vector<std::string> errors;
    WorldConfig w;
    if (!doc.is_object()) throw std::invalid_argument("world: expected an object");
    Overlay top(doc, "world", errors);
    top.read("seed", w.seed);
    top.read("drones", w.drone_count);
    top.read("telemetry_divisor", w.telemetry_divisor);
    read_physics(doc.value("physics", json::object()), w.physics, errors);
    read_hold(doc.value("hold", json::object()), w.hold, errors);
    read_flock(doc.value("flock", json::object()), w.flock, errors);
    bool seed_given = false;
    read_link(doc.value("link", json::object()), w.link, seed_given, errors);
    const json sensor_doc = doc.value("sensor", json::object());
    Overlay sensor(sensor_doc, "sensor", errors);
    sensor.read("quantum", w.sensor.quantum);
    sensor.read("noise_sd", w.sensor.noise_sd);
    if (!doc.contains("arena")) throw std::invalid_argument("world: missing arena");
    auto v = validate_arena(doc["arena"]);
    for (const auto& e : v.errors) errors.push_back("arena: " + e);
    if (!errors.empty()) throw std::invalid_argument(errors.front());
    w.arena = *v.arena;
    return w;
}

}  // namespace blimp
