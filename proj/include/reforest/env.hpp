#pragma once

// Lockstep environment dynamics: kinematics, battery economy, seed
// lifecycle, reward engine, episode management. One Env instance is
// single-threaded and owns all mutable state.

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "reforest/comms.hpp"
#include "reforest/common.hpp"
#include "reforest/terrain.hpp"

namespace reforest {

struct EnvConfig {
    int n_drones = 10;
    int episode_length = 5000;
    double station_radius = 10.0;
    double depletion_with_seed = 0.001;
    double depletion_without_seed = 0.0005;
    double move_speed = 1.0;   // m per step
    double turn_speed = 5.0;   // degrees per step
    double comm_range = 200.0;
    int max_neighbors = 3;     // 0 = MA baseline, 3 = MAC
    double altitude_clearance = 2.0;
    double altitude_ceiling = 150.0;
    double out_of_energy_penalty = 10.0;

    void validate() const {
        if (depletion_with_seed <= 0.0 || depletion_without_seed <= 0.0)
            throw std::invalid_argument("depletion rates must be positive");
        if (max_neighbors != 0 && max_neighbors != 3)
            throw std::invalid_argument("max_neighbors must be 0 or 3");
    }
};

enum class DroneStatus { Active, OutOfEnergy };

struct DroneState {
    Vec3 position;
    double yaw = 0.0;  // degrees, [0,360)
    Vec3 last_move;    // displacement of the most recent step
    double battery = 1.0;
    bool has_seed = true;
    std::optional<Vec3> memory;
    Inbox inbox;
    bool return_active = false;
    double return_best = 0.0;  // best distance-to-station this return phase
    double return_D0 = 1.0;    // distance at phase start
    DroneStatus status = DroneStatus::Active;
};

struct Action {
    std::array<double, 3> cont{};  // forward, rotate, vertical in [-1,1]
    std::array<int, 2> disc{};     // drop, save_memory in {0,1}
};

struct RewardBreakdown {
    double drop_reward = 0.0;
    double return_reward = 0.0;
    double battery_penalty = 0.0;
    double event_penalty = 0.0;
    double total() const { return drop_reward + return_reward + battery_penalty + event_penalty; }
};

struct AgentEvents {
    bool dropped_seed = false;
    bool recharged = false;
    bool out_of_energy = false;
    bool saved_memory = false;
};

struct EpisodeCounters {
    long tree_drops = 0;
    long recharges = 0;
    long out_of_energy = 0;
    long memory_saves = 0;
};

struct StepEvents {
    std::vector<AgentEvents> agents;
};

struct ActionShapeMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// --- per-drone sub-operations ----------------------------------------------

// yaw += turn_speed*a1 (wrapped), 1 m/step horizontal along heading,
// vertical 1 m/step, then clamped to world and altitude bounds.
inline void apply_kinematics(DroneState& d, const std::array<double, 3>& a,
                             const Scenario& scenario, const EnvConfig& cfg) {
    const double fwd = std::clamp(a[0], -1.0, 1.0);
    const double rot = std::clamp(a[1], -1.0, 1.0);
    const double vert = std::clamp(a[2], -1.0, 1.0);
    const Vec3 before = d.position;

    d.yaw = std::fmod(d.yaw + cfg.turn_speed * rot, 360.0);
    if (d.yaw < 0.0) d.yaw += 360.0;
    const double yaw_rad = d.yaw * M_PI / 180.0;
    const double half = scenario.config.half_extent();

    d.position.x = std::clamp(d.position.x + std::sin(yaw_rad) * cfg.move_speed * fwd, -half, half);
    d.position.z = std::clamp(d.position.z + std::cos(yaw_rad) * cfg.move_speed * fwd, -half, half);
    d.position.y += cfg.move_speed * vert;
    const double ground = scenario.ground_height(d.position.x, d.position.z);
    d.position.y = std::clamp(d.position.y, ground + cfg.altitude_clearance, cfg.altitude_ceiling);
    d.last_move = d.position - before;
}

// Returns the battery reward component. Battery at (or within 1e-9 of)
// zero flips the drone to OutOfEnergy.
inline double deplete_battery(DroneState& d, const EnvConfig& cfg) {
    const double rate = d.has_seed ? cfg.depletion_with_seed : cfg.depletion_without_seed;
    d.battery -= rate;
    if (d.battery <= 1e-9) {
        d.battery = 0.0;
        d.status = DroneStatus::OutOfEnergy;
    }
    return -rate;
}

// Discrete action 1: overwrite the memory slot with the current position.
inline void save_to_memory(DroneState& d) { d.memory = d.position; }

// pf * (20 + 10*sf): proximity factor over nearest-tree distance,
// station factor = horizontal station distance normalized by half extent.
inline double drop_seed_reward(const Vec3& drop_pos, const Scenario& scenario, const Vec3& station) {
    const auto d = scenario.nearest_tree_distance(drop_pos);
    const double pf = d ? Scenario::proximity_factor(*d) : 0.0;
    const double sf = clamp01(horizontal_distance(drop_pos, station) / scenario.config.half_extent());
    return pf * (20.0 + 10.0 * sf);
}

// Telescoping progress shaping; phase total never exceeds 20 and the
// residual is granted at servicing.
inline double return_shaping_reward(DroneState& d, const Vec3& station) {
    if (!d.return_active) return 0.0;
    const double dist = horizontal_distance(d.position, station);
    const double reward = 20.0 * std::max(0.0, d.return_best - dist) / d.return_D0;
    d.return_best = std::min(d.return_best, dist);
    return reward;
}

// --- environment ------------------------------------------------------------

class Env {
public:
    Env(Scenario scenario, EnvConfig config, std::uint64_t rng_seed = 0)
        : scenario_(std::move(scenario)), config_(config), rng_seed_(rng_seed) {
        config_.validate();
        reset();
    }

    void reset() {
        drones_.assign(config_.n_drones, DroneState{});
        for (int i = 0; i < config_.n_drones; ++i) {
            auto& d = drones_[i];
            d.position = {scenario_.station.x,
                          scenario_.station.y + config_.altitude_clearance + i * 1.0,
                          scenario_.station.z};
            d.battery = 1.0;
            d.has_seed = true;
        }
        step_count_ = 0;
        counters_ = {};
        pending_respawn_.assign(config_.n_drones, false);
    }

    struct StepResult {
        std::vector<RewardBreakdown> rewards;
        StepEvents events;
    };

    StepResult step(const std::vector<Action>& actions) {
        if (static_cast<int>(actions.size()) != config_.n_drones)
            throw ActionShapeMismatch("expected one action tuple per drone");

        StepResult out;
        out.rewards.resize(config_.n_drones);
        out.events.agents.resize(config_.n_drones);

        for (int i = 0; i < config_.n_drones; ++i) {
            auto& d = drones_[i];
            auto& rb = out.rewards[i];
            auto& ev = out.events.agents[i];

            if (pending_respawn_[i]) {
                respawn(i);
                pending_respawn_[i] = false;
            }
            if (d.status != DroneStatus::Active) continue;

            apply_kinematics(d, actions[i].cont, scenario_, config_);

            rb.battery_penalty = deplete_battery(d, config_);
            if (d.status == DroneStatus::OutOfEnergy) {
                rb.event_penalty = -config_.out_of_energy_penalty;
                ev.out_of_energy = true;
                counters_.out_of_energy += 1;
                pending_respawn_[i] = true;
                continue;
            }

            if (actions[i].disc[1] == 1) {
                save_to_memory(d);
                ev.saved_memory = true;
                counters_.memory_saves += 1;
            }

            if (actions[i].disc[0] == 1 && d.has_seed) {
                rb.drop_reward = drop_seed_reward(d.position, scenario_, scenario_.station);
                scenario_.add_tree(d.position.x, d.position.z);
                d.has_seed = false;
                const double dist = horizontal_distance(d.position, scenario_.station);
                d.return_D0 = std::max(dist, 1e-9);
                d.return_best = d.return_D0;
                d.return_active = true;
                ev.dropped_seed = true;
                counters_.tree_drops += 1;
            }

            rb.return_reward += return_shaping_reward(d, scenario_.station);

            if (!d.has_seed &&
                horizontal_distance(d.position, scenario_.station) <= config_.station_radius) {
                if (d.return_active)
                    rb.return_reward += 20.0 * d.return_best / d.return_D0;
                d.return_active = false;
                d.battery = 1.0;
                d.has_seed = true;
                ev.recharged = true;
                counters_.recharges += 1;
            }
        }

        // comms fill inboxes for the next observation
        if (config_.max_neighbors > 0) {
            std::vector<Vec3> positions(config_.n_drones);
            std::vector<std::optional<Vec3>> memories(config_.n_drones);
            for (int i = 0; i < config_.n_drones; ++i) {
                positions[i] = drones_[i].position;
                memories[i] = drones_[i].memory;
            }
            last_graph_ = build_graph(positions, config_.comm_range, config_.max_neighbors);
            auto inboxes = exchange_messages(last_graph_, memories);
            for (int i = 0; i < config_.n_drones; ++i) drones_[i].inbox = inboxes[i];
        }

        step_count_ += 1;
        return out;
    }

    bool episode_done() const { return step_count_ >= config_.episode_length; }

    const Scenario& scenario() const { return scenario_; }
    Scenario& scenario_mutable() { return scenario_; }
    const EnvConfig& config() const { return config_; }
    const std::vector<DroneState>& drones() const { return drones_; }
    std::vector<DroneState>& drones_mutable() { return drones_; }
    const Vec3& station() const { return scenario_.station; }
    int step_count() const { return step_count_; }
    const EpisodeCounters& counters() const { return counters_; }
    const ProximityGraph& last_graph() const { return last_graph_; }
    std::uint64_t rng_seed() const { return rng_seed_; }

    std::uint64_t digest() const {
        Digest dg;
        dg.feed_i64(step_count_);
        dg.feed_u64(scenario_.trees.size());
        for (const auto& d : drones_) {
            dg.feed_quantized(d.position.x);
            dg.feed_quantized(d.position.y);
            dg.feed_quantized(d.position.z);
            dg.feed_quantized(d.yaw);
            dg.feed_quantized(d.battery * 1000.0);
            dg.feed_i64(d.has_seed ? 1 : 0);
            dg.feed_i64(d.status == DroneStatus::Active ? 0 : 1);
            if (d.memory) {
                dg.feed_quantized(d.memory->x);
                dg.feed_quantized(d.memory->y);
                dg.feed_quantized(d.memory->z);
            }
        }
        dg.feed_i64(counters_.tree_drops);
        dg.feed_i64(counters_.recharges);
        dg.feed_i64(counters_.out_of_energy);
        return dg.value();
    }

private:
    void respawn(int i) {
        auto& d = drones_[i];
        d.position = {scenario_.station.x,
                      scenario_.station.y + config_.altitude_clearance + i * 1.0,
                      scenario_.station.z};
        d.yaw = 0.0;
        d.last_move = {};
        d.battery = 1.0;
        d.has_seed = false;
        d.return_active = false;
        d.status = DroneStatus::Active;
    }

    Scenario scenario_;
    EnvConfig config_;
    std::uint64_t rng_seed_;
    std::vector<DroneState> drones_;
    std::vector<bool> pending_respawn_;
    ProximityGraph last_graph_;
    EpisodeCounters counters_;
    int step_count_ = 0;
};

}  // namespace reforest
