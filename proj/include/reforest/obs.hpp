#pragma once

// Normalized stacked vector observations and the 16x16 downward-camera
// grid. Two vector layouts exist: `full21` keeps every enumerated field
// (21 scalars, stacked total 298) and `paper15` packs to 15 scalars so
// the stacked total is the canonical 286.

#include <array>
#include <cmath>
#include <vector>

#include "reforest/env.hpp"

namespace reforest {

enum class ObsLayout { Paper15, Full21 };

constexpr int kVisualSide = 16;
constexpr int kVisualCells = kVisualSide * kVisualSide;

inline int vector_obs_size(ObsLayout layout) {
    return layout == ObsLayout::Paper15 ? 15 : 21;
}
inline int stacked_obs_size(ObsLayout layout, bool with_visual = true) {
    return 2 * vector_obs_size(layout) + (with_visual ? kVisualCells : 0);
}

using VectorObs = std::vector<double>;
using VisualObs = std::array<double, kVisualCells>;

// Fixed component order:
//   full21:  ground(1) pos(3) dir(3) to_station(3) seed(1) battery(1) inbox(9)
//   paper15: ground(1) pos(3) dir(3) to_station(3) seed(1) battery(1)
//            inbox distances(3)
inline VectorObs build_vector_obs(const DroneState& d, const Scenario& scenario,
                                  ObsLayout layout) {
    const Vec3& station = scenario.station;
    const double half = scenario.config.half_extent();
    VectorObs o;
    o.reserve(vector_obs_size(layout));

    const double ground = scenario.ground_height(d.position.x, d.position.z);
    o.push_back(clamp01((d.position.y - ground) / 100.0));

    o.push_back(std::clamp(d.position.x / half, -1.0, 1.0));
    o.push_back(std::clamp(d.position.y / half, -1.0, 1.0));
    o.push_back(std::clamp(d.position.z / half, -1.0, 1.0));

    // movement direction, unit-normalized then mapped into [0,1]
    const double mv = d.last_move.norm();
    const Vec3 dir = mv > 1e-12 ? d.last_move * (1.0 / mv) : Vec3{};
    o.push_back((std::clamp(dir.x, -1.0, 1.0) + 1.0) / 2.0);
    o.push_back((std::clamp(dir.y, -1.0, 1.0) + 1.0) / 2.0);
    o.push_back((std::clamp(dir.z, -1.0, 1.0) + 1.0) / 2.0);

    const Vec3 to_station = station - d.position;
    o.push_back(std::clamp(to_station.x / half, -1.0, 1.0));
    o.push_back(std::clamp(to_station.y / half, -1.0, 1.0));
    o.push_back(std::clamp(to_station.z / half, -1.0, 1.0));

    o.push_back(d.has_seed ? 1.0 : 0.0);
    o.push_back(clamp01(d.battery));

    if (layout == ObsLayout::Full21) {
        for (const auto& slot : d.inbox) {
            if (slot) {
                o.push_back(std::clamp(slot->x / half, -1.0, 1.0));
                o.push_back(std::clamp(slot->y / half, -1.0, 1.0));
                o.push_back(std::clamp(slot->z / half, -1.0, 1.0));
            } else {
                o.push_back(0.0);
                o.push_back(0.0);
                o.push_back(0.0);
            }
        }
    } else {
        // distance-encoded slots; empty slot = 0
        for (const auto& slot : d.inbox) {
            if (slot)
                o.push_back(clamp01(euclidean_distance(d.position, *slot) / (2.0 * half)));
            else
                o.push_back(0.0);
        }
    }
    return o;
}

// Square ground footprint of half-width altitude*tan(60 deg), axis-aligned
// to drone yaw, sampled at 16x16 cell centers. Cell value packs terrain
// height into [0,0.5] and adds 0.5 when a tree sits in the cell.
inline VisualObs render_visual(const DroneState& d, const Scenario& scenario) {
    VisualObs grid{};
    const double ground = scenario.ground_height(d.position.x, d.position.z);
    const double altitude = std::max(d.position.y - ground, 0.0);
    const double half_fov = altitude * std::tan(60.0 * M_PI / 180.0);
    if (half_fov <= 0.0) return grid;
    const double cell_half = half_fov / kVisualSide;
    const double yaw_rad = d.yaw * M_PI / 180.0;
    const double c = std::cos(yaw_rad), s = std::sin(yaw_rad);
    const double world_half = scenario.config.half_extent();

    for (int row = 0; row < kVisualSide; ++row) {
        for (int col = 0; col < kVisualSide; ++col) {
            // local frame: +v forward (heading), +u right
            const double u = ((col + 0.5) / kVisualSide * 2.0 - 1.0) * half_fov;
            const double v = ((row + 0.5) / kVisualSide * 2.0 - 1.0) * half_fov;
            const double wx = d.position.x + u * c + v * s;
            const double wz = d.position.z - u * s + v * c;
            double value = 0.0;
            if (std::abs(wx) <= world_half && std::abs(wz) <= world_half) {
                const double h = scenario.ground_height(wx, wz);
                value = std::clamp(0.5 * h / scenario.config.max_altitude, 0.0, 0.5);
                const auto td = scenario.nearest_tree_distance(wx, wz);
                if (td && *td <= cell_half) value += 0.5;
            }
            grid[row * kVisualSide + col] = value;
        }
    }
    return grid;
}

struct StackedObs {
    std::vector<double> flat;  // [prev | cur | visual]
};

inline StackedObs stack(const VectorObs& prev, const VectorObs& cur, const VisualObs* vis) {
    StackedObs out;
    out.flat.reserve(prev.size() + cur.size() + (vis ? kVisualCells : 0));
    out.flat.insert(out.flat.end(), prev.begin(), prev.end());
    out.flat.insert(out.flat.end(), cur.begin(), cur.end());
    if (vis) out.flat.insert(out.flat.end(), vis->begin(), vis->end());
    return out;
}

// Per-agent frame stacker; first step duplicates the current frame.
class ObsStacker {
public:
    ObsStacker(int n_agents, ObsLayout layout, bool with_visual)
        : layout_(layout), with_visual_(with_visual), prev_(n_agents) {}

    StackedObs observe(int agent, const DroneState& d, const Scenario& scenario) {
        VectorObs cur = build_vector_obs(d, scenario, layout_);
        if (prev_[agent].empty()) prev_[agent] = cur;
        StackedObs out;
        if (with_visual_) {
            VisualObs vis = render_visual(d, scenario);
            out = stack(prev_[agent], cur, &vis);
        } else {
            out = stack(prev_[agent], cur, nullptr);
        }
        prev_[agent] = std::move(cur);
        return out;
    }

    // Same stacking rule without advancing the frame history.
    StackedObs peek(int agent, const DroneState& d, const Scenario& scenario) const {
        VectorObs cur = build_vector_obs(d, scenario, layout_);
        const VectorObs& prev = prev_[agent].empty() ? cur : prev_[agent];
        if (with_visual_) {
            VisualObs vis = render_visual(d, scenario);
            return stack(prev, cur, &vis);
        }
        return stack(prev, cur, nullptr);
    }

    void reset() {
        for (auto& p : prev_) p.clear();
    }

    ObsLayout layout() const { return layout_; }
    bool with_visual() const { return with_visual_; }
    int size() const { return stacked_obs_size(layout_, with_visual_); }

private:
    ObsLayout layout_;
    bool with_visual_;
    std::vector<VectorObs> prev_;
};

}  // namespace reforest
