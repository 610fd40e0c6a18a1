#pragma once

// Per-tick proximity graph (k nearest neighbours within comm range) and
// one-hop location message exchange into bounded inboxes.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "reforest/common.hpp"

namespace reforest {

constexpr int kInboxSlots = 3;

struct Neighbor {
    int agent = -1;
    double distance = 0.0;
};

struct ProximityGraph {
    // per-agent neighbor lists, ascending by distance, ties by lower index
    std::vector<std::vector<Neighbor>> neighbors;
};

using Inbox = std::array<std::optional<Vec3>, kInboxSlots>;

// Directed k-NN-within-radius graph. A 200 m hash grid keeps the build
// O(n) expected; n=10 would not need it but larger swarms do.
inline ProximityGraph build_graph(const std::vector<Vec3>& positions, double comm_range, int k) {
    const int n = static_cast<int>(positions.size());
    ProximityGraph g;
    g.neighbors.resize(n);
    if (k <= 0 || n < 2) return g;

    struct CellKey {
        int x, z;
        bool operator==(const CellKey&) const = default;
    };
    const double cell = comm_range;
    auto cell_of = [&](const Vec3& p) {
        return CellKey{static_cast<int>(std::floor(p.x / cell)),
                       static_cast<int>(std::floor(p.z / cell))};
    };
    std::vector<std::pair<CellKey, int>> buckets;
    buckets.reserve(n);
    for (int i = 0; i < n; ++i) buckets.push_back({cell_of(positions[i]), i});
    std::sort(buckets.begin(), buckets.end(), [](const auto& a, const auto& b) {
        if (a.first.x != b.first.x) return a.first.x < b.first.x;
        if (a.first.z != b.first.z) return a.first.z < b.first.z;
        return a.second < b.second;
    });
    auto candidates_in_cell = [&](CellKey key, std::vector<int>& out) {
        auto lo = std::lower_bound(buckets.begin(), buckets.end(), key,
                                   [](const auto& a, const CellKey& b) {
                                       if (a.first.x != b.x) return a.first.x < b.x;
                                       return a.first.z < b.z;
                                   });
        for (auto it = lo; it != buckets.end() && it->first == key; ++it) out.push_back(it->second);
    };

    std::vector<int> cand;
    for (int i = 0; i < n; ++i) {
        cand.clear();
        const CellKey c = cell_of(positions[i]);
        for (int dx = -1; dx <= 1; ++dx)
            for (int dz = -1; dz <= 1; ++dz) candidates_in_cell({c.x + dx, c.z + dz}, cand);

        auto& list = g.neighbors[i];
        for (int j : cand) {
            if (j == i) continue;
            const double d = euclidean_distance(positions[i], positions[j]);
            if (d > comm_range) continue;
            list.push_back({j, d});
        }
        std::sort(list.begin(), list.end(), [](const Neighbor& a, const Neighbor& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            return a.agent < b.agent;
        });
        if (static_cast<int>(list.size()) > k) list.resize(k);
    }
    return g;
}

// Slot i of a receiver holds its i-th nearest neighbor's memory, when set.
// No cost, no reward, no sender mutation.
inline std::vector<Inbox> exchange_messages(const ProximityGraph& graph,
                                   const std::vector<std::optional<Vec3>>& memories) {
    std::vector<Inbox> inboxes(graph.neighbors.size());
    for (std::size_t i = 0; i < graph.neighbors.size(); ++i) {
        const auto& list = graph.neighbors[i];
        for (std::size_t slot = 0; slot < list.size() && slot < kInboxSlots; ++slot) {
            const int sender = list[slot].agent;
            if (memories[sender]) inboxes[i][slot] = memories[sender];
        }
    }
    return inboxes;
}

}  // namespace reforest
