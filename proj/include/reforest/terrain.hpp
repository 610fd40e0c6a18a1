#pragma once

// Procedural scenario generation: fractal value noise heightfield with a
// difficulty-scaled bowl filter, fertility mask, tree placement, station
// selection, and a spatial hash for nearest-tree queries.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "reforest/common.hpp"

namespace reforest {

struct NoiseParams {
    int octaves = 4;
    double persistence = 0.5;
    double lacunarity = 2.0;
    double scale = 300.0;  // metres per lattice unit at the base octave
};

struct ForestParams {
    double fertile_low = 0.20;   // normalized height band
    double fertile_high = 0.60;
    double slope_limit_deg = 30.0;
    double forest_noise_threshold = 0.55;
    double tree_spacing = 10.0;  // metres
    double tree_jitter = 3.0;    // metres, +/- per axis
};

struct ScenarioConfig {
    std::uint64_t seed = 0;
    int difficulty = 5;          // 1..10
    double world_extent = 1200.0;
    double max_altitude = 100.0;
    int grid_resolution = 241;   // vertices per side, 5 m spacing at defaults
    NoiseParams noise;
    ForestParams forest;

    void validate() const {
        if (world_extent <= 0.0) throw std::invalid_argument("world_extent must be positive");
        if (grid_resolution < 2) throw std::invalid_argument("grid_resolution must be >= 2");
        if (difficulty < 1 || difficulty > 10) throw std::invalid_argument("difficulty must be in 1..10");
        if (noise.octaves < 1) throw std::invalid_argument("octaves must be >= 1");
        if (noise.persistence <= 0.0 || noise.persistence > 1.0)
            throw std::invalid_argument("persistence must be in (0,1]");
        if (noise.lacunarity < 1.0) throw std::invalid_argument("lacunarity must be >= 1");
    }

    double half_extent() const { return world_extent / 2.0; }
    double grid_spacing() const { return world_extent / (grid_resolution - 1); }
    double amplitude() const { return max_altitude * difficulty / 10.0; }
    double bowl_gain() const { return 10.0 * difficulty; }
};

struct DegenerateScenario : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- value noise ------------------------------------------------------------

namespace detail {

inline double lattice_value(std::int64_t xi, std::int64_t zi, std::uint64_t seed, int octave) {
    std::uint64_t h = splitmix64(seed ^ 0xA24BAED4963EE407ull);
    h = hash_combine(h, static_cast<std::uint64_t>(octave));
    h = hash_combine(h, static_cast<std::uint64_t>(xi));
    h = hash_combine(h, static_cast<std::uint64_t>(zi));
    return hash_to_unit(h);
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Bilinear smoothstep interpolation of the hashed lattice.
inline double value_noise(double x, double z, std::uint64_t seed, int octave) {
    const double fx = std::floor(x), fz = std::floor(z);
    const auto xi = static_cast<std::int64_t>(fx);
    const auto zi = static_cast<std::int64_t>(fz);
    const double tx = smoothstep(x - fx);
    const double tz = smoothstep(z - fz);
    const double v00 = lattice_value(xi, zi, seed, octave);
    const double v10 = lattice_value(xi + 1, zi, seed, octave);
    const double v01 = lattice_value(xi, zi + 1, seed, octave);
    const double v11 = lattice_value(xi + 1, zi + 1, seed, octave);
    const double a = v00 + (v10 - v00) * tx;
    const double b = v01 + (v11 - v01) * tx;
    return a + (b - a) * tz;
}

}  // namespace detail

// Octave sum with persistence^i amplitudes and lacunarity^i frequencies,
// normalized by the amplitude sum. Result in [0,1].
inline double fractal_noise(double x, double z, std::uint64_t seed, const NoiseParams& p) {
    double total = 0.0, amplitude = 1.0, norm = 0.0, frequency = 1.0 / p.scale;
    for (int i = 0; i < p.octaves; ++i) {
        total += amplitude * detail::value_noise(x * frequency, z * frequency, seed, i);
        norm += amplitude;
        amplitude *= p.persistence;
        frequency *= p.lacunarity;
    }
    return total / norm;
}

inline double fractal_amplitude_normalizer(const NoiseParams& p) {
    double amplitude = 1.0, norm = 0.0;
    for (int i = 0; i < p.octaves; ++i) {
        norm += amplitude;
        amplitude *= p.persistence;
    }
    return norm;
}

// h + bowl_gain(difficulty) * (r / r_max)^2, capped at max_altitude.
// r_max is the half-diagonal so the cap binds only at the very corners.
inline double apply_bowl_filter(double h, double x, double z, const ScenarioConfig& cfg) {
    const double r = std::sqrt(x * x + z * z);
    const double r_max = cfg.half_extent() * std::sqrt(2.0);
    const double t = r / r_max;
    return std::min(h + cfg.bowl_gain() * t * t, cfg.max_altitude);
}

// --- spatial hash over tree positions --------------------------------------

class TreeIndex {
public:
    explicit TreeIndex(double world_extent = 1200.0, double cell = 25.0)
        : half_(world_extent / 2.0), cell_(cell) {
        cols_ = static_cast<int>(std::ceil(world_extent / cell_)) + 1;
        cells_.resize(static_cast<std::size_t>(cols_) * cols_);
    }

    void insert(double x, double z) {
        const int idx = static_cast<int>(trees_.size());
        trees_.push_back({x, z});
        cells_[cell_of(x, z)].push_back(idx);
    }

    std::size_t size() const { return trees_.size(); }
    const std::vector<std::pair<double, double>>& trees() const { return trees_; }

    // Exact nearest-neighbor distance via expanding ring search.
    std::optional<double> nearest_distance(double x, double z) const {
        if (trees_.empty()) return std::nullopt;
        const int cx = col(x), cz = col(z);
        double best = std::numeric_limits<double>::infinity();
        const int max_ring = cols_;
        for (int ring = 0; ring <= max_ring; ++ring) {
            // once a candidate is found, rings further than best cannot improve
            if (best < std::numeric_limits<double>::infinity() &&
                (ring - 1) * cell_ > best)
                break;
            scan_ring(cx, cz, ring, x, z, best);
        }
        return best;
    }

private:
    int col(double v) const {
        return std::clamp(static_cast<int>((v + half_) / cell_), 0, cols_ - 1);
    }
    std::size_t cell_of(double x, double z) const {
        return static_cast<std::size_t>(col(z)) * cols_ + col(x);
    }

    void scan_cell(int cx, int cz, double x, double z, double& best) const {
        if (cx < 0 || cz < 0 || cx >= cols_ || cz >= cols_) return;
        for (int idx : cells_[static_cast<std::size_t>(cz) * cols_ + cx]) {
            const auto& t = trees_[idx];
            const double dx = t.first - x, dz = t.second - z;
            best = std::min(best, std::sqrt(dx * dx + dz * dz));
        }
    }

    void scan_ring(int cx, int cz, int ring, double x, double z, double& best) const {
        if (ring == 0) {
            scan_cell(cx, cz, x, z, best);
            return;
        }
        for (int dx = -ring; dx <= ring; ++dx) {
            scan_cell(cx + dx, cz - ring, x, z, best);
            scan_cell(cx + dx, cz + ring, x, z, best);
        }
        for (int dz = -ring + 1; dz <= ring - 1; ++dz) {
            scan_cell(cx - ring, cz + dz, x, z, best);
            scan_cell(cx + ring, cz + dz, x, z, best);
        }
    }

    double half_;
    double cell_;
    int cols_;
    std::vector<std::pair<double, double>> trees_;
    std::vector<std::vector<int>> cells_;
};

// --- scenario ---------------------------------------------------------------

class Scenario {
public:
    ScenarioConfig config;
    std::vector<float> heights;      // row-major [grid_resolution x grid_resolution]
    std::vector<std::uint8_t> fertile;
    TreeIndex trees;
    Vec3 station;

    Scenario() : trees(1200.0) {}

    int res() const { return config.grid_resolution; }

    float height_at_vertex(int ix, int iz) const {
        return heights[static_cast<std::size_t>(iz) * res() + ix];
    }

    bool fertile_at_vertex(int ix, int iz) const {
        return fertile[static_cast<std::size_t>(iz) * res() + ix] != 0;
    }

    // Bilinear interpolation of the heightfield at a world position.
    double ground_height(double x, double z) const {
        const double half = config.half_extent();
        const double sp = config.grid_spacing();
        const double gx = std::clamp((x + half) / sp, 0.0, double(res() - 1));
        const double gz = std::clamp((z + half) / sp, 0.0, double(res() - 1));
        const int ix = std::min(static_cast<int>(gx), res() - 2);
        const int iz = std::min(static_cast<int>(gz), res() - 2);
        const double tx = gx - ix, tz = gz - iz;
        const double h00 = height_at_vertex(ix, iz);
        const double h10 = height_at_vertex(ix + 1, iz);
        const double h01 = height_at_vertex(ix, iz + 1);
        const double h11 = height_at_vertex(ix + 1, iz + 1);
        return (h00 * (1 - tx) + h10 * tx) * (1 - tz) + (h01 * (1 - tx) + h11 * tx) * tz;
    }

    // Fertility of the grid cell a world position falls in (nearest vertex).
    bool fertile_at(double x, double z) const {
        const double half = config.half_extent();
        const double sp = config.grid_spacing();
        const int ix = std::clamp(static_cast<int>(std::lround((x + half) / sp)), 0, res() - 1);
        const int iz = std::clamp(static_cast<int>(std::lround((z + half) / sp)), 0, res() - 1);
        return fertile_at_vertex(ix, iz);
    }

    std::optional<double> nearest_tree_distance(double x, double z) const {
        return trees.nearest_distance(x, z);
    }
    std::optional<double> nearest_tree_distance(const Vec3& p) const {
        return trees.nearest_distance(p.x, p.z);
    }

    // Linear proximity factor over nearest-tree distance: 1 at 2.5 m,
    // 0 at 75 m, 0 outside [2.5, 75] and when no trees exist.
    double reforestation_value(double x, double z) const {
        const auto d = nearest_tree_distance(x, z);
        if (!d) return 0.0;
        return proximity_factor(*d);
    }

    static double proximity_factor(double d) {
        if (d < 2.5 || d > 75.0) return 0.0;
        return clamp01((75.0 - d) / (75.0 - 2.5));
    }

    void add_tree(double x, double z) { trees.insert(x, z); }

    std::uint64_t digest() const {
        Digest dg;
        dg.feed_u64(config.seed);
        dg.feed_i64(config.difficulty);
        dg.feed_i64(res());
        for (float h : heights) dg.feed_quantized(h);
        for (const auto& t : trees.trees()) {
            dg.feed_quantized(t.first);
            dg.feed_quantized(t.second);
        }
        dg.feed_quantized(station.x);
        dg.feed_quantized(station.y);
        dg.feed_quantized(station.z);
        return dg.value();
    }
};

inline Scenario generate_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    Scenario s;
    s.config = cfg;
    s.trees = TreeIndex(cfg.world_extent);
    const int n = cfg.grid_resolution;
    const double half = cfg.half_extent();
    const double sp = cfg.grid_spacing();

    s.heights.resize(static_cast<std::size_t>(n) * n);
    for (int iz = 0; iz < n; ++iz) {
        for (int ix = 0; ix < n; ++ix) {
            const double x = -half + ix * sp;
            const double z = -half + iz * sp;
            double h = cfg.amplitude() * fractal_noise(x, z, cfg.seed, cfg.noise);
            h = apply_bowl_filter(h, x, z, cfg);
            s.heights[static_cast<std::size_t>(iz) * n + ix] =
                static_cast<float>(std::clamp(h, 0.0, cfg.max_altitude));
        }
    }

    // fertility: normalized height band and slope limit
    s.fertile.assign(static_cast<std::size_t>(n) * n, 0);
    const double slope_limit = std::tan(cfg.forest.slope_limit_deg * M_PI / 180.0);
    for (int iz = 0; iz < n; ++iz) {
        for (int ix = 0; ix < n; ++ix) {
            const double h = s.height_at_vertex(ix, iz);
            const double hn = h / cfg.max_altitude;
            if (hn < cfg.forest.fertile_low || hn > cfg.forest.fertile_high) continue;
            const int xm = std::max(ix - 1, 0), xp = std::min(ix + 1, n - 1);
            const int zm = std::max(iz - 1, 0), zp = std::min(iz + 1, n - 1);
            const double dx = (s.height_at_vertex(xp, iz) - s.height_at_vertex(xm, iz)) / ((xp - xm) * sp);
            const double dz = (s.height_at_vertex(ix, zp) - s.height_at_vertex(ix, zm)) / ((zp - zm) * sp);
            if (std::sqrt(dx * dx + dz * dz) <= slope_limit)
                s.fertile[static_cast<std::size_t>(iz) * n + ix] = 1;
        }
    }

    // trees on a jittered tree_spacing lattice, gated by an independent
    // forest-noise channel, on fertile cells only
    const std::uint64_t forest_seed = splitmix64(cfg.seed ^ 0x5851F42D4C957F2Dull);
    const int lattice = static_cast<int>(cfg.world_extent / cfg.forest.tree_spacing);
    for (int jz = 0; jz < lattice; ++jz) {
        for (int jx = 0; jx < lattice; ++jx) {
            const double cxp = -half + (jx + 0.5) * cfg.forest.tree_spacing;
            const double czp = -half + (jz + 0.5) * cfg.forest.tree_spacing;
            if (fractal_noise(cxp, czp, forest_seed, cfg.noise) <= cfg.forest.forest_noise_threshold)
                continue;
            std::uint64_t jh = hash_combine(hash_combine(splitmix64(cfg.seed ^ 0x2545F4914F6CDD1Dull),
                                                         static_cast<std::uint64_t>(jx)),
                                            static_cast<std::uint64_t>(jz));
            const double jxoff = (hash_to_unit(jh) * 2.0 - 1.0) * cfg.forest.tree_jitter;
            const double jzoff = (hash_to_unit(splitmix64(jh)) * 2.0 - 1.0) * cfg.forest.tree_jitter;
            const double tx = std::clamp(cxp + jxoff, -half, half);
            const double tz = std::clamp(czp + jzoff, -half, half);
            if (!s.fertile_at(tx, tz)) continue;
            s.add_tree(tx, tz);
        }
    }

    // station: lowest fertile vertex, ties broken by distance to center
    bool found = false;
    double best_h = 0.0, best_r = 0.0;
    int best_ix = 0, best_iz = 0;
    for (int iz = 0; iz < n; ++iz) {
        for (int ix = 0; ix < n; ++ix) {
            if (!s.fertile_at_vertex(ix, iz)) continue;
            const double x = -half + ix * sp;
            const double z = -half + iz * sp;
            // mm quantization keeps the tie-break platform-stable
            const double h = std::round(s.height_at_vertex(ix, iz) * 1000.0) / 1000.0;
            const double r = std::sqrt(x * x + z * z);
            if (!found || h < best_h || (h == best_h && r < best_r)) {
                found = true;
                best_h = h;
                best_r = r;
                best_ix = ix;
                best_iz = iz;
            }
        }
    }
    if (!found) throw DegenerateScenario("no fertile cells; pick another seed");
    s.station = {-half + best_ix * sp, s.height_at_vertex(best_ix, best_iz), -half + best_iz * sp};
    return s;
}

}  // namespace reforest
