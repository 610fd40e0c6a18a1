#pragma once

// File formats: P5 PGM exports, tree/trajectory CSV, JSONL metrics,
// versioned binary checkpoints (little-endian, doubles on disk).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reforest/env.hpp"
#include "reforest/nn.hpp"
#include "reforest/terrain.hpp"

namespace reforest::io {

// --- PGM --------------------------------------------------------------------

inline void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels,
                      int width, int height) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), pixels.size());
}

inline std::vector<std::uint8_t> height_map_pixels(const Scenario& s) {
    const int n = s.res();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(n) * n);
    for (int iz = 0; iz < n; ++iz)
        for (int ix = 0; ix < n; ++ix) {
            const double v = s.height_at_vertex(ix, iz) / s.config.max_altitude;
            px[static_cast<std::size_t>(iz) * n + ix] =
                static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
        }
    return px;
}

inline std::vector<std::uint8_t> reforestation_map_pixels(const Scenario& s) {
    const int n = s.res();
    const double half = s.config.half_extent();
    const double sp = s.config.grid_spacing();
    std::vector<std::uint8_t> px(static_cast<std::size_t>(n) * n);
    for (int iz = 0; iz < n; ++iz)
        for (int ix = 0; ix < n; ++ix) {
            const double v = s.reforestation_value(-half + ix * sp, -half + iz * sp);
            px[static_cast<std::size_t>(iz) * n + ix] =
                static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
        }
    return px;
}

// --- CSV --------------------------------------------------------------------

inline void write_tree_csv(const std::string& path, const Scenario& s) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "x,z\n" << std::fixed << std::setprecision(3);
    for (const auto& t : s.trees.trees()) f << t.first << "," << t.second << "\n";
}

// Per-step trajectory recorder; one CSV row per (step, agent).
class TrajectoryRecorder {
public:
    explicit TrajectoryRecorder(const std::string& path) : f_(path) {
        if (!f_) throw std::runtime_error("cannot open " + path);
        f_ << "step,agent,x,y,z,battery,has_seed,drop_reward,return_reward,"
              "battery_penalty,event_penalty,dropped_seed,recharged,out_of_energy,"
              "saved_memory\n";
    }

    void record(int step, const Env& env, const Env::StepResult& r) {
        f_ << std::fixed << std::setprecision(3);
        const auto& drones = env.drones();
        for (std::size_t i = 0; i < drones.size(); ++i) {
            const auto& d = drones[i];
            const auto& rb = r.rewards[i];
            const auto& ev = r.events.agents[i];
            f_ << step << "," << i << "," << d.position.x << "," << d.position.y << ","
               << d.position.z << "," << std::setprecision(4) << d.battery
               << std::setprecision(3) << "," << (d.has_seed ? 1 : 0) << ","
               << std::setprecision(6) << rb.drop_reward << "," << rb.return_reward << ","
               << rb.battery_penalty << "," << rb.event_penalty << "," << (ev.dropped_seed ? 1 : 0)
               << "," << (ev.recharged ? 1 : 0) << "," << (ev.out_of_energy ? 1 : 0) << ","
               << (ev.saved_memory ? 1 : 0) << "\n";
        }
    }

private:
    std::ofstream f_;
};

// Append-only JSONL metric stream.
class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) : f_(path, std::ios::app) {
        if (!f_) throw std::runtime_error("cannot open " + path);
    }
    void write(const nlohmann::json& j) { f_ << j.dump() << "\n" << std::flush; }

private:
    std::ofstream f_;
};

// --- checkpoint -------------------------------------------------------------

constexpr std::uint32_t kCheckpointMagic = 0x4B434652u;  // "RFCK"
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 8);
}
inline void put_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(os, u);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}
inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
inline double get_f64(std::istream& is) {
    const std::uint64_t u = get_u64(is);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

template <typename T>
void put_tensor_list(std::ostream& os, const std::vector<nn::Tensor<T>>& ts) {
    put_u64(os, ts.size());
    for (const auto& t : ts) {
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        for (T v : t.data) put_f64(os, static_cast<double>(v));
    }
}

template <typename T>
std::vector<nn::Tensor<T>> get_tensor_list(std::istream& is) {
    const std::uint64_t n = get_u64(is);
    std::vector<nn::Tensor<T>> out;
    out.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint32_t nd = get_u32(is);
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(get_u32(is));
        nn::Tensor<T> t(shape);
        for (T& v : t.data) v = static_cast<T>(get_f64(is));
        out.push_back(std::move(t));
    }
    return out;
}
}  // namespace detail

struct CheckpointMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// header + params + optimizer moments + counters. Atomic via temp+rename.
template <typename T>
void save_checkpoint(const std::string& path, const nn::PolicyNet<T>& net,
                     nn::Adam<T>& opt, std::uint64_t train_step, std::uint64_t rng_state) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + tmp);
        detail::put_u32(os, kCheckpointMagic);
        detail::put_u32(os, kCheckpointVersion);
        detail::put_u64(os, net.config().hash());
        detail::put_u64(os, train_step);
        detail::put_u64(os, rng_state);
        detail::put_u64(os, static_cast<std::uint64_t>(opt.step_count()));
        std::vector<nn::Tensor<T>> params;
        for (std::size_t i = 0; i < net.params().count(); ++i)
            params.push_back(net.params()[static_cast<int>(i)]);
        detail::put_tensor_list(os, params);
        detail::put_tensor_list(os, opt.moments1());
        detail::put_tensor_list(os, opt.moments2());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
struct CheckpointMeta {
    std::uint64_t train_step = 0;
    std::uint64_t rng_state = 0;
};

template <typename T>
CheckpointMeta<T> load_checkpoint(const std::string& path, nn::PolicyNet<T>& net,
                                  nn::Adam<T>* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    if (detail::get_u32(is) != kCheckpointMagic) throw CheckpointMismatch("bad magic in " + path);
    if (detail::get_u32(is) != kCheckpointVersion)
        throw CheckpointMismatch("unsupported checkpoint version in " + path);
    const std::uint64_t cfg_hash = detail::get_u64(is);
    if (cfg_hash != net.config().hash())
        throw CheckpointMismatch("checkpoint/config hash mismatch for " + path);
    CheckpointMeta<T> meta;
    meta.train_step = detail::get_u64(is);
    meta.rng_state = detail::get_u64(is);
    const auto opt_steps = static_cast<long>(detail::get_u64(is));
    auto params = detail::get_tensor_list<T>(is);
    if (params.size() != net.params().count())
        throw CheckpointMismatch("parameter count mismatch for " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape != net.params()[static_cast<int>(i)].shape)
            throw CheckpointMismatch("parameter shape mismatch for " + path);
        net.params()[static_cast<int>(i)] = std::move(params[i]);
    }
    auto m1 = detail::get_tensor_list<T>(is);
    auto m2 = detail::get_tensor_list<T>(is);
    if (opt) {
        opt->moments1() = std::move(m1);
        opt->moments2() = std::move(m2);
        opt->set_step_count(opt_steps);
    }
    return meta;
}

// Optional per-tick comms debug dump: edge list (tick, src, dst, distance).
inline void append_graph_csv(std::ofstream& f, int tick, const ProximityGraph& g) {
    f << std::fixed << std::setprecision(3);
    for (std::size_t i = 0; i < g.neighbors.size(); ++i)
        for (const auto& nb : g.neighbors[i])
            f << tick << "," << i << "," << nb.agent << "," << nb.distance << "\n";
}

}  // namespace reforest::io
