#pragma once

// Shared primitives: 3-D vector math, deterministic hashing and RNG,
// content digests. Everything here is platform-stable by construction
// (no libc rand, no std::normal_distribution).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

namespace reforest {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;  // altitude
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline double horizontal_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x - b.x, dz = a.z - b.z;
    return std::sqrt(dx * dx + dz * dz);
}

inline double euclidean_distance(const Vec3& a, const Vec3& b) {
    return (a - b).norm();
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// --- deterministic hashing -------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
    return splitmix64(h ^ (v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2)));
}

// Uniform in [0,1) from a 64-bit hash, 53-bit mantissa.
inline double hash_to_unit(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// --- deterministic counter-based RNG ---------------------------------------

// splitmix64 stream; identical sequences on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(splitmix64(seed ^ 0xD6E8FEB86659FD93ull)) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    double uniform() { return hash_to_unit(next_u64()); }  // [0,1)

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; no cached spare so the stream position is predictable.
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint32_t uniform_int(std::uint32_t n) {
        return static_cast<std::uint32_t>(next_u64() % n);
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

// --- content digest --------------------------------------------------------

// FNV-1a over raw bytes; callers feed quantized integers only so the
// digest is independent of FP rounding environment.
class Digest {
public:
    void feed_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h_ ^= (v >> (8 * i)) & 0xFF;
            h_ *= 0x100000001B3ull;
        }
    }
    void feed_i64(std::int64_t v) { feed_u64(static_cast<std::uint64_t>(v)); }
    // millimetre quantization
    void feed_quantized(double v) {
        feed_i64(static_cast<std::int64_t>(std::llround(v * 1000.0)));
    }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xCBF29CE484222325ull;
};

}  // namespace reforest
