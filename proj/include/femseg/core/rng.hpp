#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace femseg {

// FNV-1a, also used for checkpoint spec hashes.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// All randomness flows from one root seed through named sub-streams, so that
// consuming one stream (say, discriminator init) never shifts another
// (batch shuffling). Stream identity = (root, name, index), independent of
// call order.
class RngStream {
public:
    RngStream(uint64_t root_seed, std::string_view name, uint64_t index = 0) {
        uint64_t h = fnv1a64(name);
        h = fnv1a64(&root_seed, sizeof root_seed, h);
        h = fnv1a64(&index, sizeof index, h);
        engine_.seed(h);
    }

    std::mt19937_64& engine() { return engine_; }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }

    int64_t uniform_int(int64_t lo, int64_t hi) { // inclusive
        return std::uniform_int_distribution<int64_t>(lo, hi)(engine_);
    }

    bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

private:
    std::mt19937_64 engine_;
};

} // namespace femseg
