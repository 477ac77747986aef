#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace chunkrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Runtime contract check. Unlike assert(), stays on in release builds;
// most invariant violations here are config or data errors, not bugs.
inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

// SplitMix64 step, used both as a hash and as a seed deriver.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and stream index.
// Episode/worker streams must not overlap even for adjacent indices.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    return splitmix64(base ^ splitmix64(stream + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline double uniform01(Rng& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double normal01(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

// Uniform integer in [0, n).
inline int uniform_int(Rng& rng, int n) {
    return std::uniform_int_distribution<int>(0, n - 1)(rng);
}

// Fixed-format float printing shared by every CSV/report writer so that
// reruns are byte-identical.
std::string format_double(double v);

// FNV-1a over bytes; stable across platforms, used for instance hashes.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s, std::uint64_t h);
std::string hex64(std::uint64_t v);

}  // namespace chunkrl
