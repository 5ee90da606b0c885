#ifndef VARHOR_RNG_HPP
#define VARHOR_RNG_HPP

#include <cmath>
#include <cstdint>

namespace varhor {

// Counter-based Gaussian stream: each draw is a pure function of
// (seed, path, step, component), so path-parallel scheduling cannot change
// the sampled increments.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t key(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                         std::uint64_t component) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ path);
    h = splitmix64(h ^ step);
    h = splitmix64(h ^ component);
    return h;
}

inline double uniform01(std::uint64_t h) {
    // (0, 1], never exactly 0 so log() below is safe
    return static_cast<double>((h >> 11) + 1) * 0x1.0p-53;
}

inline double normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step,
                     std::uint64_t component) {
    std::uint64_t h = key(seed, path, step, component);
    double u1 = uniform01(h);
    double u2 = uniform01(splitmix64(h ^ 0xd1b54a32d192ed03ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

} // namespace rng

} // namespace varhor

#endif
