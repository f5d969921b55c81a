#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace macnet {

// splitmix64 finalizer. Used to derive independent sub-seeds so that
// per-patch / per-parameter / per-epoch streams never depend on draw order.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Engine seeded from (seed, name). Adding or removing other streams does not
// perturb this one, which keeps e.g. trunk init identical with and without
// auxiliary heads.
inline std::mt19937_64 named_engine(uint64_t seed, std::string_view name) {
    return std::mt19937_64(mix_seed(seed, fnv1a(name)));
}

}  // namespace macnet
