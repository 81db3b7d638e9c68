// SPDX-License-Identifier: Apache-2.0
#include "matforge/common.hpp"

#include <cstdio>
#include <sstream>

namespace matforge {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(splitmix64(stream)),
                      static_cast<std::uint32_t>(splitmix64(stream) >> 32)};
    return Rng(seq);
}

double uniform(Rng& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

double gaussian(Rng& rng)
{
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

int uniform_int(Rng& rng, int lo, int hi)
{
    std::uniform_int_distribution<int> dist(lo, hi);
    return dist(rng);
}

std::string rng_state(const Rng& rng)
{
    std::ostringstream out;
    out << rng;
    return out.str();
}

Rng rng_from_state(const std::string& state)
{
    Rng rng;
    std::istringstream in(state);
    in >> rng;
    if (!in)
        throw ConfigError("malformed RNG state");
    return rng;
}

std::string fnv1a_hex(const std::string& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace matforge
