// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace matforge {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes, map sets or counts that do not fit together.
class StructuralError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid user-facing configuration or argument.
class ConfigError : public Error {
public:
    using Error::Error;
};

using Rng = std::mt19937_64;

constexpr double kPi = 3.14159265358979323846;

std::uint64_t splitmix64(std::uint64_t x);

/// Independent stream keyed by (seed, stream). Used wherever results must not
/// depend on evaluation order, e.g. per-pixel or per-record randomness.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

double uniform(Rng& rng, double lo = 0.0, double hi = 1.0);
double gaussian(Rng& rng);
int uniform_int(Rng& rng, int lo, int hi); // inclusive bounds

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

/// FNV-1a over bytes, rendered as 16 hex digits. Used for config/manifest hashes.
std::string fnv1a_hex(const std::string& bytes);

} // namespace matforge
