#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace proxyopt {

/// The project-wide generator. All randomness is seeded explicitly.
using Rng = std::mt19937_64;

/// Derive an independent sub-seed for a named stage, e.g. derive_seed(s, "mcmc/chain2").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

Rng make_rng(std::uint64_t seed, std::string_view tag);

/// Standard normal draw using a fixed Box-Muller construction so draws do not
/// depend on the standard library's distribution implementation.
double standard_normal(Rng& rng);

/// Uniform draw in [0, 1).
double uniform01(Rng& rng);

}  // namespace proxyopt
