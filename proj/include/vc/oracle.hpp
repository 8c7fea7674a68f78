#pragma once

// Independent check for the trial-division workload. Shares no code with
// find_primes.

#include <cstdint>
#include <vector>

namespace vc::oracle {

/// All primes <= n by the sieve of Eratosthenes.
std::vector<std::uint64_t> sieve(std::uint64_t n);

/// Primes of sieve(hi) restricted to [lo, hi].
std::vector<std::uint64_t> primes_between(std::uint64_t lo, std::uint64_t hi);

}  // namespace vc::oracle
