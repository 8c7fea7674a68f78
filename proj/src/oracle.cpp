#include "vc/oracle.hpp"

#include <algorithm>

namespace vc::oracle {

std::vector<std::uint64_t> sieve(std::uint64_t n) {
  std::vector<bool> composite(n + 1, false);
  std::vector<std::uint64_t> primes;
  for (std::uint64_t i = 2; i <= n; ++i) {
    if (composite[i]) continue;
    primes.push_back(i);
    for (std::uint64_t j = i * i; j <= n; j += i) composite[j] = true;
  }
  return primes;
}

std::vector<std::uint64_t> primes_between(std::uint64_t lo, std::uint64_t hi) {
  auto all = sieve(hi);
  all.erase(all.begin(), std::lower_bound(all.begin(), all.end(), lo));
  return all;
}

}  // namespace vc::oracle
