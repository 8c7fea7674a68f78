#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "vc/oracle.hpp"
#include "vc/workloads.hpp"

using namespace vc::workloads;

namespace {

void check_partition(const RangeSpec& spec, const std::vector<WorkUnit>& units) {
  REQUIRE(units.size() == spec.parts);
  std::uint64_t next = spec.lo;
  std::uint64_t min_size = UINT64_MAX, max_size = 0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    REQUIRE(units[i].index == i);
    REQUIRE(units[i].lo == next);
    REQUIRE(units[i].hi >= units[i].lo);
    min_size = std::min(min_size, units[i].size());
    max_size = std::max(max_size, units[i].size());
    if (i > 0) REQUIRE(units[i].size() <= units[i - 1].size());
    next = units[i].hi + 1;
  }
  REQUIRE(next == spec.hi + 1);
  REQUIRE(max_size - min_size <= 1);
}

}  // namespace

TEST_CASE("sieve oracle") {
  CHECK(vc::oracle::sieve(10) == std::vector<std::uint64_t>{2, 3, 5, 7});
  CHECK(vc::oracle::sieve(100).size() == 25);
  CHECK(vc::oracle::primes_between(3, 2'000'000).size() == 148'932);
  CHECK(vc::oracle::primes_between(2'000'001, 3'000'000).size() == 67'883);
}

TEST_CASE("partition of the first benchmark range") {
  const RangeSpec spec{3, 2'000'000, 2059};
  const auto units = partition_range(spec);
  check_partition(spec, units);
  // 1,999,998 = 2059 * 971 + 709
  std::size_t big = 0;
  for (const auto& u : units) {
    CHECK((u.size() == 971 || u.size() == 972));
    big += u.size() == 972;
  }
  CHECK(big == 709);
  CHECK(units.front() == WorkUnit{0, 3, 974});
}

TEST_CASE("partition edge cases") {
  check_partition({2'000'001, 3'000'000, 1080}, partition_range({2'000'001, 3'000'000, 1080}));
  CHECK(partition_range({3, 3, 1}) == std::vector<WorkUnit>{{0, 3, 3}});
  CHECK_THROWS_AS(partition_range({3, 4, 3}), InvalidSpec);
  CHECK_THROWS_AS(partition_range({5, 4, 1}), InvalidSpec);
  CHECK_THROWS_AS(partition_range({1, 4, 1}), InvalidSpec);
  CHECK_THROWS_AS(partition_range({3, 4, 0}), InvalidSpec);
}

TEST_CASE("partition soundness on 1000 random ranges") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t lo = std::uniform_int_distribution<std::uint64_t>(2, 1'000'000)(rng);
    const std::uint64_t hi = lo + std::uniform_int_distribution<std::uint64_t>(0, 100'000)(rng);
    const std::uint64_t parts = std::uniform_int_distribution<std::uint64_t>(1, std::min<std::uint64_t>(hi - lo + 1, 5000))(rng);
    const RangeSpec spec{lo, hi, parts};
    check_partition(spec, partition_range(spec));
  }
}

TEST_CASE("find_primes") {
  CHECK(find_primes(3, 10) == std::vector<std::uint64_t>{3, 5, 7});
  CHECK(find_primes(2, 2) == std::vector<std::uint64_t>{2});
  CHECK(find_primes(24, 28).empty());
  CHECK(find_primes(3, 2'000'000).size() == 148'932);
  CHECK(find_primes(2'000'001, 3'000'000) == vc::oracle::primes_between(2'000'001, 3'000'000));
}

TEST_CASE("find_primes agrees with the sieve on 1000 random subranges") {
  std::mt19937_64 rng(11);
  const auto all = vc::oracle::sieve(100'000);
  for (int i = 0; i < 1000; ++i) {
    std::uint64_t a = std::uniform_int_distribution<std::uint64_t>(2, 100'000)(rng);
    std::uint64_t b = std::uniform_int_distribution<std::uint64_t>(2, 100'000)(rng);
    if (a > b) std::swap(a, b);
    std::vector<std::uint64_t> expect;
    for (auto p : all) {
      if (p >= a && p <= b) expect.push_back(p);
    }
    REQUIRE(find_primes(a, b) == expect);
  }
}

TEST_CASE("canonical payload") {
  CHECK(prime_app_runner({0, 3, 10}) == "3\n5\n7\n");
  CHECK(prime_app_runner({0, 24, 28}).empty());
  CHECK(prime_app_runner({5, 3, 974}) == prime_app_runner({5, 3, 974}));
  CHECK(parse_payload("3\n5\n7\n") == std::vector<std::uint64_t>{3, 5, 7});
  CHECK(parse_payload("").empty());
  for (const char* bad : {"3\n3\n", "5\n3\n", "3", "03\n", "3\n\n", "-3\n", "3 \n", "x\n"}) {
    CHECK_THROWS_AS(parse_payload(bad), std::invalid_argument);
  }
  CHECK(payload_fits_unit({0, 3, 10}, "3\n5\n7\n"));
  CHECK_FALSE(payload_fits_unit({0, 3, 10}, "3\n11\n"));
  CHECK_FALSE(payload_fits_unit({0, 3, 10}, "garbage"));
}

TEST_CASE("canonical payload is injective on random prime sets") {
  std::mt19937_64 rng(3);
  const auto primes = vc::oracle::sieve(2000);
  std::set<std::string> seen;
  std::set<std::vector<std::uint64_t>> sets;
  for (int i = 0; i < 500; ++i) {
    std::vector<std::uint64_t> pick;
    for (auto p : primes) {
      if (rng() % 7 == 0) pick.push_back(p);
    }
    const auto text = canonical_payload(pick);
    REQUIRE(parse_payload(text) == pick);
    if (sets.insert(pick).second) REQUIRE(seen.insert(text).second);
  }
}

TEST_CASE("data part encoding") {
  const WorkUnit u{7, 3, 974};
  const auto bytes = encode_data_part(u);
  CHECK(bytes.size() == 972 * 4);
  CHECK(decode_data_part(bytes, 7) == u);
  CHECK(encode_data_part({0, 5, 5}).size() == 4);
  CHECK_THROWS_AS(decode_data_part("abc"), std::invalid_argument);
  CHECK_THROWS_AS(decode_data_part(""), std::invalid_argument);
  auto gap = bytes;
  gap[4] = static_cast<char>(gap[4] + 1);
  CHECK_THROWS_AS(decode_data_part(gap), std::invalid_argument);
}

TEST_CASE("manifest round trip") {
  const auto units = partition_range({3, 1000, 7});
  CHECK(parse_manifest(format_manifest(units)) == units);
  CHECK_THROWS_AS(parse_manifest("0 3 10\n2 11 20\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_manifest("0 3\n"), std::invalid_argument);
}

TEST_CASE("application source") {
  const auto a = prime_app_source("A1");
  const auto b = prime_app_source("A2");
  CHECK(a.size() == 4096);
  CHECK(a != b);
  CHECK(a.find(kBuiltinPrimesMarker) != std::string::npos);
  CHECK(prime_app_source("A1", 10).size() > 10);
}
