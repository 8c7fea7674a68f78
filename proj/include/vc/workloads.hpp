#pragma once

// Range-partitioned prime search: the benchmark application, its data-part
// encoding and the canonical result payload that seeders vote on.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vc::workloads {

struct RangeSpec {
  std::uint64_t lo = 2;
  std::uint64_t hi = 2;
  std::uint64_t parts = 1;
};

struct WorkUnit {
  std::uint64_t index = 0;
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;

  std::uint64_t size() const { return hi - lo + 1; }
  bool operator==(const WorkUnit&) const = default;
};

class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Splits [lo, hi] into `parts` contiguous units whose sizes differ by at
/// most one; the first (len mod parts) units carry the extra element.
std::vector<WorkUnit> partition_range(const RangeSpec& spec);

bool is_prime(std::uint64_t n);

/// Primes in [lo, hi] by trial division up to sqrt(n).
std::vector<std::uint64_t> find_primes(std::uint64_t lo, std::uint64_t hi);

/// Sorted, newline-terminated decimal integers.
std::string canonical_payload(std::span<const std::uint64_t> values);

/// Inverse of canonical_payload. Throws std::invalid_argument unless the
/// text is strictly ascending decimals each followed by '\n'.
std::vector<std::uint64_t> parse_payload(std::string_view payload);

/// Structural check used by seeders before a record may vote: well-formed
/// canonical text whose values all lie inside the unit.
bool payload_fits_unit(const WorkUnit& unit, std::string_view payload);

std::string prime_app_runner(const WorkUnit& unit);

// Data parts carry every candidate integer of the unit as a little-endian
// uint32, so the transferred data size tracks the amount of work.
std::string encode_data_part(const WorkUnit& unit);

/// Recovers lo/hi from an encoded part (index is not encoded and is set to
/// `index`). Throws std::invalid_argument on a malformed or non-contiguous
/// part.
WorkUnit decode_data_part(std::string_view bytes, std::uint64_t index = 0);

// Manifest: one line per part, "index lo hi".
std::string format_manifest(std::span<const WorkUnit> units);
std::vector<WorkUnit> parse_manifest(std::string_view text);
std::vector<WorkUnit> read_manifest(const std::filesystem::path& path);

/// Marker line that makes an application file runnable by the in-process
/// prime runner.
inline constexpr std::string_view kBuiltinPrimesMarker = "# vc-app: builtin=primes";

/// Python source of the prime application, padded with comment lines to
/// `target_size` bytes when it is shorter. `name` is embedded so distinct
/// applications hash to distinct ids.
std::string prime_app_source(std::string_view name, std::size_t target_size = 4096);

}  // namespace vc::workloads
