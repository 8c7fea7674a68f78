#include "vc/workloads.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace vc::workloads {

std::vector<WorkUnit> partition_range(const RangeSpec& spec) {
  if (spec.lo < 2) throw InvalidSpec("range must start at 2 or above");
  if (spec.hi < spec.lo) throw InvalidSpec("range upper bound below lower bound");
  if (spec.parts == 0) throw InvalidSpec("part count must be positive");
  const std::uint64_t len = spec.hi - spec.lo + 1;
  if (spec.parts > len) throw InvalidSpec("more parts than numbers in range");

  const std::uint64_t base = len / spec.parts;
  const std::uint64_t extra = len % spec.parts;
  std::vector<WorkUnit> units;
  units.reserve(spec.parts);
  std::uint64_t next = spec.lo;
  for (std::uint64_t i = 0; i < spec.parts; ++i) {
    const std::uint64_t size = base + (i < extra ? 1 : 0);
    units.push_back({i, next, next + size - 1});
    next += size;
  }
  return units;
}

bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  if (n % 2 == 0) return n == 2;
  for (std::uint64_t d = 3; d * d <= n; d += 2) {
    if (n % d == 0) return false;
  }
  return true;
}

std::vector<std::uint64_t> find_primes(std::uint64_t lo, std::uint64_t hi) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t n = lo; n <= hi; ++n) {
    if (is_prime(n)) out.push_back(n);
    if (n == std::numeric_limits<std::uint64_t>::max()) break;
  }
  return out;
}

std::string canonical_payload(std::span<const std::uint64_t> values) {
  std::string out;
  out.reserve(values.size() * 8);
  char buf[24];
  for (auto v : values) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, end);
    out.push_back('\n');
  }
  return out;
}

std::vector<std::uint64_t> parse_payload(std::string_view payload) {
  std::vector<std::uint64_t> values;
  std::size_t pos = 0;
  while (pos < payload.size()) {
    const auto nl = payload.find('\n', pos);
    if (nl == std::string_view::npos) throw std::invalid_argument("payload line without terminator");
    const auto line = payload.substr(pos, nl - pos);
    if (line.empty() || (line.size() > 1 && line[0] == '0')) {
      throw std::invalid_argument("payload line is not a canonical decimal");
    }
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc{} || end != line.data() + line.size()) {
      throw std::invalid_argument("payload line is not a decimal integer");
    }
    if (!values.empty() && v <= values.back()) throw std::invalid_argument("payload not strictly ascending");
    values.push_back(v);
    pos = nl + 1;
  }
  return values;
}

bool payload_fits_unit(const WorkUnit& unit, std::string_view payload) {
  try {
    const auto values = parse_payload(payload);
    return values.empty() || (values.front() >= unit.lo && values.back() <= unit.hi);
  } catch (const std::invalid_argument&) {
    return false;
  }
}

std::string prime_app_runner(const WorkUnit& unit) {
  return canonical_payload(find_primes(unit.lo, unit.hi));
}

std::string encode_data_part(const WorkUnit& unit) {
  if (unit.hi > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("data part values must fit in 32 bits");
  }
  std::string out;
  out.reserve(unit.size() * 4);
  for (std::uint64_t n = unit.lo; n <= unit.hi; ++n) {
    const auto v = static_cast<std::uint32_t>(n);
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
  }
  return out;
}

namespace {
std::uint32_t read_le32(std::string_view bytes, std::size_t offset) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}
}  // namespace

WorkUnit decode_data_part(std::string_view bytes, std::uint64_t index) {
  if (bytes.empty() || bytes.size() % 4 != 0) throw std::invalid_argument("data part length is not a positive multiple of 4");
  const std::size_t count = bytes.size() / 4;
  const std::uint64_t lo = read_le32(bytes, 0);
  for (std::size_t i = 1; i < count; ++i) {
    if (read_le32(bytes, i * 4) != lo + i) throw std::invalid_argument("data part is not a contiguous range");
  }
  return {index, lo, lo + count - 1};
}

std::string format_manifest(std::span<const WorkUnit> units) {
  std::ostringstream out;
  for (const auto& u : units) out << u.index << ' ' << u.lo << ' ' << u.hi << '\n';
  return out.str();
}

std::vector<WorkUnit> parse_manifest(std::string_view text) {
  std::vector<WorkUnit> units;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    WorkUnit u;
    std::string trailing;
    if (!(fields >> u.index >> u.lo >> u.hi) || (fields >> trailing) || u.hi < u.lo) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + " is not 'index lo hi'");
    }
    if (u.index != units.size()) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + " is out of order");
    }
    units.push_back(u);
  }
  return units;
}

std::vector<WorkUnit> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

std::string prime_app_source(std::string_view name, std::size_t target_size) {
  std::string src;
  src += "#!/usr/bin/env python3\n";
  src += kBuiltinPrimesMarker;
  src += "\n# vc-app-name: ";
  src += name;
  src += R"(
"""Prime search by exhaustion over one data part.

The data part holds every candidate integer as a little-endian uint32.
Primes are written to stdout as ascending decimals, one per line.
"""
import array
import sys


def is_prime(n):
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    d = 3
    while d * d <= n:
        if n % d == 0:
            return False
        d += 2
    return True


def main(path):
    numbers = array.array("I")
    with open(path, "rb") as fh:
        numbers.frombytes(fh.read())
    if sys.byteorder != "little":
        numbers.byteswap()
    out = sys.stdout
    for n in numbers:
        if is_prime(n):
            out.write("%d\n" % n)


if __name__ == "__main__":
    main(sys.argv[-1])
)";
  while (src.size() < target_size) {
    const std::size_t remaining = target_size - src.size();
    if (remaining == 1) {
      src.push_back('\n');
      break;
    }
    const std::size_t len = std::min<std::size_t>(remaining, 72);
    src.push_back('#');
    src.append(len - 2, '-');
    src.push_back('\n');
  }
  return src;
}

}  // namespace vc::workloads
