#pragma once

// Application measurement units: data size (d), popularity (p) and average
// working time (w), their replication-adjusted form, and a coarse complexity
// hint derived from them.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vc::metrics {

using Bytes = std::uint64_t;

/// Byte counts of every application-file transfer and every data-part
/// transfer attributed to one application.
struct SizeAccount {
  std::vector<Bytes> app_sizes;
  std::vector<Bytes> data_sizes;
};

struct RunEntry {
  std::string node;
  double elapsed_seconds = 0.0;
};

/// Completed executions of one application, in completion order.
struct RunLog {
  std::vector<RunEntry> entries;
};

/// Published (d, p, w). w is absent until the first completion.
struct MetricTriple {
  Bytes d = 0;
  std::uint64_t p = 0;
  std::optional<double> w;

  bool operator==(const MetricTriple&) const = default;
};

/// Cumulative raw counters a seeder reports for one application. They are
/// sufficient to recompute the unreplicated MetricTriple.
struct RunTotals {
  std::uint64_t runs = 0;
  Bytes bytes = 0;
  double seconds = 0.0;

  bool operator==(const RunTotals&) const = default;
};

struct ValidationPolicy {
  std::uint32_t m_min = 1;
  std::uint32_t m_max = 1;

  bool valid() const { return m_min >= 1 && m_min <= m_max; }
  /// Throws std::invalid_argument when the bounds are inconsistent.
  void check() const;

  bool operator==(const ValidationPolicy&) const = default;
};

class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

Bytes data_size(const SizeAccount& account);

std::uint64_t popularity(const RunLog& log);

/// Mean elapsed seconds over the log. Throws UndefinedMetric on an empty log.
double avg_working_time(const RunLog& log);

MetricTriple base_metrics(const SizeAccount& account, const RunLog& log);

/// Same triple computed from cumulative counters instead of full logs.
MetricTriple from_totals(const RunTotals& totals);

/// Scales d, p and the mean w by m_min, exactly as the replicated formulas
/// are written. An absent w stays absent.
MetricTriple replicated_metrics(const MetricTriple& base,
                                const ValidationPolicy& policy);

enum class Complexity { Low, High, Indeterminate };

std::string_view to_string(Complexity c);

struct ComplexityThresholds {
  Bytes d_hi = 5'000'000;
  Bytes d_lo = 64'000;
  double w_lo = 5.0;
  double w_hi = 60.0;
  std::uint64_t p_hi = 100;
};

/// High d with low w reads as low complexity; high p and w with low d reads
/// as high complexity. An absent w never satisfies either rule.
Complexity complexity_hint(const MetricTriple& m,
                           const ComplexityThresholds& thresholds = {});

}  // namespace vc::metrics
