#include "vc/metrics.hpp"

#include <numeric>

namespace vc::metrics {

void ValidationPolicy::check() const {
  if (!valid()) {
    throw std::invalid_argument("validation policy requires 1 <= m_min <= m_max (got m_min=" +
                                std::to_string(m_min) + ", m_max=" + std::to_string(m_max) + ")");
  }
}

Bytes data_size(const SizeAccount& account) {
  Bytes total = std::accumulate(account.app_sizes.begin(), account.app_sizes.end(), Bytes{0});
  return std::accumulate(account.data_sizes.begin(), account.data_sizes.end(), total);
}

std::uint64_t popularity(const RunLog& log) { return log.entries.size(); }

double avg_working_time(const RunLog& log) {
  const auto p = popularity(log);
  if (p == 0) throw UndefinedMetric("average working time is undefined before the first run");
  double sum = 0.0;
  for (const auto& e : log.entries) sum += e.elapsed_seconds;
  return sum / static_cast<double>(p);
}

MetricTriple base_metrics(const SizeAccount& account, const RunLog& log) {
  MetricTriple m;
  m.d = data_size(account);
  m.p = popularity(log);
  if (m.p > 0) m.w = avg_working_time(log);
  return m;
}

MetricTriple from_totals(const RunTotals& totals) {
  MetricTriple m;
  m.d = totals.bytes;
  m.p = totals.runs;
  if (m.p > 0) m.w = totals.seconds / static_cast<double>(m.p);
  return m;
}

MetricTriple replicated_metrics(const MetricTriple& base, const ValidationPolicy& policy) {
  policy.check();
  MetricTriple out;
  out.d = base.d * policy.m_min;
  out.p = base.p * policy.m_min;
  if (base.w) out.w = *base.w * static_cast<double>(policy.m_min);
  return out;
}

std::string_view to_string(Complexity c) {
  switch (c) {
    case Complexity::Low: return "LOW";
    case Complexity::High: return "HIGH";
    case Complexity::Indeterminate: return "INDETERMINATE";
  }
  return "INDETERMINATE";
}

Complexity complexity_hint(const MetricTriple& m, const ComplexityThresholds& t) {
  if (!m.w) return Complexity::Indeterminate;
  const double w = *m.w;
  const bool low = m.d >= t.d_hi && w <= t.w_lo;
  const bool high = m.p >= t.p_hi && w >= t.w_hi && m.d <= t.d_lo;
  // Both can hold only under a degenerate configuration (w_hi <= w_lo and
  // d_hi <= d_lo); report it as undecided rather than pick one.
  if (low && high) return Complexity::Indeterminate;
  if (low) return Complexity::Low;
  if (high) return Complexity::High;
  return Complexity::Indeterminate;
}

}  // namespace vc::metrics
