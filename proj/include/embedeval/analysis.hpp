#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "run_report.hpp"

namespace embedeval {

// ---------------------------------------------------------------------------
// Domain separation
// ---------------------------------------------------------------------------

inline double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return std::sqrt(s);
}

/// For each domain row, the minimum Euclidean distance to any agnostic row.
inline std::vector<double> separation(const EmbeddingMatrix& domain, const EmbeddingMatrix& agnostic,
                                      unsigned threads = 1) {
  if (agnostic.empty()) throw UsageError("separation: agnostic set is empty");
  if (domain.dim() != agnostic.dim())
    throw ValidationError("separation: dimension mismatch (" + std::to_string(domain.dim()) + " vs " +
                          std::to_string(agnostic.dim()) + ")");
  if (!domain.normalized() || !agnostic.normalized())
    throw ValidationError("separation requires unit-normalized embeddings");
  std::vector<double> minima(domain.rows());
  parallel_for(domain.rows(), threads, [&](std::size_t i) {
    double best = std::numeric_limits<double>::infinity();
    const auto row = domain.row(i);
    for (std::size_t j = 0; j < agnostic.rows(); ++j) best = std::min(best, euclidean_distance(row, agnostic.row(j)));
    minima[i] = best;
  });
  return minima;
}

struct DistributionSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double p5 = 0.0;
  double p25 = 0.0;
  double median = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};

inline DistributionSummary summarize(std::span<const double> values) {
  if (values.empty()) throw UsageError("cannot summarize an empty distribution");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  DistributionSummary s;
  s.count = sorted.size();
  s.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  s.min = sorted.front();
  s.max = sorted.back();
  s.p5 = detail::percentile_sorted(sorted, 5);
  s.p25 = detail::percentile_sorted(sorted, 25);
  s.median = detail::percentile_sorted(sorted, 50);
  s.p75 = detail::percentile_sorted(sorted, 75);
  s.p95 = detail::percentile_sorted(sorted, 95);
  return s;
}

/// Right-continuous ECDF: fraction of sorted values <= x.
inline double ecdf_at(std::span<const double> sorted, double x) {
  const auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

/// Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw UsageError("ks_statistic needs two non-empty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double d = 0.0;
  for (const auto* s : {&sa, &sb})
    for (double x : *s) d = std::max(d, std::abs(ecdf_at(sa, x) - ecdf_at(sb, x)));
  return d;
}

inline constexpr double kDominanceFraction = 0.95;

struct SeparationReport {
  std::vector<double> base_minima;
  std::vector<double> adapted_minima;
  DistributionSummary base;
  DistributionSummary adapted;
  double ks = 0.0;
  double dominated_fraction = 0.0;  // share of pooled grid with F_adapted <= F_base
  bool moved_further_apart = false;
};

/// KS distance plus a stochastic-dominance flag: the adapted ECDF lies at or
/// below the base ECDF on at least 95% of the pooled sample points, and
/// strictly below somewhere.
inline SeparationReport compare_separation(std::vector<double> base_minima, std::vector<double> adapted_minima) {
  SeparationReport r;
  r.base = summarize(base_minima);
  r.adapted = summarize(adapted_minima);
  r.ks = ks_statistic(base_minima, adapted_minima);

  std::vector<double> sb = base_minima, sa = adapted_minima;
  std::sort(sb.begin(), sb.end());
  std::sort(sa.begin(), sa.end());
  std::vector<double> grid = sb;
  grid.insert(grid.end(), sa.begin(), sa.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::size_t dominated = 0;
  bool strict = false;
  for (double x : grid) {
    const double fa = ecdf_at(sa, x), fb = ecdf_at(sb, x);
    if (fa <= fb) ++dominated;
    if (fa < fb) strict = true;
  }
  r.dominated_fraction = static_cast<double>(dominated) / static_cast<double>(grid.size());
  r.moved_further_apart = strict && r.dominated_fraction >= kDominanceFraction;
  r.base_minima = std::move(base_minima);
  r.adapted_minima = std::move(adapted_minima);
  return r;
}

inline ojson to_json(const DistributionSummary& s) {
  return ojson{{"count", s.count}, {"mean", s.mean}, {"min", s.min},       {"p5", s.p5},  {"p25", s.p25},
               {"median", s.median}, {"p75", s.p75}, {"p95", s.p95}, {"max", s.max}};
}

inline ojson to_json(const SeparationReport& r) {
  return ojson{{"base", to_json(r.base)},
               {"adapted", to_json(r.adapted)},
               {"ks_statistic", r.ks},
               {"dominated_fraction", r.dominated_fraction},
               {"moved_further_apart", r.moved_further_apart},
               {"base_minima", r.base_minima},
               {"adapted_minima", r.adapted_minima}};
}

// ---------------------------------------------------------------------------
// Cross-model correlation
// ---------------------------------------------------------------------------

struct CorrelationRow {
  std::string metric_x;
  std::string metric_y;
  double r = 0.0;
  std::size_t count = 0;
};

struct CorrelationTable {
  std::string dataset_label;
  std::vector<CorrelationRow> rows;
};

/// Acc v. COE, Acc v. ROE, Thresh v. ROE, Acc v. I_A, Acc v. I_B.
inline std::vector<std::pair<std::string, std::string>> default_correlation_pairs() {
  return {{"accuracy", "coe"}, {"accuracy", "roe"}, {"tau", "roe"}, {"accuracy", "i_a"}, {"accuracy", "i_b"}};
}

/// Pearson r across model variants. Reports must share a dataset label and
/// the corpus digests; they are ordered by model label before summation so
/// the result does not depend on input order.
inline CorrelationTable correlate(std::vector<RunReport> reports,
                                  const std::vector<std::pair<std::string, std::string>>& pairs =
                                      default_correlation_pairs()) {
  if (reports.size() < 2) throw UsageError("correlate needs at least two run reports");
  const RunReport first = reports.front();
  for (const auto& r : reports) {
    if (r.dataset_label != first.dataset_label)
      throw ValidationError("correlate: reports mix datasets '" + first.dataset_label + "' and '" + r.dataset_label +
                            "'");
    for (const char* role : {"documents", "questions"}) {
      const auto* a = first.input(role);
      const auto* b = r.input(role);
      if (a && b && a->sha256 != b->sha256)
        throw ValidationError(std::string("correlate: ") + role + " digest differs between '" + first.model_label +
                              "' and '" + r.model_label + "'");
    }
  }
  std::sort(reports.begin(), reports.end(), [](const RunReport& a, const RunReport& b) {
    if (a.model_label != b.model_label) return a.model_label < b.model_label;
    return serialize_report(a, false) < serialize_report(b, false);
  });
  CorrelationTable table{first.dataset_label, {}};
  for (const auto& [mx, my] : pairs) {
    std::vector<double> xs, ys;
    for (const auto& r : reports) {
      xs.push_back(metric_value(r, mx));
      ys.push_back(metric_value(r, my));
    }
    table.rows.push_back({mx, my, pearson(xs, ys), reports.size()});
  }
  return table;
}

}  // namespace embedeval
