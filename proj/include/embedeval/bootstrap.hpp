#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "retrieval.hpp"

namespace embedeval {

enum class Metric { accuracy, ndcg };

inline const char* to_string(Metric m) { return m == Metric::accuracy ? "accuracy" : "ndcg"; }

inline constexpr std::size_t kDefaultBootstraps = 1000;

inline std::vector<double> default_psi_grid() {
  std::vector<double> grid;
  for (int p = 5; p <= 95; p += 5) grid.push_back(p);
  return grid;
}

namespace detail {

inline void require_plan_matches(const RetrievalTable& table, const BootstrapPlan& plan) {
  if (plan.samples.empty()) throw UsageError("bootstrap plan is empty");
  if (plan.population != table.num_questions())
    throw ValidationError("bootstrap plan drawn over " + std::to_string(plan.population) +
                          " questions but the corpus has " + std::to_string(table.num_questions()));
}

inline double per_question(const RetrievalTable& table, std::size_t q, Metric metric) {
  return metric == Metric::accuracy ? (table.hit(q) ? 1.0 : 0.0) : table.ndcg(q);
}

/// Mean of `value(q)` over sample j, for every j.
template <class Fn>
std::vector<double> per_bootstrap_mean(const BootstrapPlan& plan, unsigned threads, Fn&& value) {
  std::vector<double> out(plan.num_samples());
  parallel_for(plan.num_samples(), threads, [&](std::size_t j) {
    const auto& sample = plan.samples[j];
    double sum = 0.0;
    for (std::uint32_t q : sample) sum += value(q);
    out[j] = sum / static_cast<double>(sample.size());
  });
  return out;
}

}  // namespace detail

/// a_j = mean per-question metric over sample j; summary carries the mean of
/// the a_j and their 2.5/97.5 percentiles.
inline MetricSummary bootstrap_metric(const RetrievalTable& table, const BootstrapPlan& plan, Metric metric,
                                      unsigned threads = 1) {
  detail::require_plan_matches(table, plan);
  return MetricSummary::from_samples(detail::per_bootstrap_mean(
      plan, threads, [&](std::size_t q) { return detail::per_question(table, q, metric); }));
}

inline MetricSummary bootstrap_metric(const QACorpus& corpus, const EmbeddingMatrix& q_emb,
                                      const EmbeddingMatrix& d_emb, const BootstrapPlan& plan, std::size_t k,
                                      Metric metric, unsigned threads = 1) {
  return bootstrap_metric(build_retrieval_table(corpus, q_emb, d_emb, k, threads), plan, metric, threads);
}

/// Metric over every question without resampling, as a fraction in [0, 1].
inline double full_data_metric(const RetrievalTable& table, Metric metric) {
  if (table.num_questions() == 0) throw UsageError("no questions to evaluate");
  double sum = 0.0;
  for (std::size_t q = 0; q < table.num_questions(); ++q) sum += detail::per_question(table, q, metric);
  return sum / static_cast<double>(table.num_questions());
}

inline double full_data_metric(const QACorpus& corpus, const EmbeddingMatrix& q_emb, const EmbeddingMatrix& d_emb,
                               std::size_t k, Metric metric) {
  return full_data_metric(build_retrieval_table(corpus, q_emb, d_emb, k), metric);
}

/// gamma_j = minimum entry of the l x K top-K score matrix of sample j.
inline std::vector<double> gamma_set(const RetrievalTable& table, const BootstrapPlan& plan, unsigned threads = 1) {
  detail::require_plan_matches(table, plan);
  std::vector<double> gamma(plan.num_samples());
  parallel_for(plan.num_samples(), threads, [&](std::size_t j) {
    double lowest = std::numeric_limits<double>::infinity();
    for (std::uint32_t q : plan.samples[j]) lowest = std::min(lowest, table.min_topk(q));
    gamma[j] = lowest;
  });
  return gamma;
}

inline std::vector<double> gamma_set(const QACorpus& corpus, const EmbeddingMatrix& q_emb,
                                     const EmbeddingMatrix& d_emb, const BootstrapPlan& plan, std::size_t k) {
  return gamma_set(build_retrieval_table(corpus, q_emb, d_emb, k), plan);
}

/// Per-bootstrap metric after dropping retrieved documents scoring below tau.
/// Removing lower-scored hits never changes the gold document's rank, so a
/// question keeps its unthresholded value iff its gold score is >= tau.
inline std::vector<double> thresholded_per_bootstrap(const RetrievalTable& table, const BootstrapPlan& plan,
                                                     double tau, Metric metric = Metric::accuracy,
                                                     unsigned threads = 1) {
  detail::require_plan_matches(table, plan);
  return detail::per_bootstrap_mean(plan, threads, [&](std::size_t q) {
    if (!table.hit(q)) return 0.0;
    const auto& r = table.results[q];
    if (r.hits[*r.gold_rank - 1].score < tau) return 0.0;
    return detail::per_question(table, q, metric);
  });
}

inline constexpr const char* kAcceptanceRule = "thresholded bootstrap mean within unthresholded 95% percentile CI";

struct ThresholdLevel {
  double psi = 0.0;
  double tau = 0.0;
  MetricSummary accuracy;
  bool accepted = false;

  friend bool operator==(const ThresholdLevel&, const ThresholdLevel&) = default;
};

struct ThresholdReport {
  std::vector<double> gamma;
  std::vector<ThresholdLevel> levels;  // ascending psi
  std::optional<std::size_t> chosen;   // index into levels
  std::string acceptance_rule = kAcceptanceRule;

  std::optional<double> chosen_psi() const {
    return chosen ? std::optional<double>(levels[*chosen].psi) : std::nullopt;
  }
  std::optional<double> chosen_tau() const {
    return chosen ? std::optional<double>(levels[*chosen].tau) : std::nullopt;
  }
  const ThresholdLevel* chosen_level() const { return chosen ? &levels[*chosen] : nullptr; }

  friend bool operator==(const ThresholdReport&, const ThresholdReport&) = default;
};

inline std::vector<double> checked_psi_grid(std::vector<double> grid) {
  if (grid.empty()) throw UsageError("psi grid is empty");
  for (double p : grid)
    if (!(p >= 0.0 && p <= 100.0)) throw UsageError("psi grid value " + std::to_string(p) + " outside [0, 100]");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

/// For each psi: tau = percentile(Gamma, psi), accuracy recomputed on every
/// bootstrap with hits below tau removed, accepted when the thresholded mean
/// lies inside [baseline.ci_lower, baseline.ci_upper]. The chosen level has
/// the largest accepted tau (ties resolved toward the larger psi).
inline ThresholdReport threshold_search(const RetrievalTable& table, const BootstrapPlan& plan,
                                        const MetricSummary& baseline, const std::vector<double>& psi_grid,
                                        unsigned threads = 1) {
  const auto grid = checked_psi_grid(psi_grid);
  ThresholdReport report;
  report.gamma = gamma_set(table, plan, threads);
  std::vector<double> sorted_gamma = report.gamma;
  std::sort(sorted_gamma.begin(), sorted_gamma.end());
  for (double psi : grid) {
    ThresholdLevel level;
    level.psi = psi;
    level.tau = detail::percentile_sorted(sorted_gamma, psi);
    level.accuracy =
        MetricSummary::from_samples(thresholded_per_bootstrap(table, plan, level.tau, Metric::accuracy, threads));
    level.accepted = level.accuracy.mean >= baseline.ci_lower && level.accuracy.mean <= baseline.ci_upper;
    report.levels.push_back(std::move(level));
  }
  for (std::size_t i = 0; i < report.levels.size(); ++i) {
    if (!report.levels[i].accepted) continue;
    if (!report.chosen || report.levels[i].tau >= report.levels[*report.chosen].tau) report.chosen = i;
  }
  return report;
}

inline ThresholdReport threshold_search(const QACorpus& corpus, const EmbeddingMatrix& q_emb,
                                        const EmbeddingMatrix& d_emb, const BootstrapPlan& plan, std::size_t k,
                                        const std::vector<double>& psi_grid, unsigned threads = 1) {
  const auto table = build_retrieval_table(corpus, q_emb, d_emb, k, threads);
  const auto baseline = bootstrap_metric(table, plan, Metric::accuracy, threads);
  return threshold_search(table, plan, baseline, psi_grid, threads);
}

}  // namespace embedeval
