#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "core.hpp"
#include "retrieval.hpp"

namespace embedeval {

/// Stream ids for random-document draws live above the range used by
/// bootstrap samples so a shared seed never replays plan draws.
inline constexpr std::uint64_t kRandomDocStreamBase = 0x8000'0000'0000'0000ULL;

struct SimilaritySets {
  std::size_t k = 0;
  std::vector<double> s_corr;  // Q: similarity to the gold document
  std::vector<double> s_topk;  // K*Q, question-major: entry q*K + r is rank r+1
  std::vector<double> s_rand;  // Q: similarity to one uniformly drawn document
  std::uint64_t rand_seed = 0;

  std::size_t num_questions() const noexcept { return s_corr.size(); }

  friend bool operator==(const SimilaritySets&, const SimilaritySets&) = default;
};

inline std::size_t random_document_for(std::uint64_t rand_seed, std::size_t question, std::size_t num_docs) {
  SeededRng rng(rand_seed, kRandomDocStreamBase + question);
  return static_cast<std::size_t>(rng.uniform_index(num_docs));
}

inline SimilaritySets build_similarity_sets(const RetrievalTable& table, const EmbeddingMatrix& q_emb,
                                            const EmbeddingMatrix& d_emb, std::uint64_t rand_seed) {
  if (q_emb.rows() != table.num_questions() || d_emb.rows() != table.num_documents)
    throw ValidationError("similarity sets: embeddings do not match the retrieval table");
  SimilaritySets sets;
  sets.k = table.k;
  sets.rand_seed = rand_seed;
  sets.s_corr = table.gold_similarity;
  sets.s_topk.reserve(table.k * table.num_questions());
  sets.s_rand.reserve(table.num_questions());
  for (std::size_t q = 0; q < table.num_questions(); ++q) {
    for (const auto& h : table.results[q].hits) sets.s_topk.push_back(h.score);
    const std::size_t r = random_document_for(rand_seed, q, d_emb.rows());
    sets.s_rand.push_back(dot(q_emb.row(q), d_emb.row(r)));
  }
  return sets;
}

inline SimilaritySets build_similarity_sets(const QACorpus& corpus, const EmbeddingMatrix& q_emb,
                                            const EmbeddingMatrix& d_emb, std::size_t k, std::uint64_t rand_seed) {
  return build_similarity_sets(build_retrieval_table(corpus, q_emb, d_emb, k), q_emb, d_emb, rand_seed);
}

struct OverlapReport {
  double psi = 0.0;
  std::vector<double> theta;  // theta_j per bootstrap
  MetricSummary coe;
  MetricSummary roe;

  friend bool operator==(const OverlapReport&, const OverlapReport&) = default;
};

/// Per bootstrap j: theta_j is the psi-th percentile of the top-K scores of
/// the questions in sample j; C_corr / C_rand are the fractions of the
/// sample's correct / random similarities strictly above theta_j.
inline OverlapReport overlap_metrics(const SimilaritySets& sets, const BootstrapPlan& plan, double psi,
                                     unsigned threads = 1) {
  detail::check_percent(psi);
  if (plan.samples.empty()) throw UsageError("bootstrap plan is empty");
  if (plan.population != sets.num_questions())
    throw ValidationError("bootstrap plan does not match the similarity sets");
  if (sets.k == 0 || sets.s_topk.size() != sets.k * sets.num_questions() ||
      sets.s_rand.size() != sets.num_questions())
    throw ValidationError("similarity sets have inconsistent sizes");

  const std::size_t m = plan.num_samples();
  OverlapReport report;
  report.psi = psi;
  report.theta.resize(m);
  std::vector<double> corr(m), rand(m);
  parallel_for(m, threads, [&](std::size_t j) {
    const auto& sample = plan.samples[j];
    std::vector<double> topk;
    topk.reserve(sample.size() * sets.k);
    for (std::uint32_t q : sample)
      topk.insert(topk.end(), sets.s_topk.begin() + static_cast<std::ptrdiff_t>(q * sets.k),
                  sets.s_topk.begin() + static_cast<std::ptrdiff_t>((q + 1) * sets.k));
    const double theta = detail::percentile_inplace(topk, psi);
    std::size_t corr_above = 0, rand_above = 0;
    for (std::uint32_t q : sample) {
      corr_above += sets.s_corr[q] > theta ? 1 : 0;
      rand_above += sets.s_rand[q] > theta ? 1 : 0;
    }
    report.theta[j] = theta;
    corr[j] = static_cast<double>(corr_above) / static_cast<double>(sample.size());
    rand[j] = static_cast<double>(rand_above) / static_cast<double>(sample.size());
  });
  report.coe = MetricSummary::from_samples(std::move(corr));
  report.roe = MetricSummary::from_samples(std::move(rand));
  return report;
}

// ---------------------------------------------------------------------------
// Density plot data
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultDensityBins = 100;

struct DensitySeries {
  std::string name;
  std::vector<double> histogram;  // density: integrates to 1 over [-1, 1]
  std::vector<double> kde;        // Gaussian kernel estimate at bin centres
  double bandwidth = 0.0;
};

struct DensityPlot {
  std::vector<double> bin_centers;
  double bin_width = 0.0;
  std::vector<DensitySeries> series;
};

/// Silverman's rule of thumb; falls back to the standard deviation term when
/// the IQR vanishes.
inline double silverman_bandwidth(std::span<const double> values) {
  const auto n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
  const double iqr = percentile(values, 75) - percentile(values, 25);
  double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(n, -0.2);
}

inline DensitySeries density_series(const std::string& name, std::span<const double> values, std::size_t bins) {
  if (values.empty()) throw UsageError("density of empty similarity set '" + name + "'");
  if (bins == 0) throw UsageError("density needs at least one bin");
  const double width = 2.0 / static_cast<double>(bins);
  DensitySeries s{name, std::vector<double>(bins, 0.0), std::vector<double>(bins, 0.0), 0.0};
  for (double v : values) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((v + 1.0) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    s.histogram[static_cast<std::size_t>(b)] += 1.0;
  }
  const auto n = static_cast<double>(values.size());
  for (auto& h : s.histogram) h /= n * width;

  double h = silverman_bandwidth(values);
  if (!(h > 0)) h = width;
  s.bandwidth = h;
  const double norm = 1.0 / (n * h * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t b = 0; b < bins; ++b) {
    const double x = -1.0 + (static_cast<double>(b) + 0.5) * width;
    double acc = 0.0;
    for (double v : values) {
      const double z = (x - v) / h;
      acc += std::exp(-0.5 * z * z);
    }
    s.kde[b] = acc * norm;
  }
  return s;
}

/// Histogram + KDE per set over [-1, 1] (series order: random, correct, top-K).
inline DensityPlot density_export(const SimilaritySets& sets, std::size_t bins = kDefaultDensityBins) {
  if (bins == 0) throw UsageError("density needs at least one bin");
  DensityPlot plot;
  plot.bin_width = 2.0 / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) plot.bin_centers.push_back(-1.0 + (static_cast<double>(b) + 0.5) * plot.bin_width);
  plot.series.push_back(density_series("random", sets.s_rand, bins));
  plot.series.push_back(density_series("correct", sets.s_corr, bins));
  plot.series.push_back(density_series("topk", sets.s_topk, bins));
  return plot;
}

}  // namespace embedeval
