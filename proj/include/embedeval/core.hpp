#pragma once

// Shared domain types, error taxonomy, deterministic randomness and the
// small statistical primitives every other module builds on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace embedeval {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorKind { usage, validation, remote };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Process exit code for this error class (usage 2, data 3, remote 4).
  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::usage: return 2;
      case ErrorKind::validation: return 3;
      case ErrorKind::remote: return 4;
    }
    return 1;
  }

private:
  ErrorKind kind_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::validation, what) {}
};

struct RemoteError : Error {
  explicit RemoteError(const std::string& what) : Error(ErrorKind::remote, what) {}
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

inline constexpr double kUnitNormTolerance = 1e-4;

/// Identifiers plus a row-major float matrix. Storage is 32-bit; every
/// computation over rows is carried out in double precision.
class EmbeddingMatrix {
public:
  EmbeddingMatrix() = default;

  /// Validates the invariants: unique ids, one row per id, dim >= 1,
  /// finite entries, and unit rows when `normalized` is set.
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                  std::vector<float> values, bool normalized)
      : ids_(std::move(ids)), dim_(dim), values_(std::move(values)),
        normalized_(normalized) {
    validate();
  }

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }
  bool empty() const noexcept { return ids_.empty(); }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<float>& values() const noexcept { return values_; }

  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }

  double row_norm(std::size_t i) const {
    double s = 0.0;
    for (float v : row(i)) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
  }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

private:
  void validate() const {
    if (dim_ == 0) throw ValidationError("embedding dimension must be >= 1");
    if (values_.size() != ids_.size() * dim_)
      throw ValidationError("embedding payload has " + std::to_string(values_.size()) +
                            " values, expected " + std::to_string(ids_.size() * dim_));
    std::unordered_set<std::string> seen;
    seen.reserve(ids_.size());
    for (const auto& id : ids_)
      if (!seen.insert(id).second) throw ValidationError("duplicate embedding id '" + id + "'");
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (!std::isfinite(values_[i]))
        throw ValidationError("non-finite embedding entry for id '" + ids_[i / dim_] + "'");
    if (normalized_) {
      for (std::size_t i = 0; i < rows(); ++i)
        if (std::abs(row_norm(i) - 1.0) > kUnitNormTolerance)
          throw ValidationError("row '" + ids_[i] + "' flagged normalized but has norm " +
                                std::to_string(row_norm(i)));
    }
  }

  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
  bool normalized_ = false;
};

struct Document {
  std::string id;
  std::string text;
};

struct Question {
  std::string id;
  std::string text;
  std::string gold_id;
};

/// Documents, questions, and the gold question -> document mapping.
class QACorpus {
public:
  QACorpus() = default;

  QACorpus(std::vector<Document> documents, std::vector<Question> questions)
      : documents_(std::move(documents)), questions_(std::move(questions)) {
    std::unordered_map<std::string, std::size_t> doc_index;
    doc_index.reserve(documents_.size());
    for (std::size_t i = 0; i < documents_.size(); ++i)
      if (!doc_index.emplace(documents_[i].id, i).second)
        throw ValidationError("duplicate document id '" + documents_[i].id + "'");
    std::unordered_set<std::string> q_ids;
    gold_index_.reserve(questions_.size());
    for (const auto& q : questions_) {
      if (!q_ids.insert(q.id).second) throw ValidationError("duplicate question id '" + q.id + "'");
      auto it = doc_index.find(q.gold_id);
      if (it == doc_index.end())
        throw ValidationError("question '" + q.id + "' has dangling gold_id '" + q.gold_id + "'");
      gold_index_.push_back(it->second);
    }
  }

  const std::vector<Document>& documents() const noexcept { return documents_; }
  const std::vector<Question>& questions() const noexcept { return questions_; }
  std::size_t num_documents() const noexcept { return documents_.size(); }
  std::size_t num_questions() const noexcept { return questions_.size(); }

  /// Index into documents() of the gold answer for question q.
  std::size_t gold_index(std::size_t q) const { return gold_index_.at(q); }

  std::vector<std::string> document_ids() const {
    std::vector<std::string> out;
    out.reserve(documents_.size());
    for (const auto& d : documents_) out.push_back(d.id);
    return out;
  }

  std::vector<std::string> question_ids() const {
    std::vector<std::string> out;
    out.reserve(questions_.size());
    for (const auto& q : questions_) out.push_back(q.id);
    return out;
  }

private:
  std::vector<Document> documents_;
  std::vector<Question> questions_;
  std::vector<std::size_t> gold_index_;
};

// ---------------------------------------------------------------------------
// Deterministic randomness
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based generator keyed by (seed, stream). Draw k of a stream is a
/// pure function of (seed, stream, k), so results do not depend on which
/// thread consumes which stream. Only integer arithmetic feeds the output
/// bits; the normal draw uses std::log/std::sqrt/std::cos on those bits.
class SeededRng {
public:
  using result_type = std::uint64_t;

  SeededRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(detail::mix64(detail::mix64(seed ^ 0xA0761D6478BD642FULL) +
                           detail::kGolden * (stream + 1))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return detail::mix64(key_ + detail::kGolden * counter_);
  }

  /// Unbiased integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    __extension__ using u128 = unsigned __int128;
    u128 product = static_cast<u128>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(product);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        product = static_cast<u128>((*this)()) * n;
        low = static_cast<std::uint64_t>(product);
      }
    }
    return static_cast<std::uint64_t>(product >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform01() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (one value per call).
  double normal() noexcept {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Bootstrap resampling plan: m samples of l question indices, drawn with
/// replacement from [0, Q). Sample j depends only on (seed, j).
struct BootstrapPlan {
  std::uint64_t seed = 0;
  std::size_t population = 0;  // Q
  std::size_t sample_size = 0; // l
  std::vector<std::vector<std::uint32_t>> samples;

  std::size_t num_samples() const noexcept { return samples.size(); }

  static std::vector<std::uint32_t> draw_sample(std::uint64_t seed, std::size_t j,
                                                std::size_t population,
                                                std::size_t sample_size) {
    SeededRng rng(seed, j);
    std::vector<std::uint32_t> out(sample_size);
    for (auto& v : out) v = static_cast<std::uint32_t>(rng.uniform_index(population));
    return out;
  }

  static BootstrapPlan generate(std::uint64_t seed, std::size_t m, std::size_t l,
                                std::size_t population) {
    if (m == 0) throw UsageError("bootstrap plan needs at least one sample");
    if (l == 0) throw UsageError("bootstrap sample size must be >= 1");
    if (population == 0) throw UsageError("cannot bootstrap an empty question set");
    if (population > std::numeric_limits<std::uint32_t>::max())
      throw UsageError("question set too large for 32-bit sample indices");
    BootstrapPlan plan{seed, population, l, {}};
    plan.samples.reserve(m);
    for (std::size_t j = 0; j < m; ++j) plan.samples.push_back(draw_sample(seed, j, population, l));
    return plan;
  }

  friend bool operator==(const BootstrapPlan&, const BootstrapPlan&) = default;
};

// ---------------------------------------------------------------------------
// Statistics primitives
// ---------------------------------------------------------------------------

namespace detail {

inline void require_no_nan(std::span<const double> values, const char* what) {
  for (double v : values)
    if (std::isnan(v)) throw UsageError(std::string(what) + ": NaN in input");
}

inline double check_percent(double p) {
  if (!(p >= 0.0 && p <= 100.0))
    throw UsageError("percentile must lie in [0, 100], got " + std::to_string(p));
  return p;
}

/// Linear-interpolation percentile over an already sorted range.
inline double percentile_sorted(std::span<const double> sorted, double p) {
  const double rank = p / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted[lo];
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Same result as percentile_sorted(sort(values)) but in linear time;
/// reorders `values`.
inline double percentile_inplace(std::vector<double>& values, double p) {
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double low = values[lo];
  if (lo + 1 >= values.size()) return low;
  const double high = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return low + frac * (high - low);
}

}  // namespace detail

/// Linear interpolation between closest ranks: rank r = p/100 * (n-1).
inline double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw UsageError("percentile of an empty sequence");
  detail::require_no_nan(values, "percentile");
  detail::check_percent(p);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return detail::percentile_sorted(sorted, p);
}

/// Fraction of values strictly greater than threshold.
inline double ecdf_above(std::span<const double> values, double threshold) {
  if (values.empty()) throw UsageError("ecdf_above of an empty sequence");
  std::size_t above = 0;
  for (double v : values) above += v > threshold ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(values.size());
}

/// Sample Pearson correlation.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UsageError("pearson: sequences differ in length");
  if (x.size() < 2) throw UsageError("pearson: need at least two observations");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ValidationError("pearson: correlation undefined for zero-variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Per-bootstrap values of one metric with mean and 95% percentile CI.
struct MetricSummary {
  std::vector<double> per_bootstrap;
  double mean = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double ci_width = 0.0;

  static MetricSummary from_samples(std::vector<double> values) {
    if (values.empty()) throw UsageError("metric summary needs at least one bootstrap value");
    MetricSummary s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    s.ci_lower = detail::percentile_sorted(sorted, 2.5);
    s.ci_upper = detail::percentile_sorted(sorted, 97.5);
    s.ci_width = s.ci_upper - s.ci_lower;
    s.per_bootstrap = std::move(values);
    return s;
  }

  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

// ---------------------------------------------------------------------------
// Parallel helper
// ---------------------------------------------------------------------------

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(i) for i in [0, n) across `threads` workers using static
/// contiguous chunks. Callers write results into slot i only, so output is
/// independent of the thread count.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          const std::size_t begin = w * chunk;
          const std::size_t end = std::min(n, begin + chunk);
          for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace embedeval
