#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"

namespace embedeval {

inline constexpr std::size_t kDefaultTopK = 10;

/// Dense row-major matrix of doubles.
struct SimilarityMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

/// Dot product of two float rows accumulated in double.
inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return s;
}

namespace detail {

inline void require_retrieval_inputs(const EmbeddingMatrix& questions, const EmbeddingMatrix& docs) {
  if (questions.dim() != docs.dim())
    throw ValidationError("dimension mismatch: questions " + std::to_string(questions.dim()) + ", documents " +
                          std::to_string(docs.dim()));
  if (!questions.normalized() || !docs.normalized())
    throw ValidationError("cosine retrieval requires unit-normalized embeddings");
}

}  // namespace detail

/// Similarity of one question row against every document.
inline void similarity_row(std::span<const float> question, const EmbeddingMatrix& docs, std::span<double> out) {
  for (std::size_t j = 0; j < docs.rows(); ++j) out[j] = dot(question, docs.row(j));
}

/// Entry (i, j) is the dot product of question i and document j.
inline SimilarityMatrix similarity_matrix(const EmbeddingMatrix& questions, const EmbeddingMatrix& docs,
                                          unsigned threads = 1) {
  detail::require_retrieval_inputs(questions, docs);
  SimilarityMatrix s{questions.rows(), docs.rows(), std::vector<double>(questions.rows() * docs.rows())};
  parallel_for(questions.rows(), threads, [&](std::size_t i) {
    similarity_row(questions.row(i), docs, std::span<double>(s.values.data() + i * s.cols, s.cols));
  });
  return s;
}

struct Hit {
  std::size_t doc_index = 0;
  double score = 0.0;

  friend bool operator==(const Hit&, const Hit&) = default;
};

struct TopKResult {
  std::vector<Hit> hits;               // descending by score, ties by ascending index
  std::optional<std::size_t> gold_rank; // 1-based, only when the gold doc is within K

  friend bool operator==(const TopKResult&, const TopKResult&) = default;
};

/// K largest scores of one similarity row; ties go to the lower document index.
inline TopKResult top_k(std::span<const double> sim_row, std::size_t k,
                        std::optional<std::size_t> gold_index = std::nullopt) {
  if (k == 0) throw UsageError("top-k requires K >= 1");
  if (k > sim_row.size())
    throw UsageError("top-k: K=" + std::to_string(k) + " exceeds document count " + std::to_string(sim_row.size()));
  std::vector<std::size_t> order(sim_row.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto better = [&](std::size_t a, std::size_t b) {
    return sim_row[a] > sim_row[b] || (sim_row[a] == sim_row[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  TopKResult r;
  r.hits.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    r.hits.push_back({order[i], sim_row[order[i]]});
    if (gold_index && order[i] == *gold_index) r.gold_rank = i + 1;
  }
  return r;
}

/// Single-relevant NDCG: 1/log2(1 + rank) when the gold doc is retrieved.
inline double ndcg_at_k(const TopKResult& result) {
  if (!result.gold_rank) return 0.0;
  return 1.0 / std::log2(1.0 + static_cast<double>(*result.gold_rank));
}

inline double ndcg_for_rank(std::optional<std::size_t> rank) {
  return rank ? 1.0 / std::log2(1.0 + static_cast<double>(*rank)) : 0.0;
}

/// Full-data retrieval outcome for every question: its top-K list plus the
/// cosine similarity to its gold document. Every bootstrap quantity is a
/// function of this table and the resampling plan.
struct RetrievalTable {
  std::size_t k = 0;
  std::size_t num_documents = 0;
  std::vector<TopKResult> results;
  std::vector<double> gold_similarity;

  std::size_t num_questions() const noexcept { return results.size(); }

  bool hit(std::size_t q) const { return results[q].gold_rank.has_value(); }
  double ndcg(std::size_t q) const { return ndcg_at_k(results[q]); }
  /// Smallest score in the question's top-K row.
  double min_topk(std::size_t q) const { return results[q].hits.back().score; }
};

/// Checks that embedding rows match corpus ids one-to-one and in order.
inline void require_aligned(const QACorpus& corpus, const EmbeddingMatrix& q_emb, const EmbeddingMatrix& d_emb) {
  if (q_emb.rows() != corpus.num_questions() || d_emb.rows() != corpus.num_documents())
    throw ValidationError("embeddings are not aligned to the corpus (row counts differ)");
  for (std::size_t i = 0; i < q_emb.rows(); ++i)
    if (q_emb.ids()[i] != corpus.questions()[i].id)
      throw ValidationError("question embeddings misaligned at row " + std::to_string(i) + " ('" + q_emb.ids()[i] +
                            "' vs '" + corpus.questions()[i].id + "')");
  for (std::size_t i = 0; i < d_emb.rows(); ++i)
    if (d_emb.ids()[i] != corpus.documents()[i].id)
      throw ValidationError("document embeddings misaligned at row " + std::to_string(i) + " ('" + d_emb.ids()[i] +
                            "' vs '" + corpus.documents()[i].id + "')");
}

inline RetrievalTable build_retrieval_table(const QACorpus& corpus, const EmbeddingMatrix& q_emb,
                                            const EmbeddingMatrix& d_emb, std::size_t k, unsigned threads = 1) {
  require_aligned(corpus, q_emb, d_emb);
  detail::require_retrieval_inputs(q_emb, d_emb);
  if (k == 0) throw UsageError("top-k requires K >= 1");
  if (k > d_emb.rows())
    throw UsageError("K=" + std::to_string(k) + " exceeds document count " + std::to_string(d_emb.rows()));
  RetrievalTable t;
  t.k = k;
  t.num_documents = d_emb.rows();
  t.results.resize(q_emb.rows());
  t.gold_similarity.resize(q_emb.rows());
  parallel_for(q_emb.rows(), threads, [&](std::size_t q) {
    std::vector<double> row(d_emb.rows());
    similarity_row(q_emb.row(q), d_emb, row);
    const std::size_t gold = corpus.gold_index(q);
    t.results[q] = top_k(row, k, gold);
    t.gold_similarity[q] = row[gold];
  });
  return t;
}

}  // namespace embedeval
