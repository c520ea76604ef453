#include <gtest/gtest.h>

#include <random>

#include "embedeval/retrieval.hpp"
#include "fixtures.hpp"
#include "oracle.hpp"

using namespace embedeval;

TEST(Similarity, Examples) {
  const EmbeddingMatrix q({"q"}, 2, {0.6f, 0.8f}, true);
  const EmbeddingMatrix d({"a", "b", "c"}, 2, {0.6f, 0.8f, 1.0f, 0.0f, 0.70711f, 0.70711f}, true);
  const auto s = similarity_matrix(q, d);
  EXPECT_NEAR(s(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(s(0, 1), 0.6, 1e-6);
  EXPECT_NEAR(s(0, 2), 0.98995, 1e-5);
  const EmbeddingMatrix e1({"x"}, 2, {1.0f, 0.0f}, true), e2({"y"}, 2, {0.0f, 1.0f}, true);
  EXPECT_DOUBLE_EQ(similarity_matrix(e1, e2)(0, 0), 0.0);
}

TEST(Similarity, Errors) {
  const EmbeddingMatrix a({"a"}, 2, {1.0f, 0.0f}, true);
  const EmbeddingMatrix b({"b"}, 3, {1.0f, 0.0f, 0.0f}, true);
  const EmbeddingMatrix raw({"c"}, 2, {3.0f, 4.0f}, false);
  EXPECT_THROW(similarity_matrix(a, b), ValidationError);
  EXPECT_THROW(similarity_matrix(a, raw), ValidationError);
}

TEST(Similarity, BoundedForUnitRowsAndThreadInvariant) {
  std::mt19937_64 gen(8);
  oracle::Mat qs, ds;
  for (int i = 0; i < 20; ++i) qs.push_back(oracle::random_unit(gen, 16));
  for (int i = 0; i < 50; ++i) ds.push_back(oracle::random_unit(gen, 16));
  const auto q = oracle::to_matrix(qs, "q", true), d = oracle::to_matrix(ds, "d", true);
  const auto s1 = similarity_matrix(q, d, 1), s4 = similarity_matrix(q, d, 4);
  EXPECT_EQ(s1.values, s4.values);
  for (double v : s1.values) EXPECT_LE(std::abs(v), 1.0 + 1e-6);
}

TEST(TopK, ToyExamples) {
  const auto toy = fixtures::toy();
  const auto s = similarity_matrix(toy.questions, toy.documents);
  const auto r = top_k(s.row(0), 2);
  ASSERT_EQ(r.hits.size(), 2u);
  EXPECT_EQ(r.hits[0].doc_index, 2u);
  EXPECT_NEAR(r.hits[0].score, 0.98995, 1e-5);
  EXPECT_EQ(r.hits[1].doc_index, 1u);
  EXPECT_NEAR(r.hits[1].score, 0.8, 1e-6);

  const auto all = top_k(s.row(0), 3);
  EXPECT_EQ(all.hits.size(), 3u);
  EXPECT_EQ(all.hits[2].doc_index, 0u);
}

TEST(TopK, TieGoesToLowerIndex) {
  // d1 and d2 both score 0.70711 against q3.
  const std::vector<double> row{0.70711, 0.70711, 1.0};
  const auto r = top_k(row, 2);
  EXPECT_EQ(r.hits[0].doc_index, 2u);
  EXPECT_EQ(r.hits[1].doc_index, 0u);

  const auto toy = fixtures::toy();
  const auto s = similarity_matrix(toy.questions, toy.documents);
  const auto t = top_k(s.row(2), 2);
  EXPECT_EQ(t.hits[0].doc_index, 2u);
  EXPECT_EQ(t.hits[1].doc_index, 0u);
}

TEST(TopK, Errors) {
  const std::vector<double> row{0.1, 0.2};
  EXPECT_THROW(top_k(row, 0), UsageError);
  EXPECT_THROW(top_k(row, 3), UsageError);
}

TEST(TopK, MatchesFullSortOracle) {
  std::mt19937_64 gen(99);
  for (int t = 0; t < 300; ++t) {
    const auto inst = oracle::random_instance(gen, 12, 4, 5, t % 2 == 0);
    const auto lib = oracle::to_library(inst);
    const std::size_t k = 1 + static_cast<std::size_t>(t) % inst.docs.size();
    const auto table = build_retrieval_table(lib.corpus, lib.questions, lib.documents, k);
    for (std::size_t q = 0; q < inst.questions.size(); ++q) {
      const auto expect = oracle::rank(inst.questions[q], inst.docs, inst.gold[q], k);
      const auto& got = table.results[q];
      ASSERT_EQ(got.hits.size(), k);
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_EQ(got.hits[i].doc_index, expect.docs[i]);
        EXPECT_EQ(got.hits[i].score, expect.scores[i]);
      }
      EXPECT_EQ(got.gold_rank, expect.gold_rank);
      EXPECT_EQ(table.gold_similarity[q], expect.gold_score);
    }
  }
}

TEST(Ndcg, Examples) {
  TopKResult r;
  r.gold_rank = 1;
  EXPECT_DOUBLE_EQ(ndcg_at_k(r), 1.0);
  r.gold_rank = 2;
  EXPECT_NEAR(ndcg_at_k(r), 0.63093, 1e-5);
  r.gold_rank.reset();
  EXPECT_DOUBLE_EQ(ndcg_at_k(r), 0.0);
}

TEST(Ndcg, NonIncreasingInRank) {
  double prev = 2.0;
  for (std::size_t rank = 1; rank <= 100; ++rank) {
    const double v = ndcg_for_rank(rank);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(RetrievalTable, ToySet) {
  const auto toy = fixtures::toy();
  const auto t = build_retrieval_table(toy.corpus, toy.questions, toy.documents, 2);
  EXPECT_TRUE(t.hit(0));
  EXPECT_FALSE(t.hit(1));
  EXPECT_TRUE(t.hit(2));
  EXPECT_NEAR(t.ndcg(0), 1.0 / std::log2(3.0), 1e-12);
  EXPECT_EQ(t.ndcg(1), 0.0);
  EXPECT_EQ(t.ndcg(2), 1.0);
}

TEST(RetrievalTable, RejectsMisalignedInputs) {
  const auto toy = fixtures::toy();
  const EmbeddingMatrix shuffled({"d2", "d1", "d3"}, 2, {0.0f, 1.0f, 1.0f, 0.0f, 0.70711f, 0.70711f}, true);
  EXPECT_THROW(build_retrieval_table(toy.corpus, toy.questions, shuffled, 2), ValidationError);
  EXPECT_THROW(build_retrieval_table(toy.corpus, toy.questions, toy.documents, 4), UsageError);
}
