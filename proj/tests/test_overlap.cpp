#include <gtest/gtest.h>

#include <random>

#include "embedeval/overlap.hpp"
#include "embedeval/synth.hpp"
#include "fixtures.hpp"
#include "oracle.hpp"

using namespace embedeval;

TEST(SimilaritySets, ToySet) {
  const auto toy = fixtures::toy();
  const auto s = build_similarity_sets(toy.corpus, toy.questions, toy.documents, 2, 0);
  ASSERT_EQ(s.s_corr.size(), 3u);
  EXPECT_NEAR(s.s_corr[0], 0.8, 1e-6);
  EXPECT_NEAR(s.s_corr[1], 0.0, 1e-12);
  const double h = static_cast<double>(0.70711f);
  EXPECT_NEAR(s.s_corr[2], 2 * h * h, 1e-6);
  const std::vector<double> topk{0.98995, 0.8, 1.0, 0.70711, 1.0, 0.70711};
  ASSERT_EQ(s.s_topk.size(), topk.size());
  for (std::size_t i = 0; i < topk.size(); ++i) EXPECT_NEAR(s.s_topk[i], topk[i], 1e-5);
  EXPECT_EQ(s.s_rand.size(), 3u);
}

TEST(SimilaritySets, GoldAtRankOneIsContained) {
  SynthSpec spec;
  spec.gold_similarity_mean = 0.95;
  spec.gold_similarity_std = 0.01;
  spec.seed = 3;
  const auto data = generate(spec);
  const auto s = build_similarity_sets(data.corpus, data.questions, data.documents, 5, 1);
  for (std::size_t q = 0; q < s.num_questions(); ++q) EXPECT_EQ(s.s_corr[q], s.s_topk[q * 5]);
}

TEST(SimilaritySets, RandomDrawsAreSeeded) {
  SynthSpec spec;
  spec.seed = 4;
  const auto data = generate(spec);
  const auto a = build_similarity_sets(data.corpus, data.questions, data.documents, 5, 77);
  const auto b = build_similarity_sets(data.corpus, data.questions, data.documents, 5, 77);
  const auto c = build_similarity_sets(data.corpus, data.questions, data.documents, 5, 78);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.s_rand, c.s_rand);
  for (std::size_t q = 0; q < a.num_questions(); ++q) {
    const auto r = random_document_for(77, q, data.documents.rows());
    EXPECT_EQ(a.s_rand[q], dot(data.questions.row(q), data.documents.row(r)));
  }
}

TEST(Overlap, ToySingleBootstrap) {
  const auto toy = fixtures::toy();
  const auto s = build_similarity_sets(toy.corpus, toy.questions, toy.documents, 2, 0);
  const auto r = overlap_metrics(s, fixtures::identity_plan(3), 25);
  ASSERT_EQ(r.theta.size(), 1u);
  EXPECT_NEAR(r.theta[0], 0.73033, 1e-5);
  EXPECT_NEAR(r.coe.mean, 2.0 / 3.0, 1e-12);
}

TEST(Overlap, PerfectlySeparated) {
  SimilaritySets s;
  s.k = 2;
  for (int q = 0; q < 20; ++q) {
    s.s_corr.push_back(0.99);
    s.s_topk.push_back(0.99);
    s.s_topk.push_back(0.5 + 0.01 * q);
    s.s_rand.push_back(0.05);
  }
  const auto plan = BootstrapPlan::generate(1, 100, 20, 20);
  for (double psi : {5.0, 25.0, 50.0}) {
    const auto r = overlap_metrics(s, plan, psi);
    for (double t : r.theta) EXPECT_LE(t, 0.9);
    EXPECT_EQ(r.coe.mean, 1.0);
    EXPECT_EQ(r.roe.mean, 0.0);
  }
}

TEST(Overlap, RaisingPsiCannotRaiseMeans) {
  SynthSpec spec;
  spec.gold_similarity_mean = 0.5;
  spec.gold_similarity_std = 0.2;
  spec.seed = 5;
  const auto data = generate(spec);
  const auto s = build_similarity_sets(data.corpus, data.questions, data.documents, 10, 2);
  const auto plan = BootstrapPlan::generate(5, 200, 100, 100);
  double coe = 2, roe = 2;
  for (double psi = 0; psi <= 100; psi += 10) {
    const auto r = overlap_metrics(s, plan, psi);
    EXPECT_LE(r.coe.mean, coe);
    EXPECT_LE(r.roe.mean, roe);
    EXPECT_GE(r.coe.mean, 0.0);
    EXPECT_LE(r.coe.mean, 1.0);
    coe = r.coe.mean;
    roe = r.roe.mean;
  }
}

TEST(Overlap, CoeAtLeastRoeWhenCorrectDominates) {
  SynthSpec spec;
  spec.gold_similarity_mean = 0.8;
  spec.distractor_similarity_mean = 0.1;
  spec.seed = 6;
  const auto data = generate(spec);
  const auto s = build_similarity_sets(data.corpus, data.questions, data.documents, 10, 3);
  const auto plan = BootstrapPlan::generate(6, 300, 100, 100);
  for (double psi : {10.0, 50.0, 90.0}) {
    const auto r = overlap_metrics(s, plan, psi);
    EXPECT_GE(r.coe.mean, r.roe.mean);
  }
}

TEST(Overlap, MatchesOracle) {
  std::mt19937_64 gen(555);
  for (int t = 0; t < 60; ++t) {
    const auto inst = oracle::random_instance(gen, 10, 5, 4, t % 2 == 0);
    const auto lib = oracle::to_library(inst);
    const std::size_t k = std::min<std::size_t>(2, inst.docs.size());
    const std::uint64_t rand_seed = 1000 + static_cast<std::uint64_t>(t);
    std::vector<std::size_t> random_doc;
    for (std::size_t q = 0; q < inst.questions.size(); ++q)
      random_doc.push_back(SeededRng(rand_seed, kRandomDocStreamBase + q).uniform_index(inst.docs.size()));
    const auto plan = BootstrapPlan::generate(static_cast<std::uint64_t>(t), 30, inst.questions.size(),
                                              inst.questions.size());
    for (double psi : {0.0, 25.0, 62.5, 100.0}) {
      const auto expect = oracle::evaluate(inst, plan.samples, k, {50}, psi, random_doc);
      const auto sets = build_similarity_sets(lib.corpus, lib.questions, lib.documents, k, rand_seed);
      const auto r = overlap_metrics(sets, plan, psi);
      for (std::size_t j = 0; j < plan.num_samples(); ++j) {
        EXPECT_NEAR(r.theta[j], expect.theta[j], 1e-12);
        EXPECT_EQ(r.coe.per_bootstrap[j], expect.coe[j]);
        EXPECT_EQ(r.roe.per_bootstrap[j], expect.roe[j]);
      }
      EXPECT_NEAR(r.coe.mean, oracle::mean(expect.coe), 1e-9);
      EXPECT_NEAR(r.roe.mean, oracle::mean(expect.roe), 1e-9);
    }
  }
}

TEST(Overlap, Errors) {
  const auto toy = fixtures::toy();
  const auto s = build_similarity_sets(toy.corpus, toy.questions, toy.documents, 2, 0);
  EXPECT_THROW(overlap_metrics(s, fixtures::identity_plan(3), 101), UsageError);
  EXPECT_THROW(overlap_metrics(s, fixtures::identity_plan(4), 50), ValidationError);
}

TEST(Overlap, DeterministicAcrossThreads) {
  SynthSpec spec;
  spec.seed = 8;
  const auto data = generate(spec);
  const auto s = build_similarity_sets(data.corpus, data.questions, data.documents, 10, 4);
  const auto plan = BootstrapPlan::generate(1, 400, 100, 100);
  EXPECT_EQ(overlap_metrics(s, plan, 35, 1), overlap_metrics(s, plan, 35, 4));
}

TEST(Density, AllEqualValuesOccupyOneBin) {
  const std::vector<double> v(50, 0.3);
  const auto d = density_series("x", v, 100);
  int occupied = 0;
  for (double h : d.histogram) occupied += h > 0 ? 1 : 0;
  EXPECT_EQ(occupied, 1);
  double integral = 0;
  for (double h : d.histogram) integral += h * 0.02;
  EXPECT_NEAR(integral, 1.0, 1e-12);
}

TEST(Density, UniformValuesGiveFlatHistogram) {
  std::mt19937_64 gen(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(20000);
  for (auto& x : v) x = u(gen);
  const std::size_t bins = 20;
  const auto d = density_series("u", v, bins);
  const double width = 2.0 / bins, expected = static_cast<double>(v.size()) / bins;
  double chi2 = 0.0;
  for (double h : d.histogram) {
    const double count = h * width * static_cast<double>(v.size());
    chi2 += (count - expected) * (count - expected) / expected;
  }
  EXPECT_LT(chi2, 43.8);  // 19 dof, p = 0.001
}

TEST(Density, ExportShapeAndErrors) {
  const auto toy = fixtures::toy();
  const auto s = build_similarity_sets(toy.corpus, toy.questions, toy.documents, 2, 0);
  const auto plot = density_export(s, 40);
  EXPECT_EQ(plot.bin_centers.size(), 40u);
  ASSERT_EQ(plot.series.size(), 3u);
  EXPECT_EQ(plot.series[0].name, "random");
  EXPECT_EQ(plot.series[1].name, "correct");
  EXPECT_EQ(plot.series[2].name, "topk");
  for (const auto& series : plot.series) {
    EXPECT_EQ(series.kde.size(), 40u);
    EXPECT_GT(series.bandwidth, 0.0);
  }
  EXPECT_THROW(density_series("empty", std::vector<double>{}, 10), UsageError);
  EXPECT_THROW(density_series("x", std::vector<double>{0.1}, 0), UsageError);
}
