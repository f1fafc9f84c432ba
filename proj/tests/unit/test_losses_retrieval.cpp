#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles/checks.hpp"

using namespace talnet;
using checks::random_tensor;

TEST(Triplet, MatchesBruteForceIncludingTies) {
  const auto r = checks::triplet_matches_brute_force(200, 1);
  EXPECT_TRUE(r.passed()) << r.summary();
}

TEST(Triplet, HandComputedExample) {
  // Two identities on a line: 0, 1 | 3, 6.
  const Tensor<double> f({4, 1}, {0, 1, 3, 6});
  const std::vector<int> labels{0, 0, 1, 1};
  // Hardest (pos, neg) squared distances: (1, 9) (1, 4) (9, 4) (9, 25).
  EXPECT_DOUBLE_EQ(triplet_batch_hard(f, labels, 1.0).item(), 0 + 0 + 6 + 0);
  EXPECT_DOUBLE_EQ(triplet_batch_hard(f, labels, 1.0, false).item(), 0 + 0 + 2 + 0);
}

TEST(Triplet, RejectsDegenerateBatches) {
  const Tensor<double> f({3, 2});
  EXPECT_THROW(triplet_batch_hard(f, std::vector<int>{0, 0, 0}, 0.3), std::invalid_argument);
  EXPECT_THROW(triplet_batch_hard(f, std::vector<int>{0, 0, 1}, 0.3), std::invalid_argument);
  EXPECT_THROW(triplet_batch_hard(f, BatchStructure{1, 3}, 0.3), std::invalid_argument);
}

TEST(LabelSmoothing, ReducesToCrossEntropyAndUniformGivesLogG) {
  const auto r = checks::label_smoothing_identities(200, 2);
  EXPECT_TRUE(r.plain_ce.passed()) << r.plain_ce.summary();
  EXPECT_TRUE(r.uniform_log_g.passed()) << r.uniform_log_g.summary();
  EXPECT_TRUE(r.oracle_match.passed()) << r.oracle_match.summary();
}

TEST(LabelSmoothing, TargetOutOfRangeThrows) {
  const Tensor<double> logits({1, 3});
  EXPECT_THROW(ce_label_smooth(logits, {3}, 0.1), std::out_of_range);
}

TEST(Losses, TotalCombinesTerms) {
  const Tensor<double> a({1}, {2.0}), b({1}, {5.0});
  EXPECT_DOUBLE_EQ(total_loss(a, b, 0.3).item(), 3.5);
  LossWeights w;
  w.epsilon = 1.0;
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(Retrieval, CmcAndMapMatchBruteForce) {
  const auto r = checks::cmc_map_match(200, 3);
  EXPECT_TRUE(r.metrics.passed()) << r.metrics.summary();
  EXPECT_EQ(r.non_monotone, 0u);
}

TEST(Retrieval, FusedDistanceDecomposesAndZeroLambdaIsAppearanceOnly) {
  const auto r = checks::fused_distance_properties(100, 4);
  EXPECT_TRUE(r.decomposition.passed()) << r.decomposition.summary();
  EXPECT_GT(r.rankings, 0u);
  EXPECT_EQ(r.ranking_mismatches, 0u);
}

TEST(Retrieval, DuplicateQueryRanksFirst) {
  std::vector<EmbeddingRecord> gallery{{1, 0, 1, {0.0, 0.0}, {}}, {2, 1, 1, {5.0, 0.0}, {}}, {3, 2, 1, {0.0, 5.0}, {}}};
  std::vector<EmbeddingRecord> queries{{10, 1, 0, {5.0, 0.0}, {}}};
  const auto r = evaluate(queries, gallery, Protocol::multi_shot, 0.3);
  EXPECT_DOUBLE_EQ(r.rank(1), 1.0);
  EXPECT_DOUBLE_EQ(r.map, 1.0);
}

TEST(Retrieval, MultiShotExcludesSameCameraMatches) {
  std::vector<EmbeddingRecord> recs{{1, 0, 0, {0.0}, {}}, {2, 0, 0, {0.1}, {}}, {3, 1, 1, {0.2}, {}}, {4, 0, 1, {0.3}, {}}};
  const auto r = evaluate({recs[0]}, recs, Protocol::multi_shot, 0.0, true);
  ASSERT_EQ(r.rankings.size(), 1u);
  EXPECT_EQ(r.rankings[0].order, (std::vector<std::size_t>{2, 3}));
  EXPECT_DOUBLE_EQ(r.rank(1), 0.0);
  EXPECT_DOUBLE_EQ(r.rank(2), 1.0);
  EXPECT_DOUBLE_EQ(r.map, 0.5);
  const auto p = evaluate({recs[0]}, recs, Protocol::pairwise, 0.0);
  EXPECT_DOUBLE_EQ(p.rank(1), 1.0);
}

TEST(Retrieval, TranslationInvariant) {
  Rng rng(5);
  std::vector<EmbeddingRecord> a, b;
  for (int i = 0; i < 12; ++i) {
    EmbeddingRecord r{i, i % 4, i % 3, {normal(rng), normal(rng)}, {normal(rng)}};
    a.push_back(r);
    for (auto& v : r.f_app) v += 0.5;
    r.f_att[0] -= 0.5;
    b.push_back(r);
  }
  const auto ra = evaluate(a, a, Protocol::multi_shot, 0.7), rb = evaluate(b, b, Protocol::multi_shot, 0.7);
  for (std::size_t k = 0; k < ra.cmc.size(); ++k) EXPECT_NEAR(ra.cmc[k], rb.cmc[k], 1e-12);
  EXPECT_NEAR(ra.map, rb.map, 1e-12);
}

TEST(Retrieval, EmbeddingFileRoundTrip) {
  std::vector<EmbeddingRecord> recs{{1, 2, 0, {0.25, -1.5}, {3.0}}, {7, 3, 1, {1e-9, 2.0}, {-4.0}}};
  const auto path = (std::filesystem::temp_directory_path() / "talnet_embeddings.tsv").string();
  write_embeddings(path, recs);
  const auto back = read_embeddings(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].sequence_id, 7);
  EXPECT_EQ(back[1].f_app, recs[1].f_app);
  EXPECT_EQ(back[0].f_att, recs[0].f_att);
  std::filesystem::remove(path);
  EXPECT_THROW(read_embeddings(path), DataError);
}
