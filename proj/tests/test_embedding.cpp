#include <gtest/gtest.h>

#include "aefs/embedding.hpp"
#include "test_util.hpp"

using namespace aefs;

namespace {

std::vector<Instance> toy_batch() {
  return {Instance{1, {0, 2, 1}}, Instance{0, {1, 0, 3}}, Instance{1, {2, 2, 0}}};
}

const std::vector<std::size_t> kVocab{3, 4, 5};

}  // namespace

TEST(EmbeddingTable, LookupCountsAndBounds) {
  Rng rng(1);
  EmbeddingTable t(0, 4, 3, rng, "t");
  EXPECT_EQ(t.lookup(2).size(), 3u);
  t.lookup(0);
  EXPECT_EQ(t.lookup_count(), 2u);
  EXPECT_THROW(t.lookup(4), DimensionError);
  EXPECT_EQ(t.lookup_count(), 2u);
}

TEST(EmbeddingTable, AccumulateGradTouchesOneRow) {
  Rng rng(1);
  EmbeddingTable t(0, 3, 2, rng, "t");
  const std::vector<double> g{1.0, -2.0};
  t.accumulate_grad(1, g);
  t.accumulate_grad(1, g);
  EXPECT_EQ(t.weights.grad(1, 0), 2.0);
  EXPECT_EQ(t.weights.grad(1, 1), -4.0);
  EXPECT_EQ(t.weights.grad(0, 0), 0.0);
  EXPECT_EQ(t.weights.grad(2, 1), 0.0);
}

TEST(Embed, ConcatenatesFieldsInOrder) {
  Rng rng(2);
  EmbeddingSet set(kVocab, 2, rng, "e");
  const auto batch = toy_batch();
  const Tensor2 e = embed(batch, set);
  ASSERT_EQ(e.rows(), 3u);
  ASSERT_EQ(e.cols(), 6u);
  EXPECT_EQ(e(1, 4), set.table(2).weights.value(3, 0));
  EXPECT_EQ(e(1, 5), set.table(2).weights.value(3, 1));
  EXPECT_EQ(set.total_lookups(), 9u);
}

TEST(Embed, SelectedOnlyLooksUpSelectedFields) {
  Rng rng(2);
  EmbeddingSet set(kVocab, 2, rng, "e");
  const auto batch = toy_batch();
  const std::vector<std::vector<std::size_t>> idx{{2, 0}, {1, 2}, {0, 1}};
  const Tensor2 e = embed_selected(batch, idx, set);
  ASSERT_EQ(e.cols(), 4u);
  EXPECT_EQ(e(0, 0), set.table(2).weights.value(1, 0));
  EXPECT_EQ(e(0, 2), set.table(0).weights.value(0, 0));
  EXPECT_EQ(set.total_lookups(), 6u);
  EXPECT_EQ(set.table(0).lookup_count(), 2u);
}

TEST(Embed, SelectedRejectsBadIndexSets) {
  Rng rng(2);
  EmbeddingSet set(kVocab, 2, rng, "e");
  const auto batch = toy_batch();
  const std::vector<std::vector<std::size_t>> dup{{1, 1}, {0, 1}, {0, 1}};
  EXPECT_THROW(embed_selected(batch, dup, set), DimensionError);
  const std::vector<std::vector<std::size_t>> out_of_range{{3}, {0}, {0}};
  EXPECT_THROW(embed_selected(batch, out_of_range, set), DimensionError);
  const std::vector<std::vector<std::size_t>> ragged{{0, 1}, {0}, {0, 1}};
  EXPECT_THROW(embed_selected(batch, ragged, set), DimensionError);
}

TEST(Embed, OutOfVocabularyIdThrows) {
  Rng rng(2);
  EmbeddingSet set(kVocab, 2, rng, "e");
  const std::vector<Instance> bad{Instance{0, {0, 0, 5}}};
  EXPECT_THROW(embed(bad, set), DimensionError);
}

TEST(Embed, BackwardMatchesFiniteDifference) {
  Rng rng(3);
  EmbeddingSet set(kVocab, 2, rng, "e");
  const auto batch = toy_batch();
  const Tensor2 r = testutil::random_tensor(3, 6, rng);
  const Tensor2 rs = testutil::random_tensor(3, 4, rng);
  const std::vector<std::vector<std::size_t>> idx{{2, 0}, {1, 2}, {0, 1}};
  auto params = set.parameters();
  auto loss = [&] {
    for (auto* p : params) p->zero_grad();
    const Tensor2 e = embed(batch, set);
    embed_backward(batch, r, set);
    const Tensor2 s = embed_selected(batch, idx, set);
    embed_selected_backward(batch, idx, rs, set);
    return testutil::project(e, r) + testutil::project(s, rs);
  };
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-8);
}

TEST(Embed, SingleInstanceForms) {
  Rng rng(4);
  EmbeddingSet set(kVocab, 3, rng, "e");
  const Instance inst{0, {1, 1, 1}};
  EXPECT_EQ(embed(inst, set).size(), 3u);
  const std::vector<std::size_t> idx{2};
  const auto sel = embed_selected(inst, idx, set);
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_EQ(sel[0][1], set.table(2).weights.value(1, 1));
}

TEST(ParamCount, PublishedTableSizes) {
  EXPECT_EQ(full_param_count(std::uint64_t{2018012}, 32), 64576384u);
  EXPECT_EQ(full_param_count(std::uint64_t{1086810}, 32), 34777920u);
  EXPECT_EQ(full_param_count(std::uint64_t{2018012}, 4), 8072048u);
  const std::vector<std::size_t> vocab{10, 20, 30};
  EXPECT_EQ(full_param_count(vocab, 8), 480u);
  Rng rng(1);
  EmbeddingSet set(vocab, 8, rng, "e");
  EXPECT_EQ(table_param_count(set), 480u);
}

TEST(DeltaPae, PublishedValues) {
  const Rational half(1, 2);
  EXPECT_EQ(delta_pae(32, 4, half), Rational(3, 8));
  EXPECT_EQ(delta_pae(32, 2, half), Rational(7, 16));
  EXPECT_EQ(delta_pae(32, 6, half), Rational(5, 16));
  EXPECT_EQ(delta_pae(32, 16, half), Rational(0));
  EXPECT_EQ(delta_el(half), half);
  EXPECT_THROW(delta_pae(4, 32, half), ConfigError);
  EXPECT_THROW(delta_pae(32, 4, Rational(0)), ConfigError);
  EXPECT_THROW(delta_pae(32, 4, Rational(3, 2)), ConfigError);
}

TEST(DeltaPae, FullKeepOnlyPaysAuxOverhead) {
  EXPECT_EQ(delta_pae(32, 4, Rational(1)), Rational(-1, 8));
}

TEST(Ledger, PerInstanceAccounting) {
  const std::vector<std::size_t> vocab{10, 20, 30};
  ActivationLedger ledger;
  const std::vector<std::vector<std::size_t>> b1{{0}, {2}};
  record_batch_activation(ledger, b1, vocab, 4, 60, 3);
  const std::vector<std::vector<std::size_t>> b2{{1, 2}, {0, 1}};
  record_batch_activation(ledger, b2, vocab, 4, 60, 3);
  // main activations per instance: 40, 120, 200, 120 -> mean 120
  EXPECT_EQ(ledger.main_activated_average(), Rational(120));
  EXPECT_EQ(ledger.average_activated(), Rational(180));
  EXPECT_EQ(ledger.average_activated(), ledger.main_activated_average() + Rational(60));
  EXPECT_EQ(ledger.main_full_params, 240u);
  EXPECT_EQ(ledger.main_reduction_average(), Rational(120));
  EXPECT_EQ(ledger.main_lookups_average(), Rational(3, 2));
  EXPECT_EQ(ledger.aux_lookups_average(), Rational(3));
  EXPECT_EQ(ledger.batches_observed, 2u);
}

TEST(Ledger, EmptyLedgerIsUndefined) {
  ActivationLedger ledger;
  EXPECT_THROW(ledger.average_activated(), UndefinedMetricError);
  const std::vector<std::size_t> vocab{10};
  EXPECT_THROW(record_batch_activation(ledger, std::span<const std::vector<std::size_t>>{}, vocab, 4, 0, 0),
               DataError);
}

TEST(Ledger, MergeAddsTotals) {
  const std::vector<std::size_t> vocab{10, 20};
  ActivationLedger a;
  ActivationLedger b;
  const std::vector<std::vector<std::size_t>> s1{{0}};
  const std::vector<std::vector<std::size_t>> s2{{1}, {1}};
  record_batch_activation(a, s1, vocab, 2, 0, 0);
  record_batch_activation(b, s2, vocab, 2, 0, 0);
  ActivationLedger whole;
  record_batch_activation(whole, s1, vocab, 2, 0, 0);
  record_batch_activation(whole, s2, vocab, 2, 0, 0);
  a.merge(b);
  EXPECT_EQ(a.average_activated(), whole.average_activated());
  EXPECT_EQ(a.instances, 3u);
}

TEST(Ledger, ComposedActivationMatchesPublishedDecomposition) {
  const Rational r = composed_activated(Rational::parse("64.58"), Rational::parse("34.75"), Rational::parse("8.07"));
  EXPECT_EQ(r, Rational::parse("37.90"));
}
