#include <gtest/gtest.h>

#include <cmath>

#include "aefs/models.hpp"
#include "test_util.hpp"

using namespace aefs;

namespace {

std::vector<Instance> toy_batch(std::size_t n_fields, std::size_t rows, Rng& rng, std::span<const std::size_t> vocab) {
  std::vector<Instance> out;
  for (std::size_t b = 0; b < rows; ++b) {
    Instance inst;
    inst.label = static_cast<std::uint8_t>(b % 2);
    for (std::size_t f = 0; f < n_fields; ++f) inst.x.push_back(static_cast<std::uint32_t>(uniform_index(rng, vocab[f])));
    out.push_back(inst);
  }
  return out;
}

PredictorConfig backbone(Backbone b) {
  PredictorConfig c;
  c.variant = b;
  c.hidden_dims = {4, 3};
  c.n_cross_layers = 2;
  return c;
}

const std::vector<std::size_t> kVocab6{3, 4, 2, 5, 3, 4};

}  // namespace

TEST(KMax, PicksLargestInDescendingOrder) {
  const std::vector<double> s{0.1, 0.4, 0.2, 0.3};
  EXPECT_EQ(k_max_indices(s, 2), (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(k_max_indices(s, 4), (std::vector<std::size_t>{1, 3, 2, 0}));
}

TEST(KMax, TiesGoToLowerIndex) {
  const std::vector<double> s{0.25, 0.25, 0.25, 0.25};
  EXPECT_EQ(k_max_indices(s, 2), (std::vector<std::size_t>{0, 1}));
  const std::vector<double> t{0.1, 0.3, 0.3, 0.3};
  EXPECT_EQ(k_max_indices(t, 2), (std::vector<std::size_t>{1, 2}));
}

TEST(KMax, InvariantUnderMonotoneTransform) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(7);
    for (double& v : s) v = uniform(rng, 0.0, 1.0);
    std::vector<double> t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) - 2.0;
    EXPECT_EQ(k_max_indices(s, 3), k_max_indices(t, 3));
  }
}

TEST(KMax, RejectsBadK) {
  const std::vector<double> s{0.5, 0.5};
  EXPECT_THROW(k_max_indices(s, 0), DimensionError);
  EXPECT_THROW(k_max_indices(s, 3), DimensionError);
  const std::vector<double> nan{0.5, std::nan("")};
  EXPECT_THROW(k_max_indices(nan, 1), NumericError);
}

TEST(L1Normalize, KeptScoresSumToOne) {
  const std::vector<double> s{0.4, 0.3, 0.2, 0.1};
  const std::vector<std::size_t> idx{0, 1};
  const auto w = l1_normalize_selected(s, idx);
  EXPECT_NEAR(w[0], 4.0 / 7.0, 1e-15);
  EXPECT_NEAR(w[1], 3.0 / 7.0, 1e-15);
}

TEST(L1Normalize, ZeroMassIsDegenerate) {
  const std::vector<double> s{0.0, 0.0, 1.0};
  const std::vector<std::size_t> idx{0, 1};
  EXPECT_THROW(l1_normalize_selected(s, idx), DegenerateSelectionError);
}

TEST(L1Normalize, BackwardMatchesFiniteDifference) {
  Rng rng(8);
  Parameter s("s", Tensor2(1, 5));
  for (std::size_t i = 0; i < 5; ++i) s.value[i] = uniform(rng, 0.1, 1.0);
  const std::vector<std::size_t> idx{3, 0, 1};
  const std::vector<double> r{0.7, -1.3, 0.4};
  auto loss = [&] {
    s.zero_grad();
    const auto w = l1_normalize_selected(s.value.values(), idx);
    l1_normalize_backward(s.value.values(), idx, w, r, s.grad.row(0));
    double v = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) v += r[j] * w[j];
    return v;
  };
  Parameter* params[] = {&s};
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-8);
}

TEST(ScaleEmbeddings, MultipliesEachBlock) {
  const std::vector<std::vector<double>> sel{{1.0, 2.0}, {3.0, 4.0}};
  const std::vector<double> w{0.5, 2.0};
  const auto out = scale_embeddings(sel, w);
  EXPECT_EQ(out, (std::vector<std::vector<double>>{{0.5, 1.0}, {6.0, 8.0}}));
  EXPECT_THROW(scale_embeddings(sel, std::vector<double>{1.0}), DimensionError);
}

TEST(ScaleBlocks, BackwardMatchesFiniteDifference) {
  Rng rng(9);
  Parameter e("e", testutil::random_tensor(3, 6, rng));
  Parameter w("w", testutil::random_tensor(3, 2, rng));
  const Tensor2 r = testutil::random_tensor(3, 6, rng);
  auto loss = [&] {
    e.zero_grad();
    w.zero_grad();
    const Tensor2 y = scale_blocks(e.value, w.value, 3);
    scale_blocks_backward(e.value, w.value, r, 3, e.grad, w.grad);
    return testutil::project(y, r);
  };
  Parameter* params[] = {&e, &w};
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-8);
}

TEST(Alignment, EmbeddingLossHandExample) {
  Rng rng(1);
  Linear fc(2, 2, rng, "fc");
  fc.weight.value = Tensor2::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  fc.bias.value = Tensor2(1, 2);
  const Tensor2 aux = Tensor2::from_rows({{1.0, 1.0}});
  const Tensor2 main = Tensor2::from_rows({{0.0, 0.0}});
  EXPECT_DOUBLE_EQ(embedding_alignment_loss(aux, main, fc, 1), 1.0);
  const Tensor2 bad = Tensor2::from_rows({{0.0, 0.0, 0.0}});
  EXPECT_THROW(embedding_alignment_loss(aux, bad, fc, 1), DimensionError);
}

TEST(Alignment, EmbeddingLossMapsUpToMainWidth) {
  Rng rng(1);
  Linear fc(1, 2, rng, "fc");
  fc.weight.value = Tensor2::from_rows({{2.0, -1.0}});
  fc.bias.value = Tensor2::from_rows({{0.0, 1.0}});
  // Two fields: aux 1 -> [2, 0], aux 3 -> [6, -2]; main [2, 0, 5, -2]
  const Tensor2 aux = Tensor2::from_rows({{1.0, 3.0}});
  const Tensor2 main = Tensor2::from_rows({{2.0, 0.0, 5.0, -2.0}});
  EXPECT_DOUBLE_EQ(embedding_alignment_loss(aux, main, fc, 2), 0.25);
}

TEST(Alignment, EmbeddingLossGradient) {
  Rng rng(2);
  Linear fc(2, 3, rng, "fc");
  Parameter aux("aux", testutil::random_tensor(4, 4, rng));
  Parameter main("main", testutil::random_tensor(4, 6, rng));
  std::vector<Parameter*> params{&fc.weight, &fc.bias, &aux, &main};
  auto loss = [&] {
    for (auto* p : params) p->zero_grad();
    AlignmentGrads g;
    const double v = embedding_alignment_loss(aux.value, main.value, fc, 2, &g);
    aux.grad = g.d_aux;
    main.grad = g.d_main;
    return v;
  };
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-7);
}

TEST(Alignment, PredictionLossHandExample) {
  const std::vector<double> a{1.0, 0.0};
  const std::vector<double> m{0.0, 0.0};
  EXPECT_DOUBLE_EQ(prediction_alignment_loss(a, m), 0.5);
  EXPECT_THROW(prediction_alignment_loss(a, std::vector<double>{0.0}), DimensionError);
}

TEST(SelectTopK, WeightsWithAndWithoutReweighting) {
  const Tensor2 s = Tensor2::from_rows({{0.1, 0.4, 0.2, 0.3}});
  const auto on = select_top_k(s, 2, true);
  EXPECT_EQ(on[0].indices, (std::vector<std::size_t>{1, 3}));
  EXPECT_NEAR(on[0].weights[0], 4.0 / 7.0, 1e-15);
  const auto off = select_top_k(s, 2, false);
  EXPECT_EQ(off[0].weights, (std::vector<double>{0.4, 0.3}));
}

class AefsGrad : public ::testing::TestWithParam<Backbone> {};

TEST_P(AefsGrad, JointLossMatchesFiniteDifferences) {
  Rng rng(31);
  const auto batch = toy_batch(6, 5, rng, kVocab6);
  AefsOptions opt;
  opt.k = 3;
  ModelPair pair(kVocab6, 6, 2, backbone(GetParam()), backbone(GetParam()), opt, 7);
  auto params = pair.parameters();
  testutil::jitter(params, rng);
  std::vector<std::vector<std::size_t>> first;
  auto loss = [&] {
    pair.zero_grad();
    const ForwardTrace t = pair.forward(batch);
    if (first.empty()) first = t.indices;
    EXPECT_EQ(t.indices, first) << "selection changed under perturbation";
    return pair.backward(t, batch).total();
  };
  const auto report = grad_check(loss, params);
  EXPECT_LT(report.max_relative_error, 1e-5) << report.worst_parameter << "[" << report.worst_index << "]";
}

INSTANTIATE_TEST_SUITE_P(AllBackbones, AefsGrad, ::testing::Values(Backbone::mlp, Backbone::deepfm, Backbone::dcn));

TEST(Aefs, GradientWithSwitchesOff) {
  Rng rng(32);
  const auto batch = toy_batch(6, 4, rng, kVocab6);
  AefsOptions opt;
  opt.k = 2;
  opt.enable_eal = false;
  opt.enable_pal = false;
  opt.enable_topk_reweight = false;
  ModelPair pair(kVocab6, 4, 4, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 3);
  auto params = pair.parameters();
  testutil::jitter(params, rng);
  auto loss = [&] {
    pair.zero_grad();
    const BatchLosses l = pair.train_batch(batch);
    EXPECT_EQ(l.eal, 0.0);
    EXPECT_EQ(l.pal, 0.0);
    return l.total();
  };
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-5);
}

TEST(Aefs, MainModelLooksUpOnlySelectedFields) {
  Rng rng(33);
  const auto batch = toy_batch(6, 7, rng, kVocab6);
  AefsOptions opt;
  opt.k = 2;
  ModelPair pair(kVocab6, 8, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 1);
  const ForwardTrace t = pair.forward(batch);
  EXPECT_EQ(pair.main_set().total_lookups(), 7u * 2u);
  EXPECT_EQ(pair.aux_set().total_lookups(), 7u * 6u);
  for (const auto& idx : t.indices) EXPECT_EQ(idx.size(), 2u);
}

TEST(Aefs, BothModelsShareOneWeightVector) {
  Rng rng(34);
  const auto batch = toy_batch(6, 5, rng, kVocab6);
  AefsOptions opt;
  opt.k = 3;
  ModelPair pair(kVocab6, 4, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 2);
  const ForwardTrace t = pair.forward(batch);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    double wsum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double w = t.weights(b, j);
      wsum += w;
      EXPECT_DOUBLE_EQ(w, t.selections[b].weights[j]);
      for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(t.aux_scaled(b, j * 2 + c), w * t.aux_selected(b, j * 2 + c));
      for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(t.main_scaled(b, j * 4 + c), w * t.main_selected(b, j * 4 + c));
      const std::size_t f = t.indices[b][j];
      EXPECT_EQ(t.main_selected(b, j * 4), pair.main_set().table(f).weights.value(batch[b].x[f], 0));
    }
    EXPECT_NEAR(wsum, 1.0, 1e-12);
  }
}

TEST(Aefs, EqualWidthsWorkAndLargerAuxIsRejected) {
  Rng rng(35);
  const auto batch = toy_batch(6, 3, rng, kVocab6);
  AefsOptions opt;
  opt.k = 3;
  ModelPair same(kVocab6, 3, 3, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 2);
  EXPECT_EQ(same.forward(batch).aux_scaled.cols(), same.forward(batch).main_scaled.cols());
  EXPECT_THROW(ModelPair(kVocab6, 2, 3, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 2), ConfigError);
  opt.k = 7;
  EXPECT_THROW(ModelPair(kVocab6, 4, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 2), ConfigError);
}

TEST(Aefs, InferenceReportsAlignmentError) {
  Rng rng(36);
  const auto batch = toy_batch(6, 4, rng, kVocab6);
  AefsOptions opt;
  opt.k = 2;
  ModelPair pair(kVocab6, 4, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 5);
  pair.forward(batch);
  pair.set_mode(NormMode::inference);
  const ForwardTrace t = pair.forward(batch);
  const double eal = embedding_alignment_loss(t.aux_scaled, t.main_scaled, pair.align_fc, 2);
  const BatchOutput out = pair.infer(batch);
  EXPECT_NEAR(out.eal_sum / 4.0, eal, 1e-12);
  EXPECT_EQ(out.p_aux.size(), 4u);
}

class AdaFsGrad : public ::testing::TestWithParam<SelectionMode> {};

TEST_P(AdaFsGrad, MatchesFiniteDifferences) {
  Rng rng(41);
  const auto batch = toy_batch(6, 5, rng, kVocab6);
  AdaFsModel m(kVocab6, 3, backbone(Backbone::mlp), GetParam(), 3, 4);
  auto params = m.parameters();
  testutil::jitter(params, rng);
  auto loss = [&] {
    m.zero_grad();
    return m.train_batch(batch).total();
  };
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(BothModes, AdaFsGrad, ::testing::Values(SelectionMode::soft, SelectionMode::hard));

TEST(AdaFs, HardWithAllFieldsEqualsSoft) {
  Rng rng(42);
  const auto batch = toy_batch(6, 5, rng, kVocab6);
  AdaFsModel hard(kVocab6, 3, backbone(Backbone::dcn), SelectionMode::hard, 6, 9);
  AdaFsModel soft(kVocab6, 3, backbone(Backbone::dcn), SelectionMode::soft, 6, 9);
  const AdaFsTrace h = hard.trace(batch);
  const AdaFsTrace s = soft.trace(batch);
  EXPECT_LT(testutil::max_abs_diff(h.logits, s.logits), 1e-12);
}

TEST(AdaFs, HardModeZeroesDroppedFieldsInPlace) {
  Rng rng(43);
  const auto batch = toy_batch(6, 4, rng, kVocab6);
  AdaFsModel m(kVocab6, 2, backbone(Backbone::mlp), SelectionMode::hard, 2, 1);
  const AdaFsTrace t = m.trace(batch);
  ASSERT_EQ(t.scaled.cols(), 12u);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& keep = t.selections[b].indices;
    for (std::size_t f = 0; f < 6; ++f) {
      const bool kept = std::find(keep.begin(), keep.end(), f) != keep.end();
      if (!kept) {
        EXPECT_EQ(t.scaled(b, f * 2), 0.0);
        EXPECT_EQ(t.scaled(b, f * 2 + 1), 0.0);
      }
    }
  }
  EXPECT_EQ(m.embeddings().total_lookups(), 4u * 6u);
}

TEST(Methods, ParseNames) {
  EXPECT_EQ(parse_method("aefs"), Method::aefs);
  EXPECT_EQ(parse_method("none"), Method::none);
  EXPECT_EQ(parse_selection_mode("soft"), SelectionMode::soft);
  EXPECT_THROW(parse_method("lasso"), ConfigError);
  EXPECT_THROW(parse_selection_mode("medium"), ConfigError);
}

TEST(PlainModel, UsesOnlyItsFields) {
  Rng rng(44);
  const auto batch = toy_batch(6, 3, rng, kVocab6);
  PlainModel m(kVocab6, 2, {1, 4}, backbone(Backbone::mlp), 3, Method::random);
  const BatchOutput out = m.infer(batch);
  EXPECT_EQ(out.embedded[0], (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(m.main_embeddings().total_lookups(), 6u);
  auto params = m.parameters();
  testutil::jitter(params, rng);
  auto loss = [&] {
    m.zero_grad();
    return m.train_batch(batch).total();
  };
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-6);
}

TEST(ModelState, RoundTripsAndRejectsWrongShapes) {
  AefsOptions opt;
  opt.k = 3;
  ModelPair a(kVocab6, 4, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 1);
  ModelPair b(kVocab6, 4, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 2);
  Rng rng(45);
  const auto batch = toy_batch(6, 4, rng, kVocab6);
  a.forward(batch);
  b.load_state(a.state());
  a.set_mode(NormMode::inference);
  b.set_mode(NormMode::inference);
  EXPECT_EQ(a.infer(batch).p_main, b.infer(batch).p_main);
  ModelPair wide(kVocab6, 8, 2, backbone(Backbone::mlp), backbone(Backbone::mlp), opt, 1);
  EXPECT_THROW(wide.load_state(a.state()), DataError);
}
