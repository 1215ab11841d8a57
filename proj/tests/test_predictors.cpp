#include <gtest/gtest.h>

#include <cmath>

#include "aefs/predictors.hpp"
#include "test_util.hpp"

using namespace aefs;

namespace {

double brute_force_pairwise(std::span<const double> e, std::size_t fields, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < fields; ++i) {
    for (std::size_t j = i + 1; j < fields; ++j) {
      for (std::size_t f = 0; f < dim; ++f) s += e[i * dim + f] * e[j * dim + f];
    }
  }
  return s;
}

PredictorConfig config(Backbone b, std::size_t fields, std::size_t dim) {
  PredictorConfig c;
  c.variant = b;
  c.input_fields = fields;
  c.emb_dim = dim;
  c.hidden_dims = {5, 4};
  return c;
}

}  // namespace

TEST(FmSecondOrder, MatchesBruteForcePairs) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t fields = 1 + uniform_index(rng, 10);
    const std::size_t dim = 1 + uniform_index(rng, 8);
    const Tensor2 e = testutil::random_tensor(1, fields * dim, rng, 3.0);
    EXPECT_NEAR(fm_second_order(e.values(), fields, dim), brute_force_pairwise(e.values(), fields, dim), 1e-10);
  }
}

TEST(Backbone, ParseAndName) {
  EXPECT_EQ(parse_backbone("dcn"), Backbone::dcn);
  EXPECT_EQ(to_string(Backbone::deepfm), "deepfm");
  EXPECT_THROW(parse_backbone("transformer"), ConfigError);
}

TEST(Predictor, WidthMismatchThrows) {
  Rng rng(1);
  Predictor p(config(Backbone::mlp, 3, 2), rng, "p");
  EXPECT_THROW(p.forward_logits(Tensor2(2, 5)), DimensionError);
}

TEST(Predictor, InvalidConfigThrows) {
  Rng rng(1);
  PredictorConfig c = config(Backbone::mlp, 3, 2);
  c.hidden_dims.clear();
  EXPECT_THROW(Predictor(c, rng, "p"), ConfigError);
  c = config(Backbone::dcn, 3, 2);
  c.n_cross_layers = 0;
  EXPECT_THROW(Predictor(c, rng, "p"), ConfigError);
}

TEST(Predictor, OutputsAreProbabilities) {
  Rng rng(2);
  for (const Backbone b : {Backbone::mlp, Backbone::deepfm, Backbone::dcn}) {
    Predictor p(config(b, 4, 3), rng, "p");
    const Tensor2 y = p.forward(testutil::random_tensor(6, 12, rng));
    ASSERT_EQ(y.rows(), 6u);
    ASSERT_EQ(y.cols(), 1u);
    for (double v : y.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Predictor, DcnCrossLayerHandExample) {
  Rng rng(3);
  PredictorConfig c = config(Backbone::dcn, 1, 2);
  c.n_cross_layers = 1;
  Predictor p(c, rng, "p");
  p.cross_weights()[0].value = Tensor2::from_rows({{1.0, 2.0}});
  p.cross_biases()[0].value = Tensor2::from_rows({{0.5, -0.5}});
  p.forward_logits(Tensor2::from_rows({{1.0, 3.0}}));
  // s = 1*1 + 3*2 = 7; x1 = x0*7 + b + x0 = [8.5, 23.5]
  EXPECT_EQ(p.cross_output(), Tensor2::from_rows({{8.5, 23.5}}));
}

class PredictorGrad : public ::testing::TestWithParam<Backbone> {};

TEST_P(PredictorGrad, ParametersAndInputsMatchFiniteDifferences) {
  Rng rng(21);
  Predictor p(config(GetParam(), 3, 2), rng, "p");
  Parameter x("x", testutil::random_tensor(4, 6, rng));
  const Tensor2 r = testutil::random_tensor(4, 1, rng);
  std::vector<Parameter*> params = p.parameters();
  params.push_back(&x);
  auto loss = [&] {
    for (auto* q : params) q->zero_grad();
    const Tensor2 z = p.forward_logits(x.value);
    x.grad = p.backward(r);
    return testutil::project(z, r);
  };
  const auto report = grad_check(loss, params);
  EXPECT_LT(report.max_relative_error, 1e-6) << report.worst_parameter << "[" << report.worst_index << "]";
}

INSTANTIATE_TEST_SUITE_P(AllBackbones, PredictorGrad,
                         ::testing::Values(Backbone::mlp, Backbone::deepfm, Backbone::dcn));

TEST(Controller, ScoresAreADistributionPerRow) {
  Rng rng(5);
  Controller c(4, 3, rng, "c");
  const Tensor2 s = c.forward(testutil::random_tensor(8, 12, rng));
  ASSERT_EQ(s.cols(), 4u);
  for (std::size_t b = 0; b < s.rows(); ++b) {
    double sum = 0.0;
    for (double v : s.row(b)) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Controller, GradCheckThroughBatchNorm) {
  Rng rng(6);
  Controller c(3, 2, rng, "c");
  Parameter e("e", testutil::random_tensor(5, 6, rng));
  const Tensor2 r = testutil::random_tensor(5, 3, rng);
  std::vector<Parameter*> params = c.parameters();
  params.push_back(&e);
  // Running statistics drift with every forward; they do not affect
  // training-mode outputs.
  auto loss = [&] {
    for (auto* q : params) q->zero_grad();
    const Tensor2 s = c.forward(e.value);
    e.grad = c.backward(r);
    return testutil::project(s, r);
  };
  EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-6);
}

TEST(Controller, InferenceModeIsPerInstance) {
  Rng rng(7);
  Controller c(3, 2, rng, "c");
  c.forward(testutil::random_tensor(6, 6, rng));
  c.set_mode(NormMode::inference);
  const Tensor2 batch = testutil::random_tensor(4, 6, rng);
  const Tensor2 all = c.forward(batch);
  Tensor2 one(1, 6);
  std::copy(batch.row(2).begin(), batch.row(2).end(), one.row(0).begin());
  const Tensor2 single = c.forward(one);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(single(0, j), all(2, j));
}

TEST(Bce, ValuesClampAndGradient) {
  EXPECT_NEAR(bce(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce(1.0, 1), 1e-7, 1e-12);
  EXPECT_NEAR(bce(0.0, 1), -std::log(1e-7), 1e-9);
  EXPECT_DOUBLE_EQ(bce_logit_grad(0.3, 1), 0.3 - 1.0);
  EXPECT_EQ(bce_logit_grad(1.0, 0), 0.0);
  const std::vector<double> p{0.5, 0.5};
  const std::vector<int> y{1, 0};
  EXPECT_NEAR(bce_mean(p, y), std::log(2.0), 1e-15);
  EXPECT_THROW(bce_mean(p, std::vector<int>{1}), DimensionError);
}

TEST(Bce, LogitGradientMatchesFiniteDifference) {
  for (const double z : {-3.0, -0.2, 0.0, 1.7}) {
    for (const int y : {0, 1}) {
      const double h = 1e-6;
      const double numeric = (bce(sigmoid(z + h), y) - bce(sigmoid(z - h), y)) / (2 * h);
      EXPECT_NEAR(bce_logit_grad(sigmoid(z), y), numeric, 1e-7);
    }
  }
}
