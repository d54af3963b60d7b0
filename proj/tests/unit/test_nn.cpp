#include <gtest/gtest.h>

#include <cmath>

#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/nn.hpp"

using namespace dgm;
using nn::Activation;

TEST(Nn, ParamCounts) {
  EXPECT_EQ(nn::param_count({{1, 1}}), 2u);
  EXPECT_EQ(nn::param_count({{2, 128, 128, 2}}), 17154u);
  EXPECT_EQ(12 * nn::param_count({{2, 128, 128, 2}}), 205848u);
}

TEST(Nn, InitMatchesCountAndBounds) {
  const nn::MlpSpec spec{{2, 128, 128, 2}, Activation::LeakyRelu};
  const auto store = nn::init(spec, 1);
  EXPECT_EQ(store.scalar_count(), nn::param_count(spec));
  const double a0 = std::sqrt(6.0 / 130.0);
  for (double w : store["l0.weight"].values()) EXPECT_LE(std::abs(w), a0);
  const double a1 = std::sqrt(6.0 / 256.0);
  for (double w : store["l1.weight"].values()) EXPECT_LE(std::abs(w), a1);
  for (double b : store["l2.bias"].values()) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(nn::init({{1, 1}}, 3)["l0.bias"].item(), 0.0);
}

TEST(Nn, InitDeterministic) {
  const nn::MlpSpec spec{{3, 5, 2}};
  EXPECT_EQ(nn::init(spec, 42), nn::init(spec, 42));
  EXPECT_FALSE(nn::init(spec, 42) == nn::init(spec, 43));
}

TEST(Nn, InvalidSpecs) {
  EXPECT_THROW(nn::validate({{3}}), DomainError);
  EXPECT_THROW(nn::validate({{3, 0, 1}}), DomainError);
  EXPECT_THROW(nn::validate({{3, 1}, Activation::Relu, 0.01, Activation::Tanh}), DomainError);
}

TEST(Nn, ZeroWeightsGiveZero) {
  const nn::MlpSpec spec{{2, 4, 3}};
  auto store = nn::init(spec, 0);
  for (auto& e : store) e.value = Tensor(e.value.shape());
  const Tensor out = nn::mlp_forward(store, spec, Tensor::matrix(2, 2, {1, 2, -3, 4}));
  EXPECT_EQ(out, Tensor(Shape{2, 3}));
}

TEST(Nn, IdentityLayerReturnsInput) {
  const nn::MlpSpec spec{{2, 2}};
  ParamStore store;
  store.add("l0.weight", Tensor::matrix(2, 2, {1, 0, 0, 1}));
  store.add("l0.bias", Tensor(Shape{2}));
  const Tensor x = Tensor::matrix(3, 2, {1, -2, 3.5, 4, 0, 7});
  EXPECT_EQ(nn::mlp_forward(store, spec, x), x);
}

TEST(Nn, WidthMismatchRejected) {
  const nn::MlpSpec spec{{2, 2}};
  const auto store = nn::init(spec, 0);
  EXPECT_THROW(nn::mlp_forward(store, spec, Tensor(Shape{1, 3})), ShapeError);
}

// Explicit-loop evaluation of a [2,8,2] leaky-relu net.
TEST(Nn, MatchesLoopImplementation) {
  const nn::MlpSpec spec{{2, 8, 2}, Activation::LeakyRelu, 0.2};
  auto store = nn::init(spec, 8);
  Rng rng(1);
  for (double& b : store["l0.bias"].values()) b = rng.normal();
  for (double& b : store["l1.bias"].values()) b = rng.normal();
  const Tensor x = data::sample_latent(2, 5, rng);
  const Tensor got = nn::mlp_forward(store, spec, x);
  const Tensor& w0 = store["l0.weight"];
  const Tensor& b0 = store["l0.bias"];
  const Tensor& w1 = store["l1.weight"];
  const Tensor& b1 = store["l1.bias"];
  for (std::size_t r = 0; r < 5; ++r) {
    double h[8];
    for (int j = 0; j < 8; ++j) {
      double a = b0[j];
      for (int i = 0; i < 2; ++i) a += w0.at(j, i) * x.at(r, i);
      h[j] = a > 0 ? a : 0.2 * a;
    }
    for (int k = 0; k < 2; ++k) {
      double o = b1[k];
      for (int j = 0; j < 8; ++j) o += w1.at(k, j) * h[j];
      EXPECT_NEAR(got.at(r, k), o, 1e-14);
    }
  }
}

TEST(Nn, SigmoidOutputBounded) {
  const nn::MlpSpec spec{{2, 16, 3}, Activation::Relu, 0.01, Activation::Sigmoid};
  auto store = nn::init(spec, 2);
  for (auto& e : store) {
    for (double& v : e.value.values()) v *= 30.0;
  }
  Rng rng(2);
  const Tensor x = 10.0 * data::sample_latent(2, 200, rng);
  const Tensor out = nn::mlp_forward(store, spec, x);
  for (double v : out.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Nn, BatchEqualsRowByRow) {
  const nn::MlpSpec spec{{3, 7, 7, 2}, Activation::Tanh};
  const auto store = nn::init(spec, 6);
  Rng rng(4);
  const Tensor x = data::sample_latent(3, 9, rng);
  const Tensor batch = nn::mlp_forward(store, spec, x);
  for (std::size_t r = 0; r < 9; ++r) {
    const Tensor single = nn::mlp_forward(store, spec, Tensor(Shape{1, 3}, x.row(r)));
    EXPECT_EQ(single.row(0), batch.row(r));
  }
}
