#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include <json.hpp>

#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/eval.hpp"
#include "dgm/ops.hpp"

using namespace dgm;
using namespace dgm::eval;

namespace {

Tensor normals(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return data::sample_latent(cols, rows, rng);
}

double brute_force_w1(const Tensor& x, const Tensor& y) {
  std::vector<std::size_t> perm(x.rows());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) s += std::pow(x.at(i, k) - y.at(perm[i], k), 2);
      c += std::sqrt(s);
    }
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(x.rows());
}

Tensor rotate(const Tensor& x, double angle) {
  Tensor out(x.shape());
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    out.at(r, 0) = c * x.at(r, 0) - s * x.at(r, 1);
    out.at(r, 1) = s * x.at(r, 0) + c * x.at(r, 1);
  }
  return out;
}

}  // namespace

TEST(Energy, HandCases) {
  const Tensor x = normals(50, 3, 1);
  EXPECT_EQ(energy_statistic(x, x), 0.0);
  EXPECT_EQ(energy_statistic(Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {1.0})), 1.0);
  // a = 2, b = 1 in 1D: x = {0, 2}, y = {1}: cross 2, self_x 4, self_y 0
  // → (2/3)·(2·2/2 − 4/4) = 2/3
  EXPECT_NEAR(energy_statistic(Tensor::matrix(2, 1, {0.0, 2.0}), Tensor::matrix(1, 1, {1.0})), 2.0 / 3.0, 1e-15);
}

TEST(Energy, SymmetricAndNonNegative) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = normals(20 + s, 2, 10 + s), y = normals(30, 2, 40 + s);
    const double e = energy_statistic(x, y);
    EXPECT_EQ(e, energy_statistic(y, x));
    EXPECT_GE(e, 0.0);
  }
  EXPECT_THROW(energy_statistic(normals(3, 2, 1), normals(3, 3, 1)), ShapeError);
  EXPECT_THROW(energy_statistic(Tensor(Shape{0, 2}), normals(3, 2, 1)), ShapeError);
}

TEST(Energy, RotationInvariant) {
  Rng rng(5);
  for (int t = 0; t < 5; ++t) {
    const Tensor x = normals(40, 2, 60 + t), y = normals(25, 2, 70 + t);
    const double angle = 6.28 * rng.uniform();
    EXPECT_NEAR(energy_statistic(rotate(x, angle), rotate(y, angle)), energy_statistic(x, y), 1e-9);
  }
}

TEST(Energy, SameDistributionIsMuchSmaller) {
  Rng rng(6);
  const Tensor a = data::sample_moons(2000, 0.1, rng);
  const Tensor b = data::sample_moons(2000, 0.1, rng);
  const Tensor g = data::sample_latent(2, 2000, rng);
  EXPECT_LT(10.0 * energy_statistic(a, b), energy_statistic(a, g));
}

TEST(Energy, ThreadCountDoesNotChangeResult) {
  const Tensor x = normals(700, 2, 7), y = normals(600, 2, 8);
  ::setenv("DGM_THREADS", "1", 1);
  const double one = energy_statistic(x, y);
  ::setenv("DGM_THREADS", "4", 1);
  const double four = energy_statistic(x, y);
  ::unsetenv("DGM_THREADS");
  EXPECT_EQ(one, four);
}

TEST(ExactW1, HandCases) {
  const Tensor x = normals(10, 2, 9);
  EXPECT_EQ(exact_w1(x, x), 0.0);
  EXPECT_EQ(exact_w1(Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {1.0})), 1.0);
  EXPECT_THROW(exact_w1(normals(3, 2, 1), normals(4, 2, 1)), DomainError);
  EXPECT_THROW(exact_w1(normals(513, 1, 1), normals(513, 1, 2)), DomainError);
}

TEST(ExactW1, MatchesPermutationBruteForce) {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const std::size_t a = 1 + rng.below(6);
    const Tensor x = normals(a, 2, 100 + t), y = normals(a, 2, 300 + t);
    EXPECT_NEAR(exact_w1(x, y), brute_force_w1(x, y), 1e-12);
  }
}

TEST(ExactW1, TriangleInequality) {
  for (int t = 0; t < 20; ++t) {
    const Tensor x = normals(12, 2, 500 + t), y = normals(12, 2, 600 + t), z = normals(12, 2, 700 + t);
    EXPECT_LE(exact_w1(x, z), exact_w1(x, y) + exact_w1(y, z) + 1e-9);
  }
}

TEST(ExactW1, PermutedCopyIsZero) {
  const Tensor x = normals(200, 2, 11);
  std::vector<std::size_t> idx(200);
  std::iota(idx.rbegin(), idx.rend(), 0);
  EXPECT_NEAR(exact_w1(x, gather_rows(x, idx)), 0.0, 1e-15);
}

TEST(InverseConsistency, IdentityAndShift) {
  const Tensor z = normals(5, 2, 12);
  const auto id = [](const Tensor& t) { return t; };
  const auto r = inverse_consistency(id, id, z, z);
  EXPECT_EQ(r.latent_max, 0.0);
  EXPECT_EQ(r.data_mean, 0.0);
  // inverse off by a constant 0.1 in one coordinate
  const auto fwd = [](const Tensor& t) { return t; };
  const auto bad = [](const Tensor& t) {
    Tensor o = t;
    for (std::size_t r = 0; r < o.rows(); ++r) o.at(r, 0) += 0.1;
    return o;
  };
  const auto e = inverse_consistency(fwd, bad, z, z);
  EXPECT_NEAR(e.latent_max, 0.1, 1e-12);
  EXPECT_NEAR(e.data_mean, 0.1, 1e-12);
}

TEST(Moments, StandardNormalAndMoons) {
  const Tensor g = normals(1000000, 2, 13);
  const auto d = moment_diagnostics(g, MomentTarget::StandardNormal);
  EXPECT_LT(d.max_abs_mean, 0.005);
  EXPECT_LT(d.max_abs_cov, 0.01);
  const auto m = data::moons_moments(0.0);
  EXPECT_DOUBLE_EQ(m.mean[0], 0.5);
  EXPECT_DOUBLE_EQ(m.mean[1], 0.25);
  const auto one = moment_diagnostics(Tensor::matrix(1, 2, {0.5, 0.25}), MomentTarget::Moons, 0.0);
  EXPECT_EQ(one.max_abs_mean, 0.0);
  EXPECT_EQ(one.cov_delta[0], -m.cov[0]);
  EXPECT_THROW(moment_diagnostics(Tensor(Shape{0, 2}), MomentTarget::StandardNormal), DomainError);
}

TEST(Report, JsonSchema) {
  EvalReport r;
  r.model = "realnvp";
  r.energy_samples = 10;
  r.energy_stat = 0.25;
  r.nll = 1.5;
  r.inverse = RoundTrip{1e-12, 1e-13, 2e-12, 3e-13};
  const auto j = nlohmann::json::parse(to_json(r));
  EXPECT_EQ(j["model"], "realnvp");
  EXPECT_EQ(j["energy_stat"].get<double>(), 0.25);
  EXPECT_TRUE(j["exact_w1"].is_null());
  EXPECT_EQ(j["nll"].get<double>(), 1.5);
  EXPECT_EQ(j["inverse"]["data_max"].get<double>(), 2e-12);
  EXPECT_TRUE(j["moments"].is_null());
}
