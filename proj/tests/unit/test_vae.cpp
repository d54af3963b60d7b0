#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/ops.hpp"
#include "dgm/vae.hpp"

using namespace dgm;
using namespace dgm::vae;

namespace {

VaeSpec small_spec(Likelihood::Kind kind = Likelihood::Kind::Gaussian) {
  VaeSpec s;
  s.hidden = 6;
  s.likelihood.kind = kind;
  return s;
}

void zero_prefix(ParamStore& p, const std::string& prefix) {
  for (auto& e : p) {
    if (e.name.starts_with(prefix)) e.value = Tensor(e.value.shape());
  }
}

ParamStore randomized(const VaeSpec& spec, std::uint64_t seed) {
  ParamStore p = init(spec, seed);
  Rng rng(seed + 1);
  for (auto& e : p) {
    if (e.name.ends_with("bias")) {
      for (double& v : e.value.values()) v = 0.3 * rng.normal();
    }
  }
  return p;
}

Tensor normals(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return data::sample_latent(cols, rows, rng);
}

// E_{z~q}[log q(z) − log p(z)] by direct sampling, one latent coordinate
// at a time since both densities factorize.
double kl_monte_carlo(const std::vector<double>& mu, const std::vector<double>& logvar, std::size_t draws,
                      std::uint64_t seed) {
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    const double sd = std::exp(0.5 * logvar[j]);
    double acc = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
      const double e = rng.normal();
      const double z = mu[j] + sd * e;
      acc += (-0.5 * e * e - std::log(sd)) - (-0.5 * z * z);
    }
    total += acc / static_cast<double>(draws);
  }
  return total;
}

}  // namespace

TEST(Vae, ParameterCount) {
  const VaeSpec spec;
  EXPECT_EQ(param_count(spec), init(spec, 1).scalar_count());
  VaeSpec linear = small_spec();
  linear.depth = 0;
  // heads 2·(2·2+2) and generator 2·2+2
  EXPECT_EQ(param_count(linear), 18u);
}

TEST(Vae, ZeroEncoderGivesPrior) {
  const VaeSpec spec = small_spec();
  ParamStore p = init(spec, 3);
  zero_prefix(p, "e.");
  const auto post = encode(eager(p), spec, normals(5, 2, 1));
  for (double v : post.mu.values()) EXPECT_EQ(v, 0.0);
  for (double v : post.logvar.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(encode(eager(p), spec, normals(5, 3, 1)), ShapeError);
}

TEST(Vae, EncoderRowsIndependent) {
  const VaeSpec spec = small_spec();
  const ParamStore p = randomized(spec, 4);
  const Tensor x = normals(7, 2, 2);
  const auto all = encode(eager(p), spec, x);
  for (std::size_t r = 0; r < 7; ++r) {
    const auto one = encode(eager(p), spec, gather_rows(x, {r}));
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(one.mu.at(0, j), all.mu.at(r, j));
      EXPECT_EQ(one.logvar.at(0, j), all.logvar.at(r, j));
    }
  }
}

TEST(Vae, ReparamCases) {
  const Tensor mu = normals(4, 2, 5), logvar = normals(4, 2, 6), eps = normals(4, 2, 7);
  EXPECT_EQ(reparam_sample(mu, logvar, Tensor(Shape{4, 2})), mu);
  EXPECT_EQ(reparam_sample(Tensor(Shape{4, 2}), Tensor(Shape{4, 2}), eps), eps);
  EXPECT_THROW(reparam_sample(mu, logvar, Tensor(Shape{4, 3})), ShapeError);
}

TEST(Vae, ReparamVariance) {
  const std::size_t n = 1000000;
  const Tensor z = reparam_sample(Tensor(Shape{n, 1}), full(n, 1, std::log(4.0)), normals(n, 1, 8));
  double s = 0.0, s2 = 0.0;
  for (double v : z.values()) {
    s += v;
    s2 += v * v;
  }
  const double m = s / n;
  EXPECT_NEAR(s2 / n - m * m, 4.0, 0.05);
}

TEST(Vae, KlClosedForm) {
  EXPECT_EQ(kl_gaussian(Tensor(Shape{3, 2}), Tensor(Shape{3, 2})), Tensor(Shape{3, 1}));
  EXPECT_DOUBLE_EQ(kl_gaussian(Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {0.0})).item(), 0.5);
  const Tensor kl = kl_gaussian(normals(50, 3, 9), normals(50, 3, 10));
  for (double v : kl.values()) EXPECT_GT(v, 0.0);
}

TEST(Vae, KlMatchesMonteCarlo) {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> mu{rng.normal(), rng.normal()}, lv{rng.normal(), rng.normal()};
    const double kl = kl_gaussian(Tensor::matrix(1, 2, {mu[0], mu[1]}), Tensor::matrix(1, 2, {lv[0], lv[1]})).item();
    EXPECT_NEAR(kl_monte_carlo(mu, lv, 1000000, 100 + trial), kl, 0.005 * kl);
  }
}

TEST(Vae, ReconCases) {
  Likelihood g;
  const Tensor x = normals(3, 4, 12);
  const Tensor r = recon_loss(g, x, x);
  for (double v : r.values()) EXPECT_DOUBLE_EQ(v, 2.0 * std::log(2.0 * std::numbers::pi * 0.05));
  // one unit offset in one coordinate adds 1/(2σ)
  Tensor xh = x;
  xh.at(0, 0) += 1.0;
  EXPECT_NEAR(recon_loss(g, x, xh)[0] - r[0], 10.0, 1e-12);

  Likelihood b;
  b.kind = Likelihood::Kind::Bernoulli;
  Rng rng(13);
  Tensor bits(Shape{3, 10});
  for (double& v : bits.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  const Tensor half = recon_loss(b, bits, full(3, 10, 0.5));
  for (double v : half.values()) EXPECT_NEAR(v, 10 * std::log(2.0), 1e-12);
  Tensor exact = bits;
  for (double& v : exact.values()) v = v == 1.0 ? 1.0 - 1e-7 : 1e-7;
  const Tensor near_exact = recon_loss(b, bits, exact);
  for (double v : near_exact.values()) EXPECT_LT(v, 10 * 1e-6);
  // clamping keeps the loss finite at 0 and 1
  const Tensor saturated = recon_loss(b, bits, Tensor(Shape{3, 10}));
  for (double v : saturated.values()) EXPECT_TRUE(std::isfinite(v));
  Tensor bad = bits;
  bad[0] = 1.5;
  EXPECT_THROW(recon_loss(b, bad, full(3, 10, 0.5)), DomainError);
  Likelihood neg_sigma;
  neg_sigma.sigma = 0.0;
  EXPECT_THROW(recon_loss(neg_sigma, x, x), DomainError);
}

TEST(Vae, ElboPriorAndConstantGenerator) {
  VaeSpec spec = small_spec(Likelihood::Kind::Bernoulli);
  spec.data_dim = 12;
  ParamStore p = init(spec, 14);
  zero_prefix(p, "e.");
  zero_prefix(p, "g.");  // sigmoid(0) = 0.5
  Rng rng(15);
  Tensor x(Shape{6, 12});
  for (double& v : x.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  const auto e = elbo_loss(eager(p), spec, x, rng);
  EXPECT_NEAR(e.total.item(), 12 * std::log(2.0), 1e-12);
  EXPECT_EQ(e.kl.item(), 0.0);
}

TEST(Vae, ElboParts) {
  const VaeSpec spec = small_spec();
  const ParamStore p = randomized(spec, 16);
  const Tensor x = normals(8, 2, 17), eps = normals(8, 2, 18);
  const auto e = elbo_loss(eager(p), spec, x, eps);
  const auto post = encode(eager(p), spec, x);
  EXPECT_EQ(e.kl.item(), mean(kl_gaussian(post.mu, post.logvar)).item());
  EXPECT_GE(e.total.item(), e.recon.item());
  EXPECT_EQ(e.total.item(), e.recon.item() + e.kl.item());
  EXPECT_THROW(elbo_loss(eager(p), spec, Tensor(Shape{0, 2}), Tensor(Shape{0, 2})), ShapeError);
}

TEST(Vae, ElboGradCheck) {
  for (auto kind : {Likelihood::Kind::Gaussian, Likelihood::Kind::Bernoulli}) {
    const VaeSpec spec = small_spec(kind);
    const ParamStore p = randomized(spec, 19);
    Tensor x = normals(4, 2, 20);
    if (kind == Likelihood::Kind::Bernoulli) {
      for (double& v : x.values()) v = v > 0 ? 1.0 : 0.0;
    }
    const Tensor eps = normals(4, 2, 21);
    const auto r = grad_check([&](Tape&, const Bound<Var>& bp) { return elbo_loss(bp, spec, x, eps).total; }, p);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param << "[" << r.worst_index << "]";
  }
}

TEST(Vae, ElboBoundsLinearGaussianNll) {
  // x = a z + b + noise of variance σ, so p(x) = N(b, a² + σ) exactly.
  VaeSpec spec = small_spec();
  spec.data_dim = 1;
  spec.latent_dim = 1;
  spec.depth = 0;
  spec.likelihood.sigma = 0.3;
  ParamStore p = init(spec, 22);
  zero_prefix(p, "e.");
  const double a = 1.7, b = -0.4;
  p["g.l0.weight"] = Tensor::matrix(1, 1, {a});
  p["g.l0.bias"] = Tensor::vector({b});
  const double var = a * a + 0.3;
  Rng rng(23);
  for (int batch = 0; batch < 5; ++batch) {
    Tensor x(Shape{4, 1});
    for (double& v : x.values()) v = b + std::sqrt(var) * rng.normal();
    double nll = 0.0;
    for (double v : x.values()) nll += 0.5 * (v - b) * (v - b) / var + 0.5 * std::log(2 * std::numbers::pi * var);
    nll /= 4.0;
    // average the single-draw estimator to approach its expectation
    double loss = 0.0;
    const int draws = 20000;
    for (int k = 0; k < draws; ++k) loss += elbo_loss(eager(p), spec, x, rng).total.item();
    EXPECT_GE(loss / draws - nll, 0.0);
  }
}

TEST(Vae, PosteriorGridConstantGenerator) {
  VaeSpec spec = small_spec();
  ParamStore p = init(spec, 24);
  zero_prefix(p, "g.");
  const Grid grid{-3, 3, -3, 3, 7, 7};
  const auto pg = posterior_grid(p, spec, Tensor::matrix(1, 2, {0.5, 0.5}), grid);
  EXPECT_EQ(pg.map_z0, 0.0);
  EXPECT_EQ(pg.map_z1, 0.0);
  // posterior ∝ prior: differences follow −½‖z‖²
  const Tensor z = grid.points();
  EXPECT_NEAR(pg.log_posterior[0] - pg.log_posterior[pg.argmax], -0.5 * (z.at(0, 0) * z.at(0, 0) + z.at(0, 1) * z.at(0, 1)),
              1e-12);
}

TEST(Vae, PosteriorGridMapAgreesWithFinerGrid) {
  const VaeSpec spec = small_spec();
  const ParamStore p = randomized(spec, 25);
  const Tensor x = Tensor::matrix(1, 2, {0.8, -0.3});
  const Grid coarse{-3, 3, -3, 3, 30, 30};
  const Grid fine{-3, 3, -3, 3, 300, 300};
  const auto c = posterior_grid(p, spec, x, coarse);
  const auto f = posterior_grid(p, spec, x, fine);
  EXPECT_LE(std::abs(c.map_z0 - f.map_z0), coarse.dx());
  EXPECT_LE(std::abs(c.map_z1 - f.map_z1), coarse.dy());
}

TEST(Vae, PosteriorGridRejectsOtherLatentSizes) {
  VaeSpec spec = small_spec();
  spec.latent_dim = 3;
  const ParamStore p = init(spec, 26);
  EXPECT_THROW(posterior_grid(p, spec, Tensor::matrix(1, 2, {0.0, 0.0}), Grid{}), DomainError);
}
