#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/gan.hpp"
#include "dgm/ops.hpp"
#include "dgm/vae.hpp"

using namespace dgm;
using namespace dgm::gan;

namespace {

GanSpec small_spec(Variant v) {
  GanSpec s;
  s.variant = v;
  s.g_hidden = 6;
  s.d_hidden = 5;
  return s;
}

void zero(ParamStore& p) {
  for (auto& e : p) e.value = Tensor(e.value.shape());
}

Tensor normals(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  return data::sample_latent(cols, rows, rng);
}

ParamStore with_random_biases(ParamStore p, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& e : p) {
    if (e.name.ends_with("bias")) {
      for (double& v : e.value.values()) v = 0.3 * rng.normal();
    }
  }
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One-dimensional discriminator with logit 60·x for x > 0 and 60·x·… mirrored.
GanModel separating_model() {
  GanSpec spec = small_spec(Variant::Bce);
  spec.data_dim = 1;
  spec.latent_dim = 1;
  spec.d_hidden = 2;
  spec.d_depth = 1;
  GanModel m = init(spec, 1);
  zero(m.g);
  zero(m.d);
  m.g["g.l2.bias"] = Tensor::vector({-1.0});
  m.d["d.l0.weight"] = Tensor::matrix(2, 1, {1.0, -1.0});
  m.d["d.l1.weight"] = Tensor::matrix(1, 2, {50.0, -50.0});
  return m;
}

}  // namespace

TEST(Gan, ConfusedDiscriminator) {
  const GanSpec spec = small_spec(Variant::Bce);
  GanModel m = init(spec, 1);
  zero(m.d);
  const double j = gan_objective(eager(m.d), eager(m.g), spec, normals(8, 2, 1), normals(8, 2, 2)).item();
  EXPECT_NEAR(j, 2.0 * std::log(0.5), 1e-15);
}

TEST(Gan, PerfectDiscriminatorApproachesZero) {
  GanSpec spec = small_spec(Variant::Bce);
  spec.data_dim = spec.latent_dim = 1;
  spec.d_hidden = 2;
  spec.d_depth = 1;
  const GanModel m = separating_model();
  const double j = gan_objective(eager(m.d), eager(m.g), spec, full(4, 1, 1.0), normals(4, 1, 3)).item();
  EXPECT_LT(j, 0.0);
  EXPECT_GT(j, -1e-6);
}

TEST(Gan, ObjectivePermutationInvariant) {
  const GanSpec spec = small_spec(Variant::Bce);
  const GanModel m{with_random_biases(init(spec, 2).g, 3), with_random_biases(init(spec, 2).d, 4)};
  const Tensor x = normals(6, 2, 5), z = normals(6, 2, 6);
  const std::vector<std::size_t> perm{3, 1, 5, 0, 2, 4};
  const double a = gan_objective(eager(m.d), eager(m.g), spec, x, z).item();
  const double b = gan_objective(eager(m.d), eager(m.g), spec, gather_rows(x, perm), gather_rows(z, perm)).item();
  EXPECT_NEAR(a, b, 1e-15);
}

TEST(Gan, ModeChecks) {
  const GanSpec bce = small_spec(Variant::Bce), wgan = small_spec(Variant::Wgan);
  const GanModel mb = init(bce, 1), mw = init(wgan, 1);
  const Tensor x = normals(4, 2, 1);
  EXPECT_THROW(gan_objective(eager(mw.d), eager(mw.g), wgan, x, x), DomainError);
  EXPECT_THROW(critic_objective(eager(mb.d), eager(mb.g), bce, x, x), DomainError);
  GanConfig cfg;
  cfg.n_critic = 0;
  EXPECT_THROW(cfg.validate(Variant::Bce), DomainError);
  cfg = GanConfig{};
  cfg.clip = 0.0;
  EXPECT_THROW(cfg.validate(Variant::Wgan), DomainError);
}

TEST(Gan, ConstantDiscriminatorGivesNoGeneratorGradient) {
  for (auto v : {Variant::Bce, Variant::Wgan}) {
    const GanSpec spec = small_spec(v);
    GanModel m = init(spec, 1);
    zero(m.d);
    m.d["d.l2.bias"] = Tensor::vector({0.3});
    Tape tape;
    const auto d = tape.bind(m.d);
    const auto g = tape.bind(m.g);
    const Var loss = generator_loss(d, g, spec, normals(8, 2, 7), true);
    const auto grads = tape.backward(loss);
    for (const auto& e : m.g) {
      for (double x : grads[e.name].values()) EXPECT_EQ(x, 0.0) << e.name;
    }
    if (v == Variant::Wgan) {
      EXPECT_EQ(critic_objective(eager(m.d), eager(m.g), spec, normals(8, 2, 8), normals(8, 2, 9)).item(), 0.0);
    }
  }
}

TEST(Gan, CriticObjectiveZeroOnIdenticalBatches) {
  const GanSpec spec = small_spec(Variant::Wgan);
  GanModel m{init(spec, 1).g, with_random_biases(init(spec, 1).d, 2)};
  zero(m.g);
  m.g["g.l2.bias"] = Tensor::vector({0.4, -0.7});
  const Tensor x = repeat_rows(Tensor::vector({0.4, -0.7}), 5);
  EXPECT_EQ(critic_objective(eager(m.d), eager(m.g), spec, x, normals(5, 2, 3)).item(), 0.0);
}

TEST(Gan, GradChecks) {
  for (auto v : {Variant::Bce, Variant::Wgan}) {
    const GanSpec spec = small_spec(v);
    const GanModel m0 = init(spec, 11);
    const ParamStore all = with_random_biases(merged(m0), 12);
    const Tensor x = normals(4, 2, 13), z = normals(4, 2, 14);
    const auto r = grad_check(
        [&](Tape&, const Bound<Var>& p) {
          return v == Variant::Bce ? gan_objective(p, p, spec, x, z) : critic_objective(p, p, spec, x, z);
        },
        all);
    EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param << "[" << r.worst_index << "]";
    const auto rg = grad_check([&](Tape&, const Bound<Var>& p) { return generator_loss(p, p, spec, z, false); }, all);
    EXPECT_LT(rg.max_rel_error, 1e-5) << rg.worst_param;
  }
}

TEST(Gan, BceStepLogsObjectiveOfPreStepModel) {
  const GanSpec spec = small_spec(Variant::Bce);
  GanModel m = init(spec, 21);
  const GanModel before = m;
  GanConfig cfg;
  cfg.batch = 16;
  auto opt = make_optimizers(cfg);
  data::BatchSource src(data::DatasetSpec{});
  Rng rng(22);
  Rng replay = rng;
  const StepLog log = bce_step(m, spec, cfg, opt, src, rng);
  const Tensor x = src.next(cfg.batch, replay);
  const Tensor z = data::sample_latent(2, cfg.batch, replay);
  EXPECT_EQ(log.loss_d, gan_objective(eager(before.d), eager(before.g), spec, x, z).item());
  // the generator step saw the updated discriminator
  const Tensor z2 = data::sample_latent(2, cfg.batch, replay);
  EXPECT_EQ(log.loss_g, generator_loss(eager(m.d), eager(before.g), spec, z2, true).item());
  EXPECT_NE(m.d["d.l0.weight"], before.d["d.l0.weight"]);
  EXPECT_NE(m.g["g.l0.weight"], before.g["g.l0.weight"]);
  EXPECT_EQ(m.d.size(), before.d.size());
}

TEST(Gan, WganStepKeepsWeightsClipped) {
  const GanSpec spec = small_spec(Variant::Wgan);
  GanModel m = init(spec, 31);
  GanConfig cfg;
  cfg.n_critic = 5;
  cfg.clip = 0.01;
  cfg.lr_d = cfg.lr_g = 0.05;
  auto opt = make_optimizers(cfg);
  data::BatchSource src(data::DatasetSpec{});
  Rng rng(32);
  for (int s = 0; s < 5; ++s) {
    wgan_step(m, spec, cfg, opt, src, rng);
    for (const auto& e : m.d) {
      for (double v : e.value.values()) EXPECT_LE(std::abs(v), cfg.clip);
    }
  }
  EXPECT_EQ(opt.rms_d.s.size(), m.d.size());
}

TEST(Gan, AscentFindsOptimalDiscriminatorOnPointMasses) {
  // Data: ½δ(1) + ½δ(−1). Fakes: δ(−1). Pointwise optimum
  // d*(1) = 1, d*(−1) = ½ / (½ + 1) = 1/3.
  GanSpec spec = small_spec(Variant::Bce);
  spec.data_dim = spec.latent_dim = 1;
  spec.d_hidden = 8;
  spec.d_depth = 1;
  GanModel m = init(spec, 41);
  zero(m.g);
  m.g["g.l2.bias"] = Tensor::vector({-1.0});
  const Tensor x = Tensor::matrix(2, 1, {1.0, -1.0});
  const Tensor z = Tensor::matrix(2, 1, {0.0, 0.0});
  optim::AdamState adam;
  adam.lr = 0.01;
  for (int k = 0; k < 4000; ++k) {
    Tape tape;
    const auto d = tape.bind(m.d);
    const auto g = tape.bind(m.g);
    const auto grads = tape.backward(gan_objective(d, g, spec, x, z));
    optim::adam_step(adam, m.d, optim::restrict_to(grads.named(), m.d), true);
  }
  const Tensor p = discriminate(eager(m.d), spec, Tensor::matrix(2, 1, {1.0, -1.0}));
  EXPECT_NEAR(p[0], 1.0, 1e-2);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-2);
}

TEST(Gan, WarmStartFromVae) {
  vae::VaeSpec vs;
  vs.hidden = 6;
  GanSpec spec = small_spec(Variant::Bce);
  const ParamStore vp = vae::init(vs, 51);
  GanModel m = init(spec, 52);
  warm_start(m, vp);
  for (const auto& e : m.g) EXPECT_EQ(e.value, vp[e.name]);
  vs.hidden = 7;
  try {
    warm_start(m, vae::init(vs, 53));
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[7, 2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[6, 2]"), std::string::npos) << msg;
  }
}

TEST(Gan, MergeSplitRoundTrip) {
  const GanModel m = init(small_spec(Variant::Wgan), 61);
  const GanModel back = split(merged(m));
  ASSERT_EQ(back.g.size(), m.g.size());
  ASSERT_EQ(back.d.size(), m.d.size());
  for (const auto& e : m.g) EXPECT_EQ(back.g[e.name], e.value);
  for (const auto& e : m.d) EXPECT_EQ(back.d[e.name], e.value);
}

TEST(Gan, TrainZeroStepsLeavesModel) {
  const GanSpec spec = small_spec(Variant::Bce);
  GanModel m = init(spec, 71);
  const GanModel before = m;
  GanConfig cfg;
  auto opt = make_optimizers(cfg);
  data::BatchSource src(data::DatasetSpec{});
  Rng rng(1), eval_rng(2);
  TrainOptions o;
  o.steps = 0;
  o.energy_samples = 50;
  o.collapse_samples = 20;
  const auto rows = train(m, spec, cfg, opt, src, rng, eval_rng, o);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0].energy_stat.has_value());
  for (const auto& e : m.g) EXPECT_EQ(e.value, before.g[e.name]);
}

TEST(Gan, TrainingLogIsDeterministic) {
  const GanSpec spec = small_spec(Variant::Wgan);
  GanConfig cfg;
  cfg.n_critic = 2;
  cfg.batch = 8;
  TrainOptions o;
  o.steps = 7;
  o.energy_every = 3;
  o.energy_samples = 40;
  o.collapse_samples = 16;
  std::string logs[2];
  for (int run = 0; run < 2; ++run) {
    GanModel m = init(spec, 81);
    auto opt = make_optimizers(cfg);
    data::BatchSource src(data::DatasetSpec{});
    Rng rng(5), eval_rng(6);
    o.log_path = ::testing::TempDir() + "gan_log_" + std::to_string(run) + ".csv";
    train(m, spec, cfg, opt, src, rng, eval_rng, o);
    logs[run] = slurp(o.log_path);
  }
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_EQ(logs[0].substr(0, logs[0].find('\n')), "step,loss_d,loss_g,energy_stat,collapse_flag");
  EXPECT_EQ(std::count(logs[0].begin(), logs[0].end(), '\n'), 9);
}

TEST(Gan, CollapsedGeneratorIsFlagged) {
  const GanSpec spec = small_spec(Variant::Bce);
  GanModel m = init(spec, 91);
  zero(m.g);
  GanConfig cfg;
  cfg.lr_g = 1e-12;
  auto opt = make_optimizers(cfg);
  data::BatchSource src(data::DatasetSpec{});
  Rng rng(1), eval_rng(2);
  TrainOptions o;
  o.steps = 1;
  o.energy_samples = 50;
  o.collapse_samples = 30;
  const auto rows = train(m, spec, cfg, opt, src, rng, eval_rng, o);
  EXPECT_TRUE(rows.front().collapse.value());
  EXPECT_GT(mean_pairwise_distance(src.draw(30, rng)), 0.1);
}
