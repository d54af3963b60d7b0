#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>

#include "dgm/cnf.hpp"
#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/ops.hpp"

using namespace dgm;
using namespace dgm::cnf;

namespace {

Tensor row_of(const Tensor& x, std::size_t r) { return gather_rows(x, {r}); }

CnfSpec small_potential(std::size_t width = 6) {
  CnfSpec s;
  s.width = width;
  return s;
}

CnfSpec small_free_form(nn::Activation act = nn::Activation::Tanh) {
  CnfSpec s;
  s.mode = Mode::FreeForm;
  s.hidden = 8;
  s.activation = act;
  return s;
}

// Perturbs every entry so no term of the potential vanishes.
ParamStore randomized(const CnfSpec& spec, std::uint64_t seed, double scale = 0.4) {
  ParamStore p = init(spec, seed);
  Rng rng(seed + 7);
  for (auto& e : p) {
    for (double& v : e.value.values()) v += scale * rng.normal();
  }
  return p;
}

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x(Shape{rows, cols});
  rng.fill_normal(x.values());
  return x;
}

double phi_at(const ParamStore& p, const CnfSpec& spec, Tensor s) {
  return potential(eager(p), spec, s).item();
}

// Free-form mode with a zero network except for a constant output bias.
ParamStore constant_velocity(const CnfSpec& spec, std::vector<double> c) {
  ParamStore p = init(spec, 3);
  for (auto& e : p) e.value = Tensor(e.value.shape());
  const std::size_t last = spec.velocity_net().layer_count() - 1;
  Tensor b(Shape{c.size()});
  for (std::size_t i = 0; i < c.size(); ++i) b[i] = c[i];
  p[nn::bias_name("v.", last)] = b;
  return p;
}

// One-dimensional free-form net whose velocity is exactly a·y: identity
// hidden layer is not available, so use relu on (y, -y) split.
ParamStore linear_velocity_1d(const CnfSpec& spec, double a) {
  ParamStore p = init(spec, 3);
  for (auto& e : p) e.value = Tensor(e.value.shape());
  // relu(y) - relu(-y) = y
  Tensor w0 = p[nn::weight_name("v.", 0)];
  w0.at(0, 0) = 1.0;
  w0.at(1, 0) = -1.0;
  p[nn::weight_name("v.", 0)] = w0;
  Tensor w1 = p[nn::weight_name("v.", 1)];
  w1.at(0, 0) = 1.0;
  w1.at(1, 1) = 1.0;
  p[nn::weight_name("v.", 1)] = w1;
  Tensor w2 = p[nn::weight_name("v.", 2)];
  w2.at(0, 0) = a;
  w2.at(0, 1) = -a;
  p[nn::weight_name("v.", 2)] = w2;
  return p;
}

}  // namespace

TEST(Cnf, PotentialParameterCount) {
  CnfSpec spec;
  EXPECT_EQ(spec.effective_rank(), 3u);
  EXPECT_EQ(param_count(spec), 1229u);
  EXPECT_EQ(init(spec, 1).scalar_count(), 1229u);
  CnfSpec ff = small_free_form();
  EXPECT_EQ(param_count(ff), init(ff, 1).scalar_count());
}

TEST(Cnf, InvalidSpecs) {
  CnfSpec s;
  s.dim = 0;
  EXPECT_THROW(s.validate(), DomainError);
  s = CnfSpec{};
  s.T = 0.0;
  EXPECT_THROW(s.validate(), DomainError);
  EXPECT_THROW(mode_from_name("neural"), DomainError);
  EXPECT_EQ(mode_from_name(mode_name(Mode::FreeForm)), Mode::FreeForm);
}

TEST(Cnf, LinearPartOnlyGivesConstantVelocity) {
  CnfSpec spec = small_potential();
  ParamStore p = init(spec, 2);
  p["w"] = Tensor(Shape{spec.width});
  p["A"] = Tensor(p["A"].shape());
  p["b"] = Tensor::vector({0.3, -1.2, 0.7});
  const Tensor y = random_batch(5, 2, 4);
  const Tensor v = velocity(p, spec, y, 0.4);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_DOUBLE_EQ(v.at(r, 0), -0.3);
    EXPECT_DOUBLE_EQ(v.at(r, 1), 1.2);
  }
  const Tensor tr = trace_grad_velocity(p, spec, y, 0.4);
  for (double x : tr.values()) EXPECT_EQ(x, 0.0);
}

TEST(Cnf, PotentialGradientMatchesFiniteDifferences) {
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 11);
  const Tensor s = random_batch(4, 3, 12);
  const auto d = potential_derivatives(eager(p), spec, s, true);
  const double h = 1e-5;
  for (std::size_t r = 0; r < 4; ++r) {
    Tensor row = row_of(s, r);
    double lap = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      Tensor up = row, dn = row;
      up.at(0, j) += h;
      dn.at(0, j) -= h;
      const double fu = phi_at(p, spec, up), fd = phi_at(p, spec, dn), f0 = phi_at(p, spec, row);
      EXPECT_NEAR(d.grad.at(r, j), (fu - fd) / (2 * h), 1e-6);
      if (j < 2) lap += (fu - 2 * f0 + fd) / (h * h);
    }
    EXPECT_NEAR(d.laplacian[r], lap, 1e-3);
  }
}

TEST(Cnf, PotentialLaplacianMatchesGradientDifferences) {
  // Central differences of the analytic gradient give a tighter oracle.
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 21);
  const Tensor s = random_batch(3, 3, 22);
  const auto d = potential_derivatives(eager(p), spec, s, true);
  const double h = 1e-5;
  for (std::size_t r = 0; r < 3; ++r) {
    double lap = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      Tensor up = row_of(s, r), dn = up;
      up.at(0, j) += h;
      dn.at(0, j) -= h;
      const double gu = potential_derivatives(eager(p), spec, up, false).grad.at(0, j);
      const double gd = potential_derivatives(eager(p), spec, dn, false).grad.at(0, j);
      lap += (gu - gd) / (2 * h);
    }
    EXPECT_NEAR(d.laplacian[r], lap, 1e-6);
  }
}

TEST(Cnf, PotentialGradientMatchesTape) {
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 31);
  const Tensor s = random_batch(6, 3, 32);
  Tape tape;
  const auto bp = tape.bind(p);
  const Var sv = tape.variable(s);
  const Tensor g = tape.backward(sum(potential(bp, spec, sv))).wrt(sv);
  const Tensor a = potential_derivatives(eager(p), spec, s, false).grad;
  for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_NEAR(a[i], g[i], 1e-12);
}

TEST(Cnf, VelocityIsNegativeGradient) {
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 41);
  const Tensor y = random_batch(4, 2, 42);
  const Tensor v = velocity(p, spec, y, 0.25);
  const Tensor g = potential_derivatives(eager(p), spec, concat_cols(y, full(4, 1, 0.25)), false).grad;
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(v.at(r, j), -g.at(r, j));
  }
}

TEST(Cnf, HjbResidualOracle) {
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 51);
  const Tensor y = random_batch(4, 2, 52);
  const auto rt = rates(eager(p), spec, y, 0.6);
  const Tensor g = potential_derivatives(eager(p), spec, concat_cols(y, full(4, 1, 0.6)), false).grad;
  for (std::size_t r = 0; r < 4; ++r) {
    const double gy2 = g.at(r, 0) * g.at(r, 0) + g.at(r, 1) * g.at(r, 1);
    EXPECT_NEAR(rt.hjb[r], std::abs(g.at(r, 2) - 0.5 * gy2), 1e-12);
  }
}

TEST(Cnf, FreeFormTraceMatchesFiniteDifferences) {
  for (auto act : {nn::Activation::Tanh, nn::Activation::LeakyRelu}) {
    const CnfSpec spec = small_free_form(act);
    const ParamStore p = randomized(spec, 61, 0.2);
    const Tensor y = random_batch(5, 2, 62);
    const Tensor tr = rates(eager(p), spec, y, 0.3).trace;
    const Tensor tr_rev = trace_grad_velocity(p, spec, y, 0.3);
    const double h = 1e-6;
    for (std::size_t r = 0; r < 5; ++r) {
      double fd = 0.0;
      for (std::size_t j = 0; j < 2; ++j) {
        Tensor up = row_of(y, r), dn = up;
        up.at(0, j) += h;
        dn.at(0, j) -= h;
        fd += (velocity(p, spec, up, 0.3).at(0, j) - velocity(p, spec, dn, 0.3).at(0, j)) / (2 * h);
      }
      EXPECT_NEAR(tr[r], fd, 1e-6);
      EXPECT_NEAR(tr[r], tr_rev[r], 1e-12);
    }
  }
}

TEST(Cnf, VelocityRejectsTimeOutsideRange) {
  const CnfSpec spec = small_potential();
  const ParamStore p = init(spec, 1);
  const Tensor y = random_batch(2, 2, 1);
  EXPECT_THROW(velocity(p, spec, y, -0.01), DomainError);
  EXPECT_THROW(velocity(p, spec, y, 1.01), DomainError);
  EXPECT_NO_THROW(velocity(p, spec, y, 1.0));
  EXPECT_THROW(velocity(p, spec, random_batch(2, 3, 1), 0.5), ShapeError);
}

TEST(Cnf, ConstantVelocityIntegratesExactly) {
  const CnfSpec spec = small_free_form();
  const ParamStore p = constant_velocity(spec, {0.5, -2.0});
  const Tensor y0 = random_batch(3, 2, 71);
  const auto s = integrate(eager(p), spec, y0, Direction::Forward, 4);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(s.y.at(r, 0), y0.at(r, 0) + 0.5, 1e-14);
    EXPECT_NEAR(s.y.at(r, 1), y0.at(r, 1) - 2.0, 1e-14);
    EXPECT_NEAR(s.L[r], 0.5 * (0.25 + 4.0), 1e-14);
    EXPECT_EQ(s.ell[r], 0.0);
    EXPECT_EQ(s.R[r], 0.0);
  }
  const auto b = integrate(eager(p), spec, s.y, Direction::Backward, 4);
  for (std::size_t i = 0; i < y0.numel(); ++i) EXPECT_NEAR(b.y[i], y0[i], 1e-14);
}

TEST(Cnf, LinearVelocityLogDeterminant) {
  CnfSpec spec;
  spec.mode = Mode::FreeForm;
  spec.dim = 1;
  spec.hidden = 2;
  spec.depth = 2;
  spec.activation = nn::Activation::Relu;
  const double a = 0.7;
  const ParamStore p = linear_velocity_1d(spec, a);
  const Tensor x = Tensor::matrix(3, 1, {1.5, -0.4, 2.0});
  const auto inv = cnf_inverse(p, spec, x, 32);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(inv.z[r], x[r] * std::exp(-a), 1e-6 * std::abs(x[r]));
    EXPECT_NEAR(inv.logdet[r], -a, 1e-12);
  }
}

TEST(Cnf, ZeroVelocityMass) {
  CnfSpec spec = small_free_form();
  const ParamStore p = constant_velocity(spec, {0.0, 0.0});
  Grid g{-5, 5, -5, 5, 300, 300};
  EXPECT_NEAR(mass_check(p, spec, g, 2), 1.0, 0.005);
}

TEST(Cnf, ForwardAndBackwardLogDetCancel) {
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 81, 0.2);
  const Tensor x = random_batch(4, 2, 82);
  const auto bwd = integrate(eager(p), spec, x, Direction::Backward, 64);
  const auto fwd = integrate(eager(p), spec, bwd.y, Direction::Forward, 64);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_NEAR(fwd.ell[r], -bwd.ell[r], 1e-5);
    EXPECT_NEAR(fwd.y.at(r, 0), x.at(r, 0), 1e-5);
    EXPECT_NEAR(fwd.L[r], bwd.L[r], 1e-4);
  }
}

TEST(Cnf, StepTimes) {
  CnfSpec spec;
  spec.T = 2.0;
  EXPECT_EQ(step_time(spec, Direction::Forward, 0, 8), 0.0);
  EXPECT_EQ(step_time(spec, Direction::Forward, 8, 8), 2.0);
  EXPECT_EQ(step_time(spec, Direction::Backward, 0, 8), 2.0);
  EXPECT_EQ(step_time(spec, Direction::Backward, 8, 8), 0.0);
  EXPECT_EQ(step_time(spec, Direction::Backward, 2, 8), 1.5);
}

TEST(Cnf, ObjectiveRecombines) {
  const CnfSpec spec = small_potential();
  const ParamStore p = randomized(spec, 91, 0.2);
  const Tensor x = random_batch(8, 2, 92);
  const auto o = ot_objective(eager(p), spec, x, 0.5, 2.0, 4);
  EXPECT_NEAR(o.total.item(), o.transport.item() + 0.5 * o.nll.item() + 2.0 * o.hjb.item(), 1e-12);
  EXPECT_NEAR(o.nll.item(), cnf_nll(eager(p), spec, x, 4).item(), 1e-12);
  const Tensor ld = log_density(p, spec, x, 4);
  EXPECT_NEAR(o.nll.item(), -mean(ld).item(), 1e-12);
  EXPECT_THROW(ot_objective(eager(p), spec, x, 0.0, 1.0, 4), DomainError);
  EXPECT_THROW(ot_objective(eager(p), spec, x, 1.0, -1.0, 4), DomainError);
}

TEST(Cnf, ObjectiveGradCheck) {
  const CnfSpec spec = small_potential(4);
  const ParamStore p = randomized(spec, 101, 0.2);
  const Tensor x = random_batch(3, 2, 102);
  const auto r = grad_check(
      [&](Tape& tape, const Bound<Var>& bp) {
        return ot_objective(bp, spec, tape.constant(x), 0.7, 1.3, 3).total;
      },
      p);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Cnf, FreeFormNllGradCheck) {
  CnfSpec spec = small_free_form();
  spec.hidden = 5;
  const ParamStore p = randomized(spec, 111, 0.2);
  const Tensor x = random_batch(3, 2, 112);
  const auto r = grad_check(
      [&](Tape& tape, const Bound<Var>& bp) { return cnf_nll(bp, spec, tape.constant(x), 3); }, p);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(Cnf, NonFiniteStateNamesStep) {
  const CnfSpec spec = small_free_form();
  const ParamStore p = constant_velocity(spec, {1e308, 1e308});
  const Tensor y = Tensor::matrix(1, 2, {1e308, 1e308});
  try {
    integrate(eager(p), spec, y, Direction::Forward, 4);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Cnf, StraightnessOfStraightFlowIsZero) {
  const CnfSpec spec = small_free_form();
  const ParamStore p = constant_velocity(spec, {1.0, 1.0});
  EXPECT_NEAR(straightness(p, spec, random_batch(5, 2, 1), 8), 0.0, 1e-12);
  const ParamStore q = randomized(small_potential(), 3);
  EXPECT_GE(straightness(q, small_potential(), random_batch(5, 2, 1), 8), -1e-12);
}

TEST(Cnf, TrajectoryCsv) {
  const CnfSpec spec = small_free_form();
  const ParamStore p = constant_velocity(spec, {1.0, 0.0});
  const auto traj = trajectory(p, spec, random_batch(2, 2, 1), Direction::Forward, 3);
  ASSERT_EQ(traj.size(), 4u);
  const std::string path = ::testing::TempDir() + "traj.csv";
  write_trajectory_csv(path, traj);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,sample,y0,y1,ell,L,R");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 8u);
}
