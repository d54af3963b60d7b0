#include "dgm/cnf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dgm/csv.hpp"
#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/flow_realnvp.hpp"

namespace dgm::cnf {

std::string mode_name(Mode m) { return m == Mode::FreeForm ? "free_form" : "potential"; }

Mode mode_from_name(const std::string& name) {
  if (name == "free_form") return Mode::FreeForm;
  if (name == "potential") return Mode::Potential;
  throw DomainError("unknown CNF mode '" + name + "'");
}

std::size_t CnfSpec::effective_rank() const { return rank == 0 ? std::min<std::size_t>(10, dim + 1) : rank; }

nn::MlpSpec CnfSpec::velocity_net() const {
  nn::MlpSpec s;
  s.widths.push_back(dim + 1);
  for (std::size_t i = 0; i < depth; ++i) s.widths.push_back(hidden);
  s.widths.push_back(dim);
  s.hidden = activation;
  return s;
}

void CnfSpec::validate() const {
  if (dim == 0) throw DomainError("CNF dimension must be positive");
  if (!(T > 0.0)) throw DomainError("CNF terminal time must be positive");
  if (mode == Mode::Potential && width == 0) throw DomainError("CNF potential width must be positive");
  if (mode == Mode::FreeForm) nn::validate(velocity_net());
}

ParamStore init(const CnfSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamStore p;
  Rng rng(seed);
  if (spec.mode == Mode::FreeForm) {
    nn::append_mlp(p, "v.", spec.velocity_net(), rng);
    return p;
  }
  const std::size_t m = spec.width, d = spec.dim + 1, r = spec.effective_rank();
  p.add("w", Tensor(Shape{m}, 1.0));
  p.add("K0", nn::glorot_uniform(m, d, rng));
  p.add("b0", Tensor(Shape{m}));
  p.add("K1", nn::glorot_uniform(m, m, rng));
  p.add("b1", Tensor(Shape{m}));
  p.add("A", nn::glorot_uniform(r, d, rng));
  p.add("b", Tensor(Shape{d}));
  p.add("c", Tensor(Shape{1}));
  return p;
}

std::size_t param_count(const CnfSpec& spec) {
  if (spec.mode == Mode::FreeForm) return nn::param_count(spec.velocity_net());
  const std::size_t m = spec.width, d = spec.dim + 1, r = spec.effective_rank();
  return m + m * d + m + m * m + m + r * d + d + 1;
}

namespace {

template <class T>
T time_column(const T& like, double t) {
  return lift(like, full(value_of(like).rows(), 1, t));
}

template <class T>
void check_batch(const T& x, std::size_t cols, const char* where) {
  const Tensor& v = value_of(x);
  if (v.rank() != 2 || v.cols() != cols) {
    throw ShapeError(std::string(where) + ": expected batch with " + std::to_string(cols) +
                     " columns, got " + shape_str(v.shape()));
  }
}

template <class T>
struct Trunk {
  T u0, h1, u1, wb;
};

template <class T>
Trunk<T> trunk(const Bound<T>& p, const T& s) {
  const std::size_t rows = value_of(s).rows();
  T u0 = tanh(add_row(matmul_nt(s, p["K0"]), p["b0"]));
  T h1 = tanh(add_row(matmul_nt(u0, p["K1"]), p["b1"]));
  return {u0, h1, u0 + h1, repeat_rows(p["w"], rows)};
}

// Derivative of the hidden activation at pre-activation a with output h.
template <class T>
T activation_slope(const T& a, const T& h, const nn::MlpSpec& net) {
  if (net.hidden == nn::Activation::Tanh) return 1.0 - square(h);
  const double slope = net.hidden == nn::Activation::LeakyRelu ? net.slope : 0.0;
  Tensor d(value_of(a).shape());
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] = value_of(a)[i] >= 0.0 ? 1.0 : slope;
  return lift(a, std::move(d));
}

template <class T>
Rates<T> free_form_rates(const Bound<T>& p, const CnfSpec& spec, const T& y, double t) {
  const std::size_t n = spec.dim, rows = value_of(y).rows();
  const auto net = spec.velocity_net();
  T h = concat_cols(y, time_column(y, t));
  // Tangent i carries ∂(layer input)/∂y_i.
  std::vector<T> tangent;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor e(Shape{rows, n + 1});
    for (std::size_t r = 0; r < rows; ++r) e.at(r, i) = 1.0;
    tangent.push_back(lift(y, std::move(e)));
  }
  const std::size_t layers = net.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    const T& W = p[nn::weight_name("v.", l)];
    T a = nn::dense(h, W, p[nn::bias_name("v.", l)]);
    for (auto& tg : tangent) tg = matmul_nt(tg, W);
    if (l + 1 == layers) {
      h = a;
      break;
    }
    h = nn::activate(a, net.hidden, net.slope);
    const T slope = activation_slope(a, h, net);
    for (auto& tg : tangent) tg = tg * slope;
  }
  T trace = slice_cols(tangent[0], 0, 1);
  for (std::size_t i = 1; i < n; ++i) trace = trace + slice_cols(tangent[i], i, i + 1);
  return {h, trace, lift(y, Tensor(Shape{rows, 1}))};
}

template <class T>
Rates<T> potential_rates(const Bound<T>& p, const CnfSpec& spec, const T& y, double t) {
  const std::size_t n = spec.dim;
  const T s = concat_cols(y, time_column(y, t));
  auto d = potential_derivatives(p, spec, s, true);
  const T gy = slice_cols(d.grad, 0, n);
  const T gt = slice_cols(d.grad, n, n + 1);
  return {neg(gy), neg(d.laplacian), abs(gt - scale(row_sum(square(gy)), 0.5))};
}

void check_time(const CnfSpec& spec, double t) {
  if (!(t >= 0.0 && t <= spec.T)) {
    throw DomainError("CNF time " + std::to_string(t) + " outside [0, " + std::to_string(spec.T) + "]");
  }
}

}  // namespace

template <class T>
T potential(const Bound<T>& p, const CnfSpec& spec, const T& s) {
  check_batch(s, spec.dim + 1, "potential");
  const auto tr = trunk(p, s);
  const std::size_t rows = value_of(s).rows();
  T phi = row_sum(tr.u1 * tr.wb) + scale(row_sum(square(matmul_nt(s, p["A"]))), 0.5) +
          row_sum(s * repeat_rows(p["b"], rows));
  return add_row(phi, p["c"]);
}

template <class T>
PotentialDerivatives<T> potential_derivatives(const Bound<T>& p, const CnfSpec& spec, const T& s,
                                              bool with_laplacian) {
  check_batch(s, spec.dim + 1, "potential_derivatives");
  const std::size_t n = spec.dim, rows = value_of(s).rows();
  const auto tr = trunk(p, s);
  const T& K0 = p["K0"];
  const T& K1 = p["K1"];
  const T& A = p["A"];
  const T d1 = 1.0 - square(tr.h1);
  const T d0 = 1.0 - square(tr.u0);
  const T z1 = tr.wb + matmul(d1 * tr.wb, K1);
  const T z0 = d0 * z1;
  PotentialDerivatives<T> out;
  out.grad = matmul(z0, K0) + matmul(matmul_nt(s, A), A) + repeat_rows(p["b"], rows);
  if (!with_laplacian) return out;

  const T E = slice_cols(K0, 0, n);
  const T dd0 = scale(tr.u0 * d0, -2.0);
  const T c1 = scale(tr.h1 * d1, -2.0) * tr.wb;
  T lap = matmul(dd0 * z1, row_sum(square(E)));
  for (std::size_t i = 0; i < n; ++i) {
    const T P = matmul_nt(d0 * repeat_rows(transpose(slice_cols(E, i, i + 1)), rows), K1);
    lap = lap + row_sum(c1 * square(P));
  }
  out.laplacian = add_row(lap, sum(square(slice_cols(A, 0, n))));
  return out;
}

template <class T>
Rates<T> rates(const Bound<T>& params, const CnfSpec& spec, const T& y, double t) {
  check_batch(y, spec.dim, "cnf rates");
  return spec.mode == Mode::FreeForm ? free_form_rates(params, spec, y, t)
                                     : potential_rates(params, spec, y, t);
}

Tensor velocity(const ParamStore& params, const CnfSpec& spec, const Tensor& y, double t) {
  check_time(spec, t);
  return rates(eager(params), spec, y, t).v;
}

Tensor trace_grad_velocity(const ParamStore& params, const CnfSpec& spec, const Tensor& y, double t) {
  check_time(spec, t);
  check_batch(y, spec.dim, "trace_grad_velocity");
  if (spec.mode == Mode::Potential) return rates(eager(params), spec, y, t).trace;
  const auto net = spec.velocity_net();
  Tensor trace(Shape{y.rows(), 1});
  for (std::size_t i = 0; i < spec.dim; ++i) {
    Tape tape;
    const auto p = tape.bind(params);
    const Var yv = tape.variable(y);
    const Var v = nn::mlp_forward(p, "v.", net, concat_cols(yv, full(y.rows(), 1, t)));
    const Tensor g = tape.backward(sum(slice_cols(v, i, i + 1))).wrt(yv);
    for (std::size_t r = 0; r < y.rows(); ++r) trace[r] += g.at(r, i);
  }
  return trace;
}

double step_time(const CnfSpec& spec, Direction dir, std::size_t k, std::size_t nt) {
  const double frac = static_cast<double>(k) / static_cast<double>(nt);
  return dir == Direction::Forward ? spec.T * frac : spec.T * (1.0 - frac);
}

template <class T>
AugmentedState<T> rk4_step(const Bound<T>& params, const CnfSpec& spec, const AugmentedState<T>& s,
                           double t, double h) {
  const double ah = std::abs(h);
  const double ell_sign = h >= 0.0 ? 1.0 : -1.0;
  const Rates<T> k1 = rates(params, spec, s.y, t);
  const Rates<T> k2 = rates(params, spec, s.y + scale(k1.v, 0.5 * h), t + 0.5 * h);
  const Rates<T> k3 = rates(params, spec, s.y + scale(k2.v, 0.5 * h), t + 0.5 * h);
  const Rates<T> k4 = rates(params, spec, s.y + scale(k3.v, h), t + h);
  auto combine = [](const T& a, const T& b, const T& c, const T& d) {
    return a + scale(b, 2.0) + scale(c, 2.0) + d;
  };
  auto kinetic = [](const Rates<T>& k) { return scale(row_sum(square(k.v)), 0.5); };
  AugmentedState<T> out;
  out.y = s.y + scale(combine(k1.v, k2.v, k3.v, k4.v), h / 6.0);
  out.ell = s.ell + scale(combine(k1.trace, k2.trace, k3.trace, k4.trace), ell_sign * ah / 6.0);
  out.L = s.L + scale(combine(kinetic(k1), kinetic(k2), kinetic(k3), kinetic(k4)), ah / 6.0);
  out.R = s.R + scale(combine(k1.hjb, k2.hjb, k3.hjb, k4.hjb), ah / 6.0);
  return out;
}

template <class T>
AugmentedState<T> integrate(const Bound<T>& params, const CnfSpec& spec, const T& start,
                            Direction dir, std::size_t nt) {
  if (nt == 0) throw DomainError("integrate: nt must be at least 1");
  check_batch(start, spec.dim, "integrate");
  const std::size_t rows = value_of(start).rows();
  AugmentedState<T> s{start, lift(start, Tensor(Shape{rows, 1})), lift(start, Tensor(Shape{rows, 1})),
                      lift(start, Tensor(Shape{rows, 1}))};
  for (std::size_t k = 0; k < nt; ++k) {
    const double t0 = step_time(spec, dir, k, nt);
    const double t1 = step_time(spec, dir, k + 1, nt);
    s = rk4_step(params, spec, s, t0, t1 - t0);
    if (!value_of(s.y).all_finite() || !value_of(s.ell).all_finite() || !value_of(s.R).all_finite()) {
      throw NonFiniteError("CNF integration produced a non-finite state at step " + std::to_string(k));
    }
  }
  return s;
}

std::vector<TrajectoryPoint> trajectory(const ParamStore& params, const CnfSpec& spec,
                                        const Tensor& start, Direction dir, std::size_t nt) {
  if (nt == 0) throw DomainError("trajectory: nt must be at least 1");
  check_batch(start, spec.dim, "trajectory");
  const auto p = eager(params);
  const std::size_t rows = start.rows();
  std::vector<TrajectoryPoint> out;
  AugmentedState<Tensor> s{start, Tensor(Shape{rows, 1}), Tensor(Shape{rows, 1}), Tensor(Shape{rows, 1})};
  out.push_back({step_time(spec, dir, 0, nt), s});
  for (std::size_t k = 0; k < nt; ++k) {
    const double t0 = step_time(spec, dir, k, nt);
    const double t1 = step_time(spec, dir, k + 1, nt);
    s = rk4_step(p, spec, s, t0, t1 - t0);
    if (!s.y.all_finite()) {
      throw NonFiniteError("CNF integration produced a non-finite state at step " + std::to_string(k));
    }
    out.push_back({t1, s});
  }
  return out;
}

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& traj) {
  std::vector<std::string> header{"t", "sample"};
  const std::size_t n = traj.empty() ? 0 : traj.front().state.y.cols();
  for (std::size_t i = 0; i < n; ++i) header.push_back("y" + std::to_string(i));
  header.insert(header.end(), {"ell", "L", "R"});
  csv::Writer w(path, header);
  for (const auto& pt : traj) {
    for (std::size_t r = 0; r < pt.state.y.rows(); ++r) {
      std::vector<double> row{pt.t, static_cast<double>(r)};
      for (std::size_t i = 0; i < n; ++i) row.push_back(pt.state.y.at(r, i));
      row.insert(row.end(), {pt.state.ell[r], pt.state.L[r], pt.state.R[r]});
      w.row(row);
    }
  }
}

Inverse cnf_inverse(const ParamStore& params, const CnfSpec& spec, const Tensor& x, std::size_t nt) {
  auto s = integrate(eager(params), spec, x, Direction::Backward, nt);
  return {s.y, s.ell};
}

Tensor cnf_forward(const ParamStore& params, const CnfSpec& spec, const Tensor& z, std::size_t nt) {
  return integrate(eager(params), spec, z, Direction::Forward, nt).y;
}

template <class T>
T cnf_nll(const Bound<T>& params, const CnfSpec& spec, const T& x, std::size_t nt) {
  if (value_of(x).rows() == 0) throw ShapeError("cnf_nll: empty batch");
  auto s = integrate(params, spec, x, Direction::Backward, nt);
  return flow::gaussian_nll(s.y, s.ell);
}

Tensor log_density(const ParamStore& params, const CnfSpec& spec, const Tensor& x, std::size_t nt) {
  auto inv = cnf_inverse(params, spec, x, nt);
  const double c = 0.5 * static_cast<double>(spec.dim) * std::log(2.0 * std::numbers::pi);
  return inv.logdet - scale(row_sum(square(inv.z)), 0.5) - c;
}

template <class T>
OtObjective<T> ot_objective(const Bound<T>& params, const CnfSpec& spec, const T& x, double alpha,
                            double lambda_hjb, std::size_t nt) {
  if (!(alpha > 0.0)) throw DomainError("ot_objective: alpha must be positive");
  if (!(lambda_hjb >= 0.0)) throw DomainError("ot_objective: lambda_hjb must be non-negative");
  if (value_of(x).rows() == 0) throw ShapeError("ot_objective: empty batch");
  auto s = integrate(params, spec, x, Direction::Backward, nt);
  OtObjective<T> out;
  out.nll = flow::gaussian_nll(s.y, s.ell);
  out.transport = mean(s.L);
  out.hjb = mean(s.R);
  out.total = out.transport + scale(out.nll, alpha) + scale(out.hjb, lambda_hjb);
  return out;
}

double mass_check(const ParamStore& params, const CnfSpec& spec, const Grid& grid, std::size_t nt) {
  return integrate_density([&](const Tensor& pts) { return log_density(params, spec, pts, nt); }, grid,
                           0.0, 0)
      .mass;
}

double straightness(const ParamStore& params, const CnfSpec& spec, const Tensor& z, std::size_t nt) {
  const auto traj = trajectory(params, spec, z, Direction::Forward, nt);
  const std::size_t rows = z.rows(), n = spec.dim;
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double path = 0.0;
    for (std::size_t k = 1; k < traj.size(); ++k) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = traj[k].state.y.at(r, i) - traj[k - 1].state.y.at(r, i);
        d2 += d * d;
      }
      path += std::sqrt(d2);
    }
    double c2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = traj.back().state.y.at(r, i) - traj.front().state.y.at(r, i);
      c2 += d * d;
    }
    const double chord = std::sqrt(c2);
    if (chord < 1e-9) continue;
    total += path / chord - 1.0;
    ++counted;
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

#define DGM_CNF_INSTANTIATE(T)                                                                      \
  template T potential<T>(const Bound<T>&, const CnfSpec&, const T&);                               \
  template PotentialDerivatives<T> potential_derivatives<T>(const Bound<T>&, const CnfSpec&,        \
                                                            const T&, bool);                        \
  template Rates<T> rates<T>(const Bound<T>&, const CnfSpec&, const T&, double);                    \
  template AugmentedState<T> rk4_step<T>(const Bound<T>&, const CnfSpec&, const AugmentedState<T>&, \
                                         double, double);                                           \
  template AugmentedState<T> integrate<T>(const Bound<T>&, const CnfSpec&, const T&, Direction,     \
                                          std::size_t);                                             \
  template T cnf_nll<T>(const Bound<T>&, const CnfSpec&, const T&, std::size_t);                    \
  template OtObjective<T> ot_objective<T>(const Bound<T>&, const CnfSpec&, const T&, double, double, \
                                          std::size_t);

DGM_CNF_INSTANTIATE(Tensor)
DGM_CNF_INSTANTIATE(Var)

}  // namespace dgm::cnf
