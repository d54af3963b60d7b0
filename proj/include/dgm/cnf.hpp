#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dgm/autodiff.hpp"
#include "dgm/grid.hpp"
#include "dgm/nn.hpp"
#include "dgm/param_store.hpp"

namespace dgm::cnf {

enum class Mode { FreeForm, Potential };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

struct CnfSpec {
  Mode mode = Mode::Potential;
  std::size_t dim = 2;
  /// Potential mode: width m of the residual net.
  std::size_t width = 32;
  /// Potential mode: rows r of A; 0 selects min(10, n+1).
  std::size_t rank = 0;
  /// Free-form mode: hidden widths of the velocity MLP over (y, t).
  std::size_t hidden = 32;
  std::size_t depth = 2;
  nn::Activation activation = nn::Activation::Tanh;
  /// Terminal time.
  double T = 1.0;

  std::size_t effective_rank() const;
  nn::MlpSpec velocity_net() const;
  void validate() const;
};

/// Potential mode entries: w (m), K0 (m x n+1), b0 (m), K1 (m x m), b1 (m),
/// A (r x n+1), b (n+1), c (1). Free-form mode: one MLP under "v.".
ParamStore init(const CnfSpec& spec, std::uint64_t seed);
std::size_t param_count(const CnfSpec& spec);

/// Φ(s) for s = (y, t), per row (B x 1).
template <class T>
T potential(const Bound<T>& params, const CnfSpec& spec, const T& s);

template <class T>
struct PotentialDerivatives {
  /// ∇_s Φ, B x (n+1); the last column is ∂Φ/∂t.
  T grad;
  /// Σ_{i<n} ∂²Φ/∂y_i², B x 1 (only when requested).
  T laplacian;
};

/// Analytic gradient and y-block Hessian trace of Φ.
template <class T>
PotentialDerivatives<T> potential_derivatives(const Bound<T>& params, const CnfSpec& spec,
                                              const T& s, bool with_laplacian);

template <class T>
struct Rates {
  T v;      // B x n
  T trace;  // B x 1, tr ∇_y v
  T hjb;    // B x 1, |∂tΦ − ½‖∇_yΦ‖²| (zero in free-form mode)
};

/// Velocity, Jacobian trace and HJB residual at (y, t). The free-form trace
/// is propagated as forward tangents so it stays differentiable on a tape.
template <class T>
Rates<T> rates(const Bound<T>& params, const CnfSpec& spec, const T& y, double t);

/// v(y, t); rejects t outside [0, T].
Tensor velocity(const ParamStore& params, const CnfSpec& spec, const Tensor& y, double t);

/// tr ∇_y v per row. Free-form mode takes one reverse pass per output
/// coordinate; potential mode uses the analytic Hessian trace.
Tensor trace_grad_velocity(const ParamStore& params, const CnfSpec& spec, const Tensor& y, double t);

enum class Direction { Forward, Backward };

template <class T>
struct AugmentedState {
  T y;
  T ell;  // B x 1
  T L;    // B x 1
  T R;    // B x 1
};

/// One classical RK4 step of the augmented system from time t with signed
/// step h. ℓ accrues +tr for forward steps and −tr for backward steps; L and
/// R accrue with |h|.
template <class T>
AugmentedState<T> rk4_step(const Bound<T>& params, const CnfSpec& spec, const AugmentedState<T>& s,
                           double t, double h);

/// nt equal RK4 steps over [0, T] (forward) or from T down to 0 (backward),
/// starting from ℓ = L = R = 0. Throws NonFiniteError naming the step.
template <class T>
AugmentedState<T> integrate(const Bound<T>& params, const CnfSpec& spec, const T& start,
                            Direction dir, std::size_t nt);

/// Time of step k of nt in the given direction.
double step_time(const CnfSpec& spec, Direction dir, std::size_t k, std::size_t nt);

struct TrajectoryPoint {
  double t;
  AugmentedState<Tensor> state;
};
/// Every intermediate state including the start.
std::vector<TrajectoryPoint> trajectory(const ParamStore& params, const CnfSpec& spec,
                                        const Tensor& start, Direction dir, std::size_t nt);
/// CSV rows: t,sample,y0..y{n-1},ell,L,R.
void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryPoint>& traj);

struct Inverse {
  Tensor z;
  Tensor logdet;
};
/// z = g⁻¹(x) and log det ∇g⁻¹(x) from backward integration.
Inverse cnf_inverse(const ParamStore& params, const CnfSpec& spec, const Tensor& x, std::size_t nt);
Tensor cnf_forward(const ParamStore& params, const CnfSpec& spec, const Tensor& z, std::size_t nt);

template <class T>
T cnf_nll(const Bound<T>& params, const CnfSpec& spec, const T& x, std::size_t nt);

Tensor log_density(const ParamStore& params, const CnfSpec& spec, const Tensor& x, std::size_t nt);

template <class T>
struct OtObjective {
  T total;
  T nll;
  T transport;
  T hjb;
};

/// mean L + α·NLL + λ·mean R.
template <class T>
OtObjective<T> ot_objective(const Bound<T>& params, const CnfSpec& spec, const T& x, double alpha,
                            double lambda_hjb, std::size_t nt);

/// Riemann mass of the model density on a grid.
double mass_check(const ParamStore& params, const CnfSpec& spec, const Grid& grid, std::size_t nt);

/// Mean over rows of (path length / chord length) − 1 of the forward
/// trajectories started at z.
double straightness(const ParamStore& params, const CnfSpec& spec, const Tensor& z, std::size_t nt);

}  // namespace dgm::cnf
