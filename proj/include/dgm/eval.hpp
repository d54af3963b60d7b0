#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm::eval {

/// Two-sample energy statistic
///   ab/(a+b) · [ 2/(ab) ΣΣ‖x_i − y_j‖ − 1/a² ΣΣ‖x_i − x_k‖ − 1/b² ΣΣ‖y_j − y_l‖ ].
/// Sums run in fixed row order with compensated summation.
double energy_statistic(const Tensor& x, const Tensor& y);

/// Largest sample size accepted by exact_w1.
inline constexpr std::size_t kMaxExactW1 = 512;

/// Optimal assignment of rows to columns of a square cost matrix;
/// result[i] is the column matched to row i.
std::vector<std::size_t> min_cost_assignment(const Tensor& cost);

/// (1/a) · min over perfect matchings of Σ‖x_i − y_π(i)‖.
double exact_w1(const Tensor& x, const Tensor& y);

struct RoundTrip {
  /// ‖g⁻¹(g(z)) − z‖ over rows.
  double latent_max = 0.0, latent_mean = 0.0;
  /// ‖g(g⁻¹(x)) − x‖ over rows.
  double data_max = 0.0, data_mean = 0.0;
};

using Map = std::function<Tensor(const Tensor&)>;

RoundTrip inverse_consistency(const Map& forward, const Map& inverse, const Tensor& z, const Tensor& x);

enum class MomentTarget { StandardNormal, Moons };

struct MomentDeltas {
  std::vector<double> mean_delta;  // sample − target
  std::vector<double> cov_delta;   // row-major
  double max_abs_mean = 0.0, max_abs_cov = 0.0;
};

/// Mean and (1/N) covariance of the rows compared with the target. One
/// sample gives a zero covariance; an empty batch is rejected.
MomentDeltas moment_diagnostics(const Tensor& samples, MomentTarget target, double moons_noise = 0.1);

struct EvalReport {
  std::string model;
  std::size_t energy_samples = 0;
  double energy_stat = 0.0;
  std::optional<double> exact_w1;
  std::optional<double> nll;
  std::optional<RoundTrip> inverse;
  std::optional<MomentDeltas> moments;
};

/// Pretty JSON with keys model, energy_samples, energy_stat, exact_w1,
/// nll, inverse {latent_max, latent_mean, data_max, data_mean} and
/// moments {mean_delta, cov_delta}; absent optionals are null.
std::string to_json(const EvalReport& r);

}  // namespace dgm::eval
