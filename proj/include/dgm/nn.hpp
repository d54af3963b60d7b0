#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dgm/autodiff.hpp"
#include "dgm/param_store.hpp"

namespace dgm {
class Rng;
}

namespace dgm::nn {

enum class Activation { Identity, Relu, LeakyRelu, Tanh, Sigmoid };

struct MlpSpec {
  /// [d_in, h_1, ..., d_out]; at least two entries, all positive.
  std::vector<std::size_t> widths;
  Activation hidden = Activation::Relu;
  /// Slope for Activation::LeakyRelu.
  double slope = 0.01;
  /// Identity or Sigmoid.
  Activation output = Activation::Identity;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
};

/// Throws DomainError when the spec violates its invariants.
void validate(const MlpSpec& spec);

std::string activation_name(Activation a);
Activation activation_from_name(std::string_view name);

/// Σ_layers (in·out + out).
std::size_t param_count(const MlpSpec& spec);

/// Name of a layer's weight ("<prefix>l<i>.weight") or bias.
std::string weight_name(std::string_view prefix, std::size_t layer);
std::string bias_name(std::string_view prefix, std::size_t layer);

/// Appends the layers of `spec` to `store` under `prefix`. Weights
/// (out x in) are uniform on [-a, a], a = sqrt(6 / (fan_in + fan_out)),
/// drawn row-major layer by layer; biases start at zero.
void append_mlp(ParamStore& store, std::string_view prefix, const MlpSpec& spec, Rng& rng);

/// Fresh store for one MLP seeded by `seed`.
ParamStore init(const MlpSpec& spec, std::uint64_t seed, std::string_view prefix = "");

/// Uniform fan-based draw of a single (out x in) weight matrix.
Tensor glorot_uniform(std::size_t out, std::size_t in, Rng& rng);

template <class T>
T activate(const T& x, Activation a, double slope) {
  switch (a) {
    case Activation::Identity: return x;
    case Activation::Relu: return relu(x);
    case Activation::LeakyRelu: return leaky_relu(x, slope);
    case Activation::Tanh: return tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
  }
  return x;
}

/// Affine layer x Wᵀ + b for a batch x.
template <class T>
T dense(const T& x, const T& weight, const T& bias) {
  return add_row(matmul_nt(x, weight), bias);
}

/// Batch evaluation: affine layers with the hidden activation between them
/// and the output activation applied last.
template <class T>
T mlp_forward(const Bound<T>& params, std::string_view prefix, const MlpSpec& spec, const T& input);

extern template Tensor mlp_forward<Tensor>(const Bound<Tensor>&, std::string_view, const MlpSpec&, const Tensor&);
extern template Var mlp_forward<Var>(const Bound<Var>&, std::string_view, const MlpSpec&, const Var&);

/// Convenience eager evaluation straight from a store.
Tensor mlp_forward(const ParamStore& params, const MlpSpec& spec, const Tensor& input,
                   std::string_view prefix = "");

}  // namespace dgm::nn
