#pragma once

#include <cstddef>
#include <cstdint>

#include "dgm/autodiff.hpp"
#include "dgm/nn.hpp"
#include "dgm/param_store.hpp"

namespace dgm {
class Rng;
}

namespace dgm::flow {

/// Which coordinate block a coupling layer copies unchanged. With d = 2 the
/// first block is coordinate 0 and the second is coordinate 1; in general
/// the first block is [0, d/2).
enum class Parity { KeepFirst, KeepSecond };

struct RealNvpSpec {
  std::size_t dim = 2;
  std::size_t layers = 6;
  std::size_t hidden = 128;
  /// Hidden layers per s/t net; the nets are [d, h, ..., h, d].
  std::size_t depth = 2;
  double slope = 0.01;
  /// |s| <= s_bound through s = s_bound · tanh(raw / s_bound).
  double s_bound = 5.0;

  nn::MlpSpec net_spec() const;
  /// Layer i (0-based) keeps the first block when i is even.
  Parity parity(std::size_t layer) const;
  void validate() const;
};

/// Entry prefix of the s or t net of a layer: "c<i>.s." / "c<i>.t.".
std::string net_prefix(std::size_t layer, char which);

/// Both nets of every layer, drawn layer by layer (s before t).
ParamStore init(const RealNvpSpec& spec, std::uint64_t seed);
std::size_t param_count(const RealNvpSpec& spec);

/// 1 on the coordinates a layer with this parity copies, 0 elsewhere.
Tensor kept_mask(std::size_t dim, Parity parity);

template <class T>
struct Mapped {
  T y;
  /// Per-row log-determinant, B x 1.
  T logdet;
};

/// y' = y ⊙ exp(s) + t on the changed block, identity on the kept block.
/// s and t see y with the changed coordinates zeroed.
template <class T>
Mapped<T> coupling_forward(const Bound<T>& params, const RealNvpSpec& spec, std::size_t layer,
                           const T& y);
template <class T>
Mapped<T> coupling_inverse(const Bound<T>& params, const RealNvpSpec& spec, std::size_t layer,
                           const T& y);

/// x = f_K ∘ ... ∘ f_1(z) with the summed log-determinant of the forward map.
template <class T>
Mapped<T> flow_forward(const Bound<T>& params, const RealNvpSpec& spec, const T& z);
/// z = g⁻¹(x) with log det ∇g⁻¹(x).
template <class T>
Mapped<T> flow_inverse(const Bound<T>& params, const RealNvpSpec& spec, const T& x);

/// mean_rows ½‖g⁻¹(x)‖² − log det ∇g⁻¹(x) + (n/2)·log 2π.
template <class T>
T nll_loss(const Bound<T>& params, const RealNvpSpec& spec, const T& x);

/// Per-row log p(x), B x 1.
Tensor log_density(const ParamStore& params, const RealNvpSpec& spec, const Tensor& x);

/// flow_forward of `count` latent draws.
Tensor sample(const ParamStore& params, const RealNvpSpec& spec, std::size_t count, Rng& rng);

/// ½‖z‖² − logdet + (n/2)·log 2π averaged over rows; shared with the CNF.
template <class T>
T gaussian_nll(const T& z, const T& logdet);

}  // namespace dgm::flow
