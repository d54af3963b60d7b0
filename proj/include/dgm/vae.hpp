#pragma once

#include <cstddef>
#include <cstdint>

#include "dgm/autodiff.hpp"
#include "dgm/grid.hpp"
#include "dgm/nn.hpp"
#include "dgm/param_store.hpp"

namespace dgm {
class Rng;
}

namespace dgm::vae {

struct Likelihood {
  enum class Kind { Gaussian, Bernoulli };
  Kind kind = Kind::Gaussian;
  /// Gaussian: the denominator of the quadratic term is 2σ (not 2σ²).
  double sigma = 0.05;
  /// Bernoulli: probabilities are clamped to [eps, 1 - eps].
  double eps = 1e-7;

  void validate() const;
};

std::string likelihood_name(Likelihood::Kind k);
Likelihood::Kind likelihood_from_name(const std::string& name);

/// Encoder: trunk "e." (n → hidden x depth) with heads "e.mu." and
/// "e.logvar." (hidden → q). Generator: MLP "g." (q → hidden x depth → n),
/// sigmoid output under a Bernoulli likelihood.
struct VaeSpec {
  std::size_t data_dim = 2;
  std::size_t latent_dim = 2;
  std::size_t hidden = 128;
  std::size_t depth = 2;
  nn::Activation activation = nn::Activation::LeakyRelu;
  double slope = 0.2;
  Likelihood likelihood;

  nn::MlpSpec generator_net() const;
  void validate() const;
};

ParamStore init(const VaeSpec& spec, std::uint64_t seed);
std::size_t param_count(const VaeSpec& spec);

/// Prefix of the generator subtree (shared with GAN warm starts).
inline constexpr const char* kGeneratorPrefix = "g.";

template <class T>
struct Posterior {
  T mu;      // B x q
  T logvar;  // B x q
};

template <class T>
Posterior<T> encode(const Bound<T>& params, const VaeSpec& spec, const T& x);

template <class T>
T decode(const Bound<T>& params, const VaeSpec& spec, const T& z);

/// mu + exp(½ logvar) ⊙ eps.
template <class T>
T reparam_sample(const T& mu, const T& logvar, const Tensor& eps);

/// ½ Σ_j (mu² + exp(logvar) − logvar − 1) per row (B x 1).
template <class T>
T kl_gaussian(const T& mu, const T& logvar);

/// Negative log-likelihood of x under the decoder output, per row (B x 1).
/// Bernoulli rejects x outside [0, 1].
template <class T>
T recon_loss(const Likelihood& lik, const Tensor& x, const T& x_hat);

template <class T>
struct Elbo {
  T total;  // mean(recon + kl)
  T recon;  // mean recon
  T kl;     // mean kl
};

/// Negative ELBO with caller-supplied noise eps (B x q).
template <class T>
Elbo<T> elbo_loss(const Bound<T>& params, const VaeSpec& spec, const Tensor& x, const Tensor& eps);

/// Same with one fresh standard-normal draw per row.
template <class T>
Elbo<T> elbo_loss(const Bound<T>& params, const VaeSpec& spec, const Tensor& x, Rng& rng);

struct PosteriorGrid {
  Grid grid;
  Tensor log_posterior;  // grid.size() x 1, log p(x|z) + log p_Z(z)
  std::size_t argmax = 0;
  double map_z0 = 0.0, map_z1 = 0.0;
};

/// Unnormalized log-posterior of a single observation x (1 x n) on a latent
/// grid. Requires q = 2.
PosteriorGrid posterior_grid(const ParamStore& params, const VaeSpec& spec, const Tensor& x,
                             const Grid& grid);

/// Generator outputs for `count` latent draws.
Tensor sample(const ParamStore& params, const VaeSpec& spec, std::size_t count, Rng& rng);

}  // namespace dgm::vae
