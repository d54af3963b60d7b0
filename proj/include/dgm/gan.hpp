#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dgm/autodiff.hpp"
#include "dgm/nn.hpp"
#include "dgm/optim.hpp"
#include "dgm/param_store.hpp"

namespace dgm {
class Rng;
namespace data {
class BatchSource;
}
}  // namespace dgm

namespace dgm::gan {

enum class Variant { Bce, Wgan };

/// Generator "g." (q → g_hidden x g_depth → n) and discriminator "d."
/// (n → d_hidden x d_depth → 1). The discriminator ends in a sigmoid for
/// the bce variant and is an unbounded critic for wgan.
struct GanSpec {
  Variant variant = Variant::Bce;
  std::size_t data_dim = 2;
  std::size_t latent_dim = 2;
  std::size_t g_hidden = 128;
  std::size_t g_depth = 2;
  nn::Activation g_activation = nn::Activation::LeakyRelu;
  double g_slope = 0.2;
  /// Identity, or Sigmoid for image data in [0, 1].
  nn::Activation g_output = nn::Activation::Identity;
  std::size_t d_hidden = 256;
  std::size_t d_depth = 2;
  double d_slope = 0.2;

  nn::MlpSpec generator_net() const;
  nn::MlpSpec discriminator_net() const;
  void validate() const;
};

struct GanModel {
  ParamStore g;
  ParamStore d;
};

GanModel init(const GanSpec& spec, std::uint64_t seed);
/// Both stores in one, generator first.
ParamStore merged(const GanModel& m);
/// Inverse of merged() by name prefix.
GanModel split(const ParamStore& all);

/// Copies every generator entry from `source` by name; a missing name or a
/// different shape is rejected with both shapes in the message.
void warm_start(GanModel& model, const ParamStore& source);

template <class T>
T generate(const Bound<T>& g, const GanSpec& spec, const T& z);
template <class T>
T discriminate(const Bound<T>& d, const GanSpec& spec, const T& x);

/// mean log d(x) + mean log(1 − d(g(z))) with d clamped to [1e-7, 1 − 1e-7].
/// Only for the bce variant.
template <class T>
T gan_objective(const Bound<T>& d, const Bound<T>& g, const GanSpec& spec, const Tensor& x, const Tensor& z);

/// mean f(g(z)) − mean f(x); the critic ascends it. Only for wgan.
template <class T>
T critic_objective(const Bound<T>& d, const Bound<T>& g, const GanSpec& spec, const Tensor& x, const Tensor& z);

/// Loss the generator descends: mean log(1 − d(g(z))) (saturating),
/// −mean log d(g(z)) (non-saturating) or mean f(g(z)) (wgan).
template <class T>
T generator_loss(const Bound<T>& d, const Bound<T>& g, const GanSpec& spec, const Tensor& z, bool saturating);

struct GanConfig {
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  /// Discriminator updates per generator update.
  std::size_t n_critic = 1;
  /// Weight clip for the wgan critic.
  double clip = 0.01;
  std::size_t batch = 64;
  bool saturating = true;
  double rms_rho = 0.99;

  void validate(Variant v) const;
};

/// Adam (bce) or RMSProp (wgan) state for both players.
struct GanOptimizers {
  optim::AdamState adam_d, adam_g;
  optim::RmsPropState rms_d, rms_g;
};
GanOptimizers make_optimizers(const GanConfig& cfg);

struct StepLog {
  /// J_GAN (bce) or the critic objective (wgan) on the last discriminator batch.
  double loss_d = 0.0;
  double loss_g = 0.0;
};

/// One discriminator ascent step on J_GAN, then one generator descent step
/// with fresh z.
StepLog bce_step(GanModel& model, const GanSpec& spec, const GanConfig& cfg, GanOptimizers& opt,
                 data::BatchSource& source, Rng& rng);

/// n_critic RMSProp ascent steps on the critic objective, each followed by
/// weight clipping, then one generator descent step on mean f(g(z)).
StepLog wgan_step(GanModel& model, const GanSpec& spec, const GanConfig& cfg, GanOptimizers& opt,
                  data::BatchSource& source, Rng& rng);

struct TrainOptions {
  std::size_t steps = 5000;
  /// Energy statistic cadence in steps (always at step 0 and at the end).
  std::size_t energy_every = 100;
  std::size_t energy_samples = 1000;
  std::size_t collapse_samples = 256;
  /// CSV path for the log; empty for none.
  std::string log_path;
  /// Resume point: steps before it are skipped and the log is appended to.
  std::size_t start_step = 0;
  /// Collapse threshold; drawn from eval_rng as 1e-3 of the data diameter
  /// when unset.
  std::optional<double> collapse_threshold;
  /// Called after every completed step with the number of completed steps.
  std::function<void(std::size_t)> on_step;
};

struct LogRow {
  std::size_t step = 0;
  std::optional<double> loss_d, loss_g, energy_stat;
  std::optional<bool> collapse;
};

/// Mean pairwise distance of the rows.
double mean_pairwise_distance(const Tensor& x);
/// Largest pairwise distance of the rows.
double diameter(const Tensor& x);

/// Runs opts.steps steps. Row k holds the losses of step k and, on the
/// cadence, the energy statistic and collapse flag of the model before
/// that step; a final row (step = steps) holds the end state. `eval_rng`
/// drives the diagnostic draws so they never perturb training.
std::vector<LogRow> train(GanModel& model, const GanSpec& spec, const GanConfig& cfg, GanOptimizers& opt,
                          data::BatchSource& source, Rng& rng, Rng& eval_rng, const TrainOptions& opts);

Tensor sample(const GanModel& model, const GanSpec& spec, std::size_t count, Rng& rng);

}  // namespace dgm::gan
