#pragma once

#include <cstddef>
#include <string_view>

#include "dgm/param_store.hpp"

namespace dgm::optim {

/// Gradients of the entries of `grads` that belong to `params`.
GradMap restrict_to(const GradMap& grads, const ParamStore& params);

/// θ ← θ − lr·g (θ ← θ + lr·g when ascent). Every trainable entry must have a
/// gradient of matching shape and every gradient must name an entry.
void sgd_step(ParamStore& params, const GradMap& grads, double lr, bool ascent = false);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::size_t t = 0;
  GradMap m;
  GradMap v;
};

/// Bias-corrected ADAM step. Decoupled weight decay θ ← θ − lr·wd·θ is
/// applied before the moment update when wd > 0. Moments of an entry start
/// at zero on its first step.
void adam_step(AdamState& state, ParamStore& params, const GradMap& grads, bool ascent = false);

struct RmsPropState {
  double lr = 1e-3;
  double rho = 0.99;
  double eps = 1e-8;
  GradMap s;
};

/// s ← ρs + (1−ρ)g²; θ ← θ − lr·g/(√s + ε).
void rmsprop_step(RmsPropState& state, ParamStore& params, const GradMap& grads, bool ascent = false);

/// Clamps every entry of every trainable tensor to [−c, c].
void clip_weights(ParamStore& params, double c);

/// Optimizer state as store entries "<prefix>m.<name>", "<prefix>v.<name>",
/// "<prefix>t" (and "<prefix>s.<name>" for RMSProp), for checkpoints.
void export_state(const AdamState& state, ParamStore& out, std::string_view prefix);
void import_state(AdamState& state, const ParamStore& in, std::string_view prefix);
void export_state(const RmsPropState& state, ParamStore& out, std::string_view prefix);
void import_state(RmsPropState& state, const ParamStore& in, std::string_view prefix);

}  // namespace dgm::optim
