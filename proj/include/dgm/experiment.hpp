#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "dgm/checkpoint.hpp"
#include "dgm/config.hpp"
#include "dgm/data.hpp"
#include "dgm/eval.hpp"
#include "dgm/grid.hpp"

namespace dgm::app {

/// Training rows for the whole run (fixed set, IDX file or fresh draws).
/// The fixed synthetic set is drawn from its own stream of the seed.
data::BatchSource make_source(const ExperimentConfig& cfg);

/// Step 0 of a run: initialized parameters, empty optimizer state, rng
/// streams derived from cfg.seed. GAN warm starts are applied here.
Checkpoint initialize(const ExperimentConfig& cfg);

struct RunOptions {
  /// Output directory; cfg.out_dir when empty.
  std::string out_dir;
  /// Called with short status lines; may be empty.
  std::function<void(const std::string&)> progress;
};

/// Trains from `start` to the configured length, writing training_log.csv,
/// checkpoint.dgm and snapshots into the output directory. A resumed run
/// drops log rows at or after the resume step before appending, so its log
/// equals the uninterrupted one. A non-finite loss throws NonFiniteError
/// naming the step; checkpoint.dgm then still holds the last snapshot.
Checkpoint train(Checkpoint start, const RunOptions& opts = {});
Checkpoint train(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// `count` model samples. Latent draws come first from `rng`.
Tensor sample(const Checkpoint& c, std::size_t count, Rng& rng);

/// Per-row log p(x) (B x 1); rejects models without a tractable density.
Tensor log_density(const Checkpoint& c, const Tensor& x);

struct DensityGrid {
  Grid grid;
  Tensor log_density;  // grid.size() values, y outer, x inner
  double mass = 0.0;
};
DensityGrid density_grid(const Checkpoint& c, const Grid& grid);
/// x,y,log_density rows plus a "# riemann_mass <value>" footer.
void write_density_csv(const std::string& path, const DensityGrid& d);

struct EvalOptions {
  std::uint64_t seed = 0;
  std::size_t energy_samples = 5000;
  /// Sample count for exact_w1 (0 skips it).
  std::size_t w1_samples = 256;
  std::size_t nll_samples = 5000;
  std::size_t inverse_samples = 1000;
};
eval::EvalReport evaluate(const Checkpoint& c, const EvalOptions& opts = {});

/// Trainable scalar count of the model entries.
std::size_t parameter_count(const Checkpoint& c);
/// Kind, parameter count, progress and the config echo.
std::string info(const Checkpoint& c);

}  // namespace dgm::app
