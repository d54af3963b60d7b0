#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "dgm/config.hpp"
#include "dgm/param_store.hpp"

namespace dgm::app {

inline constexpr char kCheckpointMagic[8] = {'D', 'G', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

/// Everything needed to resume training bit-for-bit.
///
/// File layout: the 8 magic bytes, a little-endian u64 header length, a
/// UTF-8 JSON header, then every entry's values as little-endian f64 in
/// header order.
struct Checkpoint {
  ExperimentConfig config;
  std::size_t data_dim = 2;
  /// Model parameters (GAN: generator under "g.", discriminator under "d.").
  ParamStore params;
  /// Optimizer and data-order state, stored as untrainable entries.
  ParamStore state;
  std::uint64_t rng_state = 0;
  std::uint64_t eval_rng_state = 0;
  /// Completed optimizer steps (minibatches for the vae family).
  std::size_t step = 0;
  /// Completed epochs (vae family only).
  std::size_t epoch = 0;

  bool operator==(const Checkpoint& other) const;
};

/// Writes to a temporary file and renames it over `path`.
void save_checkpoint(const std::string& path, const Checkpoint& c);
/// Throws FormatError naming the first violated invariant.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dgm::app
