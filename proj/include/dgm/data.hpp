#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dgm/error.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

/// SplitMix64 generator. The whole state is one 64-bit word, so it can be
/// checkpointed and restored exactly.
///
///   state += 0x9E3779B97F4A7C15
///   z = state; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9
///   z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31
///
/// uniform() uses the top 53 bits; normal() is the cosine branch of
/// Box–Muller on two uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform integer in [0, n), n > 0, by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Fills with i.i.d. standard normals, both Box–Muller branches per pair.
  void fill_normal(std::span<double> out);

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  /// Independent stream: seed = state XOR mix(stream_id).
  Rng split(std::uint64_t stream_id) const;

 private:
  std::uint64_t state_;
};

/// The SplitMix64 output finalizer applied to x.
std::uint64_t mix64(std::uint64_t x);

}  // namespace dgm

namespace dgm::data {

enum class DatasetKind { Moons, GaussianMixture, Checkerboard, IdxImages };

/// Sample source. Synthetic kinds are two-dimensional.
///
///  - moons: two half circles plus isotropic noise of std `noise`.
///  - gaussian_mixture: `mixture_k` isotropic Gaussians of std `mixture_std`
///    centred on the circle of radius `mixture_radius`, equal weights,
///    centre j at angle 2πj/k.
///  - checkerboard: uniform on the 8 cells of a 4x4 board over [-2,2]² whose
///    integer corner (floor x, floor y) has an even coordinate sum.
///  - idx_images: rows of an IDX image file scaled to [0,1], optionally
///    binarized at `binarize_threshold`.
struct DatasetSpec {
  DatasetKind kind = DatasetKind::Moons;
  double noise = 0.1;
  std::size_t mixture_k = 8;
  double mixture_radius = 2.0;
  double mixture_std = 0.05;
  std::string idx_images;
  std::string idx_labels;
  std::optional<double> binarize_threshold;

  bool synthetic() const { return kind != DatasetKind::IdxImages; }
};

std::string kind_name(DatasetKind kind);
DatasetKind kind_from_name(const std::string& name);

/// Draws `count` points of moons. Each point picks a branch with
/// probability ½ and t ~ U[0, π]; the outer branch is (cos t, sin t), the
/// inner (1 - cos t, ½ - sin t).
Tensor sample_moons(std::size_t count, double noise_std, Rng& rng);
Tensor sample_gaussian_mixture(std::size_t count, std::size_t k, double radius, double std_dev, Rng& rng);
Tensor sample_checkerboard(std::size_t count, Rng& rng);
/// count x q matrix of standard normals.
Tensor sample_latent(std::size_t q, std::size_t count, Rng& rng);

/// Draws from a synthetic dataset; rejects idx_images.
Tensor sample_dataset(const DatasetSpec& spec, std::size_t count, Rng& rng);

/// Analytic mean and covariance of noiseless-plus-noise moons.
struct Moments {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major d x d
};
Moments moons_moments(double noise_std);

class IdxError : public FormatError {
 public:
  enum class Kind { BadMagic, Truncated, CountMismatch, Io };
  IdxError(Kind kind, const std::string& what) : FormatError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct IdxData {
  Tensor images;  // count x (rows·cols), in [0, 1]
  std::optional<std::vector<std::uint8_t>> labels;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Reads big-endian IDX files: images with magic 2051 (count, rows, cols)
/// and optional labels with magic 2049 (count). Pixels are divided by 255.
IdxData load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels = std::nullopt);

/// Writers for the same formats (used for fixtures and down-scaling).
void write_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                      std::uint32_t count, std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Entries >= threshold become 1, others 0.
Tensor binarize(const Tensor& x, double threshold);

/// Epoch-wise minibatches over a finite dataset: each epoch draws a fresh
/// permutation (Fisher–Yates) and emits every row exactly once, the final
/// batch possibly short.
class MinibatchIterator {
 public:
  MinibatchIterator(const Tensor& data, std::size_t batch_size, Rng& rng);

  /// Next batch, or nullopt at the end of the current epoch.
  std::optional<Tensor> next();
  /// Starts a new epoch with a fresh permutation.
  void reset();
  std::size_t batches_per_epoch() const;

 private:
  const Tensor* data_;
  std::size_t batch_size_;
  Rng* rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Source of training batches. Synthetic datasets without a fixed training
/// set draw fresh samples every call; finite ones cycle epochs.
class BatchSource {
 public:
  /// Fresh sampling from a synthetic spec.
  explicit BatchSource(DatasetSpec spec);
  /// Epoch iteration over a fixed training set.
  explicit BatchSource(Tensor data);

  Tensor next(std::size_t batch_size, Rng& rng);
  /// Independent reference draw that leaves the epoch state alone: fresh
  /// samples, or rows chosen uniformly with replacement from a fixed set.
  Tensor draw(std::size_t count, Rng& rng) const;
  /// True exactly when the previous call to next() completed an epoch.
  bool epoch_finished() const { return epoch_finished_; }
  bool finite() const { return finite_; }
  const Tensor& data() const { return data_; }
  std::size_t dim() const;

  /// Position inside the current epoch, for checkpoints.
  struct EpochState {
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
  };
  EpochState epoch_state() const { return {order_, cursor_}; }
  /// Rejects an order that is not a permutation of the rows.
  void restore(EpochState state);

 private:
  DatasetSpec spec_;
  bool finite_ = false;
  Tensor data_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  bool epoch_finished_ = false;
};

}  // namespace dgm::data
