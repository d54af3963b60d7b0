#include "dgm/data.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "dgm/ops.hpp"

namespace dgm {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  return mix64(state_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw DomainError("Rng::below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void Rng::fill_normal(std::span<double> out) {
  std::size_t i = 0;
  for (; i + 1 < out.size(); i += 2) {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i] = r * std::cos(2.0 * std::numbers::pi * u2);
    out[i + 1] = r * std::sin(2.0 * std::numbers::pi * u2);
  }
  if (i < out.size()) out[i] = normal();
}

Rng Rng::split(std::uint64_t stream_id) const { return Rng(state_ ^ mix64(stream_id)); }

}  // namespace dgm

namespace dgm::data {

std::string kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Moons: return "moons";
    case DatasetKind::GaussianMixture: return "gaussian_mixture";
    case DatasetKind::Checkerboard: return "checkerboard";
    case DatasetKind::IdxImages: return "idx_images";
  }
  return "moons";
}

DatasetKind kind_from_name(const std::string& name) {
  if (name == "moons") return DatasetKind::Moons;
  if (name == "gaussian_mixture") return DatasetKind::GaussianMixture;
  if (name == "checkerboard") return DatasetKind::Checkerboard;
  if (name == "idx_images") return DatasetKind::IdxImages;
  throw DomainError("unknown dataset kind '" + name + "'");
}

Tensor sample_moons(std::size_t count, double noise_std, Rng& rng) {
  if (noise_std < 0.0) throw DomainError("sample_moons: negative noise_std");
  Tensor out(Shape{count, 2});
  for (std::size_t i = 0; i < count; ++i) {
    const bool outer = rng.uniform() < 0.5;
    const double t = std::numbers::pi * rng.uniform();
    double x = outer ? std::cos(t) : 1.0 - std::cos(t);
    double y = outer ? std::sin(t) : 0.5 - std::sin(t);
    if (noise_std > 0.0) {
      x += noise_std * rng.normal();
      y += noise_std * rng.normal();
    }
    out.at(i, 0) = x;
    out.at(i, 1) = y;
  }
  return out;
}

Tensor sample_gaussian_mixture(std::size_t count, std::size_t k, double radius, double std_dev,
                               Rng& rng) {
  if (k == 0) throw DomainError("gaussian_mixture: k must be positive");
  if (std_dev < 0.0) throw DomainError("gaussian_mixture: negative std");
  Tensor out(Shape{count, 2});
  for (std::size_t i = 0; i < count; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(rng.below(k)) /
                         static_cast<double>(k);
    out.at(i, 0) = radius * std::cos(angle) + std_dev * rng.normal();
    out.at(i, 1) = radius * std::sin(angle) + std_dev * rng.normal();
  }
  return out;
}

Tensor sample_checkerboard(std::size_t count, Rng& rng) {
  Tensor out(Shape{count, 2});
  for (std::size_t i = 0; i < count; ++i) {
    // Cell index among the 8 admissible cells, then uniform within it.
    const auto cell = static_cast<int>(rng.below(8));
    const int cx = cell % 4;
    const int cy = 2 * (cell / 4) + (cx % 2);  // even coordinate sum
    const double fx = static_cast<double>(cx - 2) + rng.uniform();
    const double fy = static_cast<double>(cy - 2) + rng.uniform();
    out.at(i, 0) = fx;
    out.at(i, 1) = fy;
  }
  return out;
}

Tensor sample_latent(std::size_t q, std::size_t count, Rng& rng) {
  if (q == 0) throw DomainError("sample_latent: q must be at least 1");
  Tensor out(Shape{count, q});
  rng.fill_normal(out.values());
  return out;
}

Tensor sample_dataset(const DatasetSpec& spec, std::size_t count, Rng& rng) {
  switch (spec.kind) {
    case DatasetKind::Moons: return sample_moons(count, spec.noise, rng);
    case DatasetKind::GaussianMixture:
      return sample_gaussian_mixture(count, spec.mixture_k, spec.mixture_radius, spec.mixture_std, rng);
    case DatasetKind::Checkerboard: return sample_checkerboard(count, rng);
    case DatasetKind::IdxImages: break;
  }
  throw DomainError("sample_dataset: idx_images is not a sampler");
}

Moments moons_moments(double noise_std) {
  const double inv_pi = 1.0 / std::numbers::pi;
  const double var = noise_std * noise_std;
  Moments m;
  m.mean = {0.5, 0.25};
  m.cov = {0.75 + var, 0.125 - inv_pi, 0.125 - inv_pi, 0.5625 - inv_pi + var};
  return m;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw IdxError(IdxError::Kind::Truncated, what + ": truncated header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<std::uint8_t> read_payload(std::istream& in, std::size_t n, const std::string& what) {
  std::vector<std::uint8_t> bytes(n);
  if (n > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n))) {
    throw IdxError(IdxError::Kind::Truncated,
                   what + ": truncated payload, expected " + std::to_string(n) + " bytes");
  }
  return bytes;
}

}  // namespace

IdxData load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels) {
  std::ifstream in(images, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, "cannot open " + images.string());
  const std::string what = images.string();
  const std::uint32_t magic = read_be32(in, what);
  if (magic != 2051) {
    throw IdxError(IdxError::Kind::BadMagic,
                   what + ": image magic " + std::to_string(magic) + ", expected 2051");
  }
  const std::uint32_t count = read_be32(in, what);
  const std::uint32_t rows = read_be32(in, what);
  const std::uint32_t cols = read_be32(in, what);
  const std::size_t pixels = std::size_t{rows} * cols;
  const auto bytes = read_payload(in, std::size_t{count} * pixels, what);

  IdxData out;
  out.rows = rows;
  out.cols = cols;
  out.images = Tensor(Shape{count, pixels});
  for (std::size_t i = 0; i < bytes.size(); ++i) out.images[i] = bytes[i] / 255.0;

  if (labels) {
    std::ifstream lin(*labels, std::ios::binary);
    if (!lin) throw IdxError(IdxError::Kind::Io, "cannot open " + labels->string());
    const std::string lwhat = labels->string();
    const std::uint32_t lmagic = read_be32(lin, lwhat);
    if (lmagic != 2049) {
      throw IdxError(IdxError::Kind::BadMagic,
                     lwhat + ": label magic " + std::to_string(lmagic) + ", expected 2049");
    }
    const std::uint32_t lcount = read_be32(lin, lwhat);
    if (lcount != count) {
      throw IdxError(IdxError::Kind::CountMismatch, "image count " + std::to_string(count) +
                                                        " != label count " + std::to_string(lcount));
    }
    out.labels = read_payload(lin, lcount, lwhat);
  }
  return out;
}

void write_idx_images(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
                      std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != std::size_t{count} * rows * cols) {
    throw ShapeError("write_idx_images: pixel count does not match dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  write_be32(out, 2051);
  write_be32(out, count);
  write_be32(out, rows);
  write_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  write_be32(out, 2049);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Tensor binarize(const Tensor& x, double threshold) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] >= threshold ? 1.0 : 0.0;
  return out;
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace

MinibatchIterator::MinibatchIterator(const Tensor& data, std::size_t batch_size, Rng& rng)
    : data_(&data), batch_size_(batch_size), rng_(&rng) {
  if (batch_size == 0) throw DomainError("minibatches: batch size must be at least 1");
  reset();
}

void MinibatchIterator::reset() {
  order_ = permutation(data_->rows(), *rng_);
  cursor_ = 0;
}

std::optional<Tensor> MinibatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return gather_rows(*data_, idx);
}

std::size_t MinibatchIterator::batches_per_epoch() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

BatchSource::BatchSource(DatasetSpec spec) : spec_(std::move(spec)) {
  if (!spec_.synthetic()) throw DomainError("BatchSource: idx data needs a loaded tensor");
}

BatchSource::BatchSource(Tensor data) : finite_(true), data_(std::move(data)) {
  if (data_.rows() == 0) throw DomainError("BatchSource: empty training set");
}

std::size_t BatchSource::dim() const { return finite_ ? data_.cols() : 2; }

Tensor BatchSource::next(std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw DomainError("batch size must be at least 1");
  if (!finite_) {
    epoch_finished_ = false;
    return sample_dataset(spec_, batch_size, rng);
  }
  if (cursor_ >= order_.size()) {
    order_ = permutation(data_.rows(), rng);
    cursor_ = 0;
  }
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size);
  std::vector<std::size_t> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  epoch_finished_ = cursor_ >= order_.size();
  return gather_rows(data_, idx);
}

void BatchSource::restore(EpochState state) {
  if (!finite_) throw DomainError("BatchSource: fresh sampling has no epoch state");
  if (!state.order.empty()) {
    std::vector<bool> seen(data_.rows(), false);
    if (state.order.size() != data_.rows()) throw DomainError("BatchSource: epoch order has the wrong length");
    for (auto i : state.order) {
      if (i >= seen.size() || seen[i]) throw DomainError("BatchSource: epoch order is not a permutation");
      seen[i] = true;
    }
  }
  if (state.cursor > state.order.size()) throw DomainError("BatchSource: epoch cursor out of range");
  order_ = std::move(state.order);
  cursor_ = state.cursor;
  epoch_finished_ = false;
}

Tensor BatchSource::draw(std::size_t count, Rng& rng) const {
  if (!finite_) return sample_dataset(spec_, count, rng);
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(data_.rows()));
  return gather_rows(data_, idx);
}

}  // namespace dgm::data
