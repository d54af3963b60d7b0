#include "dgm/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dgm/error.hpp"

namespace dgm {
namespace {


void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

void require_rank2(const char* op, const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                     shape_str(x.shape()));
  }
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* in = x.data();
  double* o = out.data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = f(in[i]);
  return out;
}

template <class F>
Tensor map_binary(const char* op, const Tensor& a, const Tensor& b, F f) {
  require_same(op, a, b);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* o = out.data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return map_binary("add", a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return map_binary("sub", a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return map_binary("mul", a, b, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  for (double v : b.values()) {
    if (v == 0.0) throw DomainError("div: zero entry in denominator");
  }
  return map_binary("div", a, b, [](double x, double y) { return x / y; });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  require_rank2("add_row", x);
  if (b.numel() != x.cols() || b.rank() > 2 || (b.rank() == 2 && b.rows() != 1)) {
    throw ShapeError("add_row: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out = x;
  const std::size_t c = x.cols();
  double* o = out.data();
  const double* pb = b.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] += pb[j];
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  return map_unary(x, [c](double v) { return c * v; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return map_unary(x, [c](double v) { return v + c; });
}

Tensor neg(const Tensor& x) {
  return map_unary(x, [](double v) { return -v; });
}

namespace {

using Packet = Eigen::internal::packet_traits<double>::type;
constexpr std::size_t kLanes = Eigen::internal::packet_traits<double>::size;
constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kPackets = 4;
constexpr std::size_t kColBlock = kPackets * kLanes;

// One block of R output rows and kColBlock columns. Every entry is
// accumulated by multiply-add over k in increasing order, whatever the block
// shape, so a row's result never depends on the other rows of the batch.
template <std::size_t R>
void gemm_block(const double* a, const double* b, std::size_t ldb, double* out, std::size_t k,
                std::size_t n, std::size_t cols) {
  using namespace Eigen::internal;
  static_assert(kPackets == 4);
  Packet acc[R * kPackets];
  for (auto& p : acc) p = pset1<Packet>(0.0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* brow = b + kk * ldb;
    const Packet b0 = ploadu<Packet>(brow);
    const Packet b1 = ploadu<Packet>(brow + kLanes);
    const Packet b2 = ploadu<Packet>(brow + 2 * kLanes);
    const Packet b3 = ploadu<Packet>(brow + 3 * kLanes);
#pragma GCC unroll 4
    for (std::size_t i = 0; i < R; ++i) {
      const Packet av = pset1<Packet>(a[i * k + kk]);
      acc[4 * i] = pmadd(av, b0, acc[4 * i]);
      acc[4 * i + 1] = pmadd(av, b1, acc[4 * i + 1]);
      acc[4 * i + 2] = pmadd(av, b2, acc[4 * i + 2]);
      acc[4 * i + 3] = pmadd(av, b3, acc[4 * i + 3]);
    }
  }
  if (cols == kColBlock) {
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t p = 0; p < kPackets; ++p) pstoreu(out + i * n + p * kLanes, acc[4 * i + p]);
    }
    return;
  }
  alignas(64) double tmp[kColBlock];
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t p = 0; p < kPackets; ++p) pstoreu(tmp + p * kLanes, acc[4 * i + p]);
    std::copy_n(tmp, cols, out + i * n);
  }
}

template <std::size_t R>
void gemm_rows(const double* a, const double* b, double* out, std::size_t k, std::size_t n,
               const std::vector<double>& tail) {
  std::size_t j = 0;
  for (; j + kColBlock <= n; j += kColBlock) gemm_block<R>(a, b + j, n, out + j, k, n, kColBlock);
  if (j < n) gemm_block<R>(a, tail.data(), kColBlock, out + j, k, n, n - j);
}

// out (m x n) = a (m x k) * b (k x n).
void gemm(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
          std::size_t n) {
  // Columns past the last full block, zero-padded to a full block.
  const std::size_t j0 = n - n % kColBlock;
  std::vector<double> tail;
  if (j0 < n) {
    tail.assign(k * kColBlock, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) std::copy_n(b + kk * n + j0, n - j0, tail.data() + kk * kColBlock);
  }
  std::size_t r = 0;
  for (; r + kRowBlock <= m; r += kRowBlock) {
    gemm_rows<kRowBlock>(a + r * k, b, out + r * n, k, n, tail);
  }
  for (; r < m; ++r) gemm_rows<1>(a + r * k, b, out + r * n, k, n, tail);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(Shape{a.rows(), b.cols()});
  gemm(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Tensor bt = transpose(b);
  Tensor out(Shape{a.rows(), b.rows()});
  gemm(a.data(), bt.data(), out.data(), a.rows(), a.cols(), b.rows());
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_tn", a);
  require_rank2("matmul_tn", b);
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  // Eigen's small products peel by pointer alignment, so the bits would
  // depend on where the allocator put the operands.
  const Tensor at = transpose(a);
  Tensor out(Shape{a.cols(), b.cols()});
  gemm(at.data(), b.data(), out.data(), a.cols(), a.rows(), b.cols());
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::scalar(s);
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return Tensor::scalar(sum(x).item() / static_cast<double>(x.numel()));
}

Tensor row_sum(const Tensor& x) {
  require_rank2("row_sum", x);
  Tensor out(Shape{x.rows(), 1});
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[r * c + j];
    out[r] = s;
  }
  return out;
}

Tensor exp(const Tensor& x) {
  return map_unary(x, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) {
      throw DomainError("log: non-positive entry " + std::to_string(v));
    }
  }
  return map_unary(x, [](double v) { return std::log(v); });
}

Tensor square(const Tensor& x) {
  return map_unary(x, [](double v) { return v * v; });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw DomainError("sqrt: negative entry " + std::to_string(v));
  }
  return map_unary(x, [](double v) { return std::sqrt(v); });
}

Tensor abs(const Tensor& x) {
  return map_unary(x, [](double v) { return std::abs(v); });
}

Tensor maximum(const Tensor& x, double c) {
  return map_unary(x, [c](double v) { return v > c ? v : c; });
}

Tensor minimum(const Tensor& x, double c) {
  return map_unary(x, [c](double v) { return v < c ? v : c; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw DomainError("clamp: lo > hi");
  return map_unary(x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); });
}

Tensor tanh(const Tensor& x) {
  return map_unary(x, [](double v) { return std::tanh(v); });
}

// Kept strictly inside (0, 1): rounding would otherwise reach 1 near v = 37
// and 0 near v = -745.
Tensor sigmoid(const Tensor& x) {
  static constexpr double lo = std::numeric_limits<double>::denorm_min();
  static constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2;
  return map_unary(x, [](double v) {
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    return std::clamp(s, lo, hi);
  });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return map_unary(x, [slope](double v) { return v >= 0.0 ? v : slope * v; });
}

Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2("concat_cols", a);
  require_rank2("concat_cols", b);
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t ca = a.cols(), cb = b.cols();
  Tensor out(Shape{a.rows(), ca + cb});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < ca; ++j) out[r * (ca + cb) + j] = a[r * ca + j];
    for (std::size_t j = 0; j < cb; ++j) out[r * (ca + cb) + ca + j] = b[r * cb + j];
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2("slice_cols", x);
  if (begin > end || end > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of bounds for " + shape_str(x.shape()));
  }
  const std::size_t c = x.cols(), w = end - begin;
  Tensor out(Shape{x.rows(), w});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x[r * c + begin + j];
  }
  return out;
}

Tensor masked(const Tensor& x, const Tensor& mask) {
  return map_binary("masked", x, mask,
                    [](double v, double m) { return m != 0.0 ? v : 0.0; });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& x) { return neg(x); }
Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
Tensor operator+(double c, const Tensor& x) { return add_scalar(x, c); }
Tensor operator-(const Tensor& x, double c) { return add_scalar(x, -c); }
Tensor operator-(double c, const Tensor& x) { return add_scalar(neg(x), c); }

Tensor full(std::size_t rows, std::size_t cols, double value) {
  return Tensor(Shape{rows, cols}, value);
}

Tensor repeat_rows(const Tensor& v, std::size_t rows) {
  return add_row(full(rows, v.numel(), 0.0), v);
}

Tensor transpose(const Tensor& x) {
  require_rank2("transpose", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(Shape{n, m});
  const double* src = x.data();
  double* dst = out.data();
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < m; r0 += kTile) {
    for (std::size_t c0 = 0; c0 < n; c0 += kTile) {
      const std::size_t r1 = std::min(m, r0 + kTile), c1 = std::min(n, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t c = c0; c < c1; ++c) dst[c * m + r] = src[r * n + c];
      }
    }
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require_rank2("gather_rows", x);
  const std::size_t c = x.cols();
  Tensor out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[rows[i] * c + j];
  }
  return out;
}

}  // namespace dgm
