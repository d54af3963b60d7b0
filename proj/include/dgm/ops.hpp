#pragma once

// Eager tensor kernels. The recording versions in autodiff.hpp share these
// names and signatures, so model code can be written once as a template over
// the value type (Tensor for plain evaluation, Var for differentiation).

#include <cstddef>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Rejects any zero entry in the denominator.
Tensor div(const Tensor& a, const Tensor& b);

/// x (B x d) plus the row vector b (d) added to every row.
Tensor add_row(const Tensor& x, const Tensor& b);

Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);

/// a (m x k) times b (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// a (m x k) times transpose of b (n x k).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Transpose of a (k x m) times b (k x n).
Tensor matmul_tn(const Tensor& a, const Tensor& b);

/// Sum of all entries, returned as a scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Per-row sum: (B x d) -> (B x 1).
Tensor row_sum(const Tensor& x);

Tensor exp(const Tensor& x);
/// Rejects non-positive entries; callers that need a clamp apply it first.
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
/// Rejects negative entries.
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor maximum(const Tensor& x, double c);
Tensor minimum(const Tensor& x, double c);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor relu(const Tensor& x);

/// Column-wise concatenation of two batches with equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Columns [begin, end) of a batch.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Entries where mask is non-zero are kept, others set to zero.
Tensor masked(const Tensor& x, const Tensor& mask);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& x);
Tensor operator*(double c, const Tensor& x);
Tensor operator*(const Tensor& x, double c);
Tensor operator+(const Tensor& x, double c);
Tensor operator+(double c, const Tensor& x);
Tensor operator-(const Tensor& x, double c);
Tensor operator-(double c, const Tensor& x);

/// Rows-by-cols tensor filled with value.
Tensor full(std::size_t rows, std::size_t cols, double value);
/// Copies the row vector v into every row of a rows x d batch.
Tensor repeat_rows(const Tensor& v, std::size_t rows);
Tensor transpose(const Tensor& x);
/// Rows of x selected by index, in the given order.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);

}  // namespace dgm
