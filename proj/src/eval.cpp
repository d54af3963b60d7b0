#include "dgm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>

#include <json.hpp>

#include "dgm/data.hpp"
#include "dgm/error.hpp"

namespace dgm::eval {

namespace {

struct Kahan {
  double sum = 0.0, c = 0.0;
  void add(double v) {
    const double y = v - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

double distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t n = a.cols();
  const double* pa = a.data() + i * n;
  const double* pb = b.data() + j * n;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = pa[k] - pb[k];
    s += d * d;
  }
  return std::sqrt(s);
}

std::size_t thread_count() {
  const char* env = std::getenv("DGM_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const unsigned long v = std::strtoul(env, &end, 10);
  if (*end != '\0' || v == 0) return 1;
  return std::min<std::size_t>(v, 64);
}

// Σ_i Σ_j ‖a_i − b_j‖ over all ordered pairs. Each row's partial sum is
// formed independently and the partials are reduced in row order, so the
// result does not depend on the thread count.
double pair_sum(const Tensor& a, const Tensor& b) {
  std::vector<double> partial(a.rows(), 0.0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Kahan k;
      for (std::size_t j = 0; j < b.rows(); ++j) k.add(distance(a, i, b, j));
      partial[i] = k.sum;
    }
  };
  const std::size_t threads = std::min(thread_count(), std::max<std::size_t>(1, a.rows() / 64));
  if (threads <= 1) {
    work(0, a.rows());
  } else {
    std::vector<std::thread> pool;
    const std::size_t step = (a.rows() + threads - 1) / threads;
    for (std::size_t lo = 0; lo < a.rows(); lo += step) pool.emplace_back(work, lo, std::min(a.rows(), lo + step));
    for (auto& t : pool) t.join();
  }
  Kahan total;
  for (double v : partial) total.add(v);
  return total.sum;
}

bool lex_less(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  const auto va = a.values(), vb = b.values();
  return std::lexicographical_compare(va.begin(), va.end(), vb.begin(), vb.end());
}

void check_pair(const Tensor& x, const Tensor& y, const char* where) {
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols()) {
    throw ShapeError(std::string(where) + ": dimension mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  }
}

}  // namespace

double energy_statistic(const Tensor& x, const Tensor& y) {
  check_pair(x, y, "energy_statistic");
  if (x.rows() == 0 || y.rows() == 0) throw ShapeError("energy_statistic: empty sample");
  const double a = static_cast<double>(x.rows()), b = static_cast<double>(y.rows());
  // The cross sum runs in a canonical order so swapping x and y is exact,
  // and x = y reproduces the self sums operation for operation.
  const double cross = lex_less(y, x) ? pair_sum(y, x) : pair_sum(x, y);
  const double sx = pair_sum(x, x), sy = pair_sum(y, y);
  return a * b / (a + b) * ((2.0 * cross) / (a * b) - (sx / (a * a) + sy / (b * b)));
}

std::vector<std::size_t> min_cost_assignment(const Tensor& cost) {
  const std::size_t n = cost.rows();
  if (cost.rank() != 2 || cost.cols() != n) throw ShapeError("min_cost_assignment: cost must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting paths with row/column potentials; 1-based with a
  // virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> out(n);
  for (std::size_t j = 1; j <= n; ++j) out[match[j] - 1] = j - 1;
  return out;
}

double exact_w1(const Tensor& x, const Tensor& y) {
  check_pair(x, y, "exact_w1");
  if (x.rows() != y.rows()) {
    throw DomainError("exact_w1: sample counts differ (" + std::to_string(x.rows()) + " vs " +
                      std::to_string(y.rows()) + ")");
  }
  if (x.rows() == 0) throw ShapeError("exact_w1: empty sample");
  if (x.rows() > kMaxExactW1) {
    throw DomainError("exact_w1: " + std::to_string(x.rows()) + " samples exceed the limit of " +
                      std::to_string(kMaxExactW1));
  }
  const std::size_t n = x.rows();
  Tensor cost(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost.at(i, j) = distance(x, i, y, j);
  }
  const auto match = min_cost_assignment(cost);
  Kahan k;
  for (std::size_t i = 0; i < n; ++i) k.add(cost.at(i, match[i]));
  return k.sum / static_cast<double>(n);
}

RoundTrip inverse_consistency(const Map& forward, const Map& inverse, const Tensor& z, const Tensor& x) {
  auto stats = [](const Tensor& a, const Tensor& b, double& mx, double& mn) {
    if (a.shape() != b.shape()) throw ShapeError("inverse_consistency: round trip changed the shape");
    Kahan k;
    mx = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double d = distance(a, r, b, r);
      mx = std::max(mx, d);
      k.add(d);
    }
    mn = a.rows() == 0 ? 0.0 : k.sum / static_cast<double>(a.rows());
  };
  RoundTrip out;
  stats(inverse(forward(z)), z, out.latent_max, out.latent_mean);
  stats(forward(inverse(x)), x, out.data_max, out.data_mean);
  return out;
}

MomentDeltas moment_diagnostics(const Tensor& samples, MomentTarget target, double moons_noise) {
  if (samples.rank() != 2 || samples.rows() == 0) throw DomainError("moment_diagnostics: no samples");
  const std::size_t n = samples.cols(), rows = samples.rows();
  std::vector<double> tmean(n, 0.0), tcov(n * n, 0.0);
  if (target == MomentTarget::StandardNormal) {
    for (std::size_t i = 0; i < n; ++i) tcov[i * n + i] = 1.0;
  } else {
    if (n != 2) throw ShapeError("moment_diagnostics: moons target needs two columns");
    const auto m = data::moons_moments(moons_noise);
    tmean = m.mean;
    tcov = m.cov;
  }
  std::vector<double> mean(n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) mean[i] += samples.at(r, i);
  }
  for (double& m : mean) m /= static_cast<double>(rows);
  std::vector<double> cov(n * n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        cov[i * n + j] += (samples.at(r, i) - mean[i]) * (samples.at(r, j) - mean[j]);
      }
    }
  }
  MomentDeltas out;
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_delta.push_back(mean[i] - tmean[i]);
    out.max_abs_mean = std::max(out.max_abs_mean, std::abs(out.mean_delta.back()));
  }
  for (std::size_t k = 0; k < n * n; ++k) {
    out.cov_delta.push_back(cov[k] / static_cast<double>(rows) - tcov[k]);
    out.max_abs_cov = std::max(out.max_abs_cov, std::abs(out.cov_delta.back()));
  }
  return out;
}

std::string to_json(const EvalReport& r) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["model"] = r.model;
  j["energy_samples"] = r.energy_samples;
  j["energy_stat"] = r.energy_stat;
  j["exact_w1"] = opt(r.exact_w1);
  j["nll"] = opt(r.nll);
  if (r.inverse) {
    j["inverse"] = {{"latent_max", r.inverse->latent_max},
                    {"latent_mean", r.inverse->latent_mean},
                    {"data_max", r.inverse->data_max},
                    {"data_mean", r.inverse->data_mean}};
  } else {
    j["inverse"] = nullptr;
  }
  if (r.moments) {
    j["moments"] = {{"mean_delta", r.moments->mean_delta}, {"cov_delta", r.moments->cov_delta}};
  } else {
    j["moments"] = nullptr;
  }
  return j.dump(2) + "\n";
}

}  // namespace dgm::eval
