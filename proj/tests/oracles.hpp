#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these call into the library's numerical kernels.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace oracle {

// I_nu(x) = sum_m (x/2)^(2m+nu) / (m! Gamma(m+nu+1)), summed in long double
// until the terms stop changing the sum.
inline long double bessel_i_series(long double nu, long double x) {
  const long double half = x / 2;
  long double term = std::pow(half, nu) / std::tgamma(nu + 1);
  long double sum = term;
  for (int m = 1; m < 10000; ++m) {
    term *= half * half / (static_cast<long double>(m) * (m + nu));
    sum += term;
    if (term < sum * 1e-21L)
      break;
  }
  return sum;
}

// log Z_d(kappa) from the series, kappa > 0, moderate kappa only.
inline long double log_vmf_normalizer(int d, long double kappa) {
  const long double nu = d / 2.0L - 1;
  return nu * std::log(kappa) - (d / 2.0L) * std::log(2 * 3.14159265358979323846L) -
         std::log(bessel_i_series(nu, kappa));
}

// Direct (unshifted) sum of prior-weighted component densities.
inline long double log_marginal_direct(const Eigen::MatrixXd &means, // C x d
                                       std::span<const double> priors,
                                       long double kappa,
                                       const Eigen::VectorXd &z) {
  const long double log_z = log_vmf_normalizer(static_cast<int>(z.size()), kappa);
  long double total = 0;
  for (Eigen::Index j = 0; j < means.rows(); ++j) {
    long double dot = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i)
      dot += static_cast<long double>(means(j, i)) * z[i];
    total += priors[static_cast<std::size_t>(j)] * std::exp(log_z + kappa * dot);
  }
  return std::log(total);
}

// P(id > ood) + 0.5 P(tie) over all pairs, as an exact fraction
// (2 * greater + ties) / (2 m n).
inline double auroc_pairwise(std::span<const double> id, std::span<const double> ood) {
  long long twice = 0;
  for (double a : id)
    for (double b : ood)
      twice += a > b ? 2 : (a == b ? 1 : 0);
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Enumerates every candidate threshold (each ID score), keeps the largest
// one whose inclusive TPR reaches the target, then counts OOD at or above it.
inline double fpr_enumerated(std::span<const double> id, std::span<const double> ood,
                             double tpr) {
  double best = -INFINITY;
  for (double t : id) {
    std::size_t kept = 0;
    for (double s : id)
      kept += s >= t ? 1 : 0;
    if (static_cast<double>(kept) / static_cast<double>(id.size()) >= tpr)
      best = std::max(best, t);
  }
  std::size_t fp = 0;
  for (double s : ood)
    fp += s >= best ? 1 : 0;
  return static_cast<double>(fp) / static_cast<double>(ood.size());
}

// Negative distance to the k-th nearest row, by sorting all distances.
inline double knn_full_sort(const Eigen::MatrixXd &pool, const Eigen::VectorXd &z,
                            std::size_t k) {
  std::vector<long double> d;
  for (Eigen::Index i = 0; i < pool.rows(); ++i) {
    long double s = 0;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const long double diff = static_cast<long double>(pool(i, j)) - z[j];
      s += diff * diff;
    }
    d.push_back(s);
  }
  std::sort(d.begin(), d.end());
  return -static_cast<double>(std::sqrt(d[k - 1]));
}

// Gauss-Jordan inverse in long double.
inline std::vector<std::vector<long double>> inverse(const Eigen::MatrixXd &a) {
  const auto n = static_cast<std::size_t>(a.rows());
  std::vector<std::vector<long double>> m(n, std::vector<long double>(2 * n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      m[i][j] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    m[i][n + i] = 1;
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(m[r][c]) > std::fabs(m[p][c]))
        p = r;
    std::swap(m[c], m[p]);
    const long double pivot = m[c][c];
    for (auto &v : m[c])
      v /= pivot;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c)
        continue;
      const long double f = m[r][c];
      for (std::size_t j = 0; j < 2 * n; ++j)
        m[r][j] -= f * m[c][j];
    }
  }
  for (auto &row : m)
    row.erase(row.begin(), row.begin() + static_cast<long>(n));
  return m;
}

// -min_c (z - m_c)^T cov^-1 (z - m_c) with an explicit inverse.
inline double mahalanobis_explicit(const Eigen::MatrixXd &means,
                                   const Eigen::MatrixXd &cov, const Eigen::VectorXd &z) {
  const auto inv = inverse(cov);
  long double best = INFINITY;
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    std::vector<long double> diff(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i)
      diff[static_cast<std::size_t>(i)] = static_cast<long double>(z[i]) - means(c, i);
    long double q = 0;
    for (std::size_t i = 0; i < diff.size(); ++i)
      for (std::size_t j = 0; j < diff.size(); ++j)
        q += diff[i] * inv[i][j] * diff[j];
    best = std::min(best, q);
  }
  return -static_cast<double>(best);
}

// Central finite difference of f at x along coordinate i, in long double
// where the caller's function allows it.
// Mean of -log softmax_y(mu^T z / tau) over rows of z, in long double.
inline long double nll_loss(const Eigen::MatrixXd &mus, double tau, const Eigen::MatrixXd &z,
                            std::span<const std::uint32_t> labels) {
  long double total = 0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    std::vector<long double> logits(static_cast<std::size_t>(mus.rows()));
    long double peak = -INFINITY;
    for (Eigen::Index j = 0; j < mus.rows(); ++j) {
      long double dot = 0;
      for (Eigen::Index k = 0; k < z.cols(); ++k)
        dot += static_cast<long double>(mus(j, k)) * z(i, k);
      logits[static_cast<std::size_t>(j)] = dot / tau;
      peak = std::max(peak, logits[static_cast<std::size_t>(j)]);
    }
    long double sum = 0;
    for (long double l : logits)
      sum += std::exp(l - peak);
    total += peak + std::log(sum) - logits[labels[static_cast<std::size_t>(i)]];
  }
  return total / static_cast<long double>(z.rows());
}

// Central differences of f over every entry of m.
template <class F> Eigen::MatrixXd numeric_gradient(Eigen::MatrixXd &m, F &&f, double h = 1e-5) {
  Eigen::MatrixXd g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const double keep = m.data()[i];
    m.data()[i] = keep + h;
    const long double up = f();
    m.data()[i] = keep - h;
    const long double down = f();
    m.data()[i] = keep;
    g.data()[i] = static_cast<double>((up - down) / (2 * h));
  }
  return g;
}

inline double relative_error(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

} // namespace oracle
