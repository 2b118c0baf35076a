#include "ink/vmf.hpp"

#include "ink/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace ink {

const char *to_string(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::InvalidArgument:
    return "invalid argument";
  case ErrorCode::DimensionMismatch:
    return "dimension mismatch";
  case ErrorCode::DegenerateEmbedding:
    return "degenerate embedding";
  case ErrorCode::MalformedHeader:
    return "malformed header";
  case ErrorCode::TruncatedPayload:
    return "truncated payload";
  case ErrorCode::NumericalDivergence:
    return "numerical divergence";
  case ErrorCode::NotPositiveDefinite:
    return "not positive definite";
  case ErrorCode::Config:
    return "config";
  case ErrorCode::Io:
    return "io";
  }
  return "unknown";
}

UnitVector::UnitVector(Vector v) : v_(std::move(v)) {
  require(v_.size() >= 2, ErrorCode::InvalidArgument,
          "unit vectors need dimension >= 2");
  const double norm = v_.norm();
  require(std::isfinite(norm) && norm > 0.0, ErrorCode::DegenerateEmbedding,
          "cannot normalize a zero or non-finite vector");
  v_ /= norm;
}

UnitVector::UnitVector(std::initializer_list<double> coords)
    : UnitVector(Vector(Eigen::Map<const Vector>(
          coords.begin(), static_cast<Eigen::Index>(coords.size())))) {}

UnitVector UnitVector::from_normalized(Vector v, double tol) {
  require(v.size() >= 2, ErrorCode::InvalidArgument,
          "unit vectors need dimension >= 2");
  const double norm = v.norm();
  require(std::abs(norm - 1.0) <= tol, ErrorCode::InvalidArgument,
          fmt::format("vector norm {} is not 1 within {}", norm, tol));
  UnitVector u;
  u.v_ = std::move(v);
  return u;
}

VmfMixture::VmfMixture(std::vector<UnitVector> means, double kappa,
                       std::vector<double> priors)
    : means_(std::move(means)), kappa_(kappa), priors_(std::move(priors)) {
  require(!means_.empty(), ErrorCode::InvalidArgument,
          "mixture needs at least one component");
  require(std::isfinite(kappa_) && kappa_ >= 0.0, ErrorCode::InvalidArgument,
          "kappa must be finite and nonnegative");
  require(priors_.size() == means_.size(), ErrorCode::DimensionMismatch,
          "one prior per component");
  const auto d = means_.front().dim();
  for (const auto &m : means_)
    require(m.dim() == d, ErrorCode::DimensionMismatch,
            "all mean directions must share one dimension");
  double total = 0.0;
  for (double p : priors_) {
    require(std::isfinite(p) && p >= 0.0, ErrorCode::InvalidArgument,
            "priors must be nonnegative");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorCode::InvalidArgument,
          fmt::format("priors sum to {}, not 1", total));
}

VmfMixture::VmfMixture(std::vector<UnitVector> means, double kappa)
    : VmfMixture(std::move(means), kappa,
                 std::vector<double>(means.size(), 1.0 / means.size())) {}

Matrix VmfMixture::mean_matrix() const {
  Matrix m(static_cast<Eigen::Index>(means_.size()), dim());
  for (std::size_t j = 0; j < means_.size(); ++j)
    m.row(static_cast<Eigen::Index>(j)) = means_[j].coords().transpose();
  return m;
}

namespace {

double log_bessel_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  for (int m = 1; m < 100000; ++m) {
    term *= q / (m * (m + nu));
    sum += term;
    if (term < sum * 1e-17 && m > 0.5 * x)
      break;
  }
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log(sum);
}

// Debye expansion in the form u_k(t) / nu^k = p^k * poly_k(t^2) with
// p = 1/sqrt(nu^2 + x^2), t = nu * p. It stays finite at nu == 0, where it
// reduces to the Hankel expansion.
double log_bessel_asymptotic(double nu, double x) {
  const double r = std::hypot(nu, x);
  const double p = 1.0 / r;
  const double t = nu * p;
  const double t2 = t * t;
  const double u1 = (3.0 - 5.0 * t2) / 24.0;
  const double u2 = (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
  const double u3 =
      (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) /
      414720.0;
  const double u4 =
      (4465125.0 +
       t2 * (-94121676.0 +
             t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0)))) /
      39813120.0;
  const double series = 1.0 + p * (u1 + p * (u2 + p * (u3 + p * u4)));
  const double eta = nu > 0.0 ? r + nu * std::log(x / (nu + r)) : x;
  return eta - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::log(r) +
         std::log(series);
}

} // namespace

double log_bessel_i(double nu, double x) {
  require(std::isfinite(nu) && nu >= 0.0, ErrorCode::InvalidArgument,
          "Bessel order must be finite and nonnegative");
  require(std::isfinite(x) && x > 0.0, ErrorCode::InvalidArgument,
          "Bessel argument must be finite and positive");
  if (x <= kBesselSeriesLimit)
    return log_bessel_series(nu, x);
  return log_bessel_asymptotic(nu, x);
}

double log_sphere_area(int d) {
  require(d >= 2, ErrorCode::InvalidArgument, "dimension must be >= 2");
  const double half = 0.5 * d;
  return std::numbers::ln2 + half * std::log(std::numbers::pi) -
         std::lgamma(half);
}

double log_normalizer(int d, double kappa) {
  require(d >= 2, ErrorCode::InvalidArgument, "dimension must be >= 2");
  require(std::isfinite(kappa) && kappa >= 0.0, ErrorCode::InvalidArgument,
          "kappa must be finite and nonnegative");
  if (kappa == 0.0)
    return -log_sphere_area(d);
  const double nu = 0.5 * d - 1.0;
  return nu * std::log(kappa) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(nu, kappa);
}

double mean_resultant_length(int d, double kappa) {
  require(d >= 2, ErrorCode::InvalidArgument, "dimension must be >= 2");
  if (kappa == 0.0)
    return 0.0;
  const double nu = 0.5 * d - 1.0;
  return std::exp(log_bessel_i(nu + 1.0, kappa) - log_bessel_i(nu, kappa));
}

double log_pdf(const VmfComponent &component, const UnitVector &z) {
  require(component.mu.dim() == z.dim(), ErrorCode::DimensionMismatch,
          fmt::format("mean has dimension {}, point has {}",
                      component.mu.dim(), z.dim()));
  const double logz =
      log_normalizer(static_cast<int>(z.dim()), component.kappa);
  if (component.kappa == 0.0)
    return logz;
  return logz + component.kappa * component.mu.dot(z);
}

double log_marginal(const VmfMixture &mixture, const UnitVector &z) {
  require(mixture.dim() == z.dim(), ErrorCode::DimensionMismatch,
          fmt::format("mixture has dimension {}, point has {}", mixture.dim(),
                      z.dim()));
  const double kappa = mixture.kappa();
  const auto &priors = mixture.priors();
  const auto &means = mixture.means();
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < means.size(); ++j)
    if (priors[j] > 0.0)
      peak = std::max(peak, std::log(priors[j]) + kappa * means[j].dot(z));
  double acc = 0.0;
  for (std::size_t j = 0; j < means.size(); ++j)
    if (priors[j] > 0.0)
      acc += std::exp(std::log(priors[j]) + kappa * means[j].dot(z) - peak);
  return log_normalizer(static_cast<int>(z.dim()), kappa) + peak +
         std::log(acc);
}

UnitVector sample_uniform_sphere(int d, Rng &rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (;;) {
    Vector v(d);
    for (int i = 0; i < d; ++i)
      v[i] = gauss(rng);
    if (v.norm() > 1e-300)
      return UnitVector(std::move(v));
  }
}

double sample_vmf_cosine(int d, double kappa, Rng &rng) {
  const double dm1 = d - 1.0;
  // b = (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1), rearranged to avoid cancellation.
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double one_minus_x0_sq = 4.0 * b / ((1.0 + b) * (1.0 + b));
  const double c = kappa * x0 + dm1 * std::log(one_minus_x0_sq);
  std::gamma_distribution<double> gamma(0.5 * dm1, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (;;) {
    const double ga = gamma(rng);
    const double gb = gamma(rng);
    const double beta = ga / (ga + gb);
    const double w = (1.0 - (1.0 + b) * beta) / (1.0 - (1.0 - b) * beta);
    const double u = unif(rng);
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u))
      return std::clamp(w, -1.0, 1.0);
  }
}

UnitVector sample_vmf(const VmfComponent &c, Rng &rng) {
  const int d = static_cast<int>(c.mu.dim());
  if (c.kappa == 0.0)
    return sample_uniform_sphere(d, rng);
  const double w = sample_vmf_cosine(d, c.kappa, rng);
  const Vector &mu = c.mu.coords();
  // Uniform tangent direction: Gaussian with the mu component projected out.
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector v(d);
  double vnorm = 0.0;
  do {
    for (int i = 0; i < d; ++i)
      v[i] = gauss(rng);
    v -= mu.dot(v) * mu;
    vnorm = v.norm();
  } while (vnorm < 1e-12);
  v /= vnorm;
  return UnitVector(w * mu + std::sqrt(std::max(0.0, 1.0 - w * w)) * v);
}

std::vector<LabeledSample> sample(const VmfMixture &mixture, std::size_t n,
                                  std::uint64_t seed) {
  require(n >= 1, ErrorCode::InvalidArgument, "sample count must be >= 1");
  Rng rng(seed);
  const auto &priors = mixture.priors();
  std::vector<double> cdf(priors.size());
  std::partial_sum(priors.begin(), priors.end(), cdf.begin());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unif(rng) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    auto label = static_cast<std::size_t>(it - cdf.begin());
    label = std::min(label, priors.size() - 1);
    // Never land on a zero-prior component through round-off.
    while (priors[label] == 0.0)
      label = label == 0 ? priors.size() - 1 : label - 1;
    out.push_back({sample_vmf(mixture.component(label), rng),
                   static_cast<std::uint32_t>(label)});
  }
  return out;
}

Matrix random_orthonormal_columns(int rows, int cols, Rng &rng) {
  require(rows >= cols && cols >= 1, ErrorCode::InvalidArgument,
          "need rows >= cols >= 1");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i)
      g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
  const Matrix &r = qr.matrixQR();
  for (int j = 0; j < cols; ++j)
    if (r(j, j) < 0.0)
      q.col(j) = -q.col(j);
  return q;
}

} // namespace ink
