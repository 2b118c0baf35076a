#pragma once

// von Mises-Fisher distributions on the unit hypersphere S^(d-1).
//
// Density convention: p(z | mu, kappa) = Z_d(kappa) * exp(kappa * mu^T z), so
// Z_d is the multiplicative normalizer and log_normalizer() returns log Z_d.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ink {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Sample-major storage: one contiguous row per point.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Rng = std::mt19937_64;

/// A point on S^(d-1), d >= 2. Construction normalizes the input.
class UnitVector {
public:
  UnitVector() = default;
  /// Normalizes `v`; throws DegenerateEmbedding on a zero or non-finite vector.
  explicit UnitVector(Vector v);
  UnitVector(std::initializer_list<double> coords);

  /// Wraps `v` without normalizing; throws unless |‖v‖ - 1| <= tol.
  static UnitVector from_normalized(Vector v, double tol = 1e-9);

  [[nodiscard]] const Vector &coords() const noexcept { return v_; }
  [[nodiscard]] Eigen::Index dim() const noexcept { return v_.size(); }
  [[nodiscard]] double operator[](Eigen::Index i) const { return v_[i]; }
  [[nodiscard]] double dot(const UnitVector &o) const { return v_.dot(o.v_); }

private:
  Vector v_;
};

struct VmfComponent {
  UnitVector mu;
  double kappa = 0.0;
};

/// C components sharing one concentration, with class priors.
class VmfMixture {
public:
  VmfMixture(std::vector<UnitVector> means, double kappa,
             std::vector<double> priors);
  /// Uniform priors.
  VmfMixture(std::vector<UnitVector> means, double kappa);

  [[nodiscard]] std::size_t num_components() const noexcept {
    return means_.size();
  }
  [[nodiscard]] Eigen::Index dim() const noexcept { return means_[0].dim(); }
  [[nodiscard]] double kappa() const noexcept { return kappa_; }
  [[nodiscard]] const std::vector<UnitVector> &means() const noexcept {
    return means_;
  }
  [[nodiscard]] const std::vector<double> &priors() const noexcept {
    return priors_;
  }
  [[nodiscard]] VmfComponent component(std::size_t j) const {
    return {means_.at(j), kappa_};
  }
  /// Means stacked as rows (C x d).
  [[nodiscard]] Matrix mean_matrix() const;

private:
  std::vector<UnitVector> means_;
  double kappa_;
  std::vector<double> priors_;
};

/// log I_nu(x) for nu >= 0, x > 0. Power series below kBesselSeriesLimit,
/// uniform asymptotic (Debye) expansion above it for nu > 0, Hankel expansion
/// for nu == 0.
[[nodiscard]] double log_bessel_i(double nu, double x);
inline constexpr double kBesselSeriesLimit = 100.0;

/// log Z_d(kappa). kappa == 0 returns -log(surface area of S^(d-1)).
[[nodiscard]] double log_normalizer(int d, double kappa);

/// log of the surface area of S^(d-1).
[[nodiscard]] double log_sphere_area(int d);

/// Mean resultant length A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa).
[[nodiscard]] double mean_resultant_length(int d, double kappa);

[[nodiscard]] double log_pdf(const VmfComponent &component, const UnitVector &z);

/// log sum_j priors_j * p(z | mu_j, kappa), max-shifted. Zero priors are
/// skipped.
[[nodiscard]] double log_marginal(const VmfMixture &mixture, const UnitVector &z);

struct LabeledSample {
  UnitVector z;
  std::uint32_t label = 0;
};

/// Draws `n` labeled samples. Labels follow the priors; each point is drawn
/// from its component with Wood's rejection sampler. Deterministic in `seed`.
[[nodiscard]] std::vector<LabeledSample> sample(const VmfMixture &mixture,
                                                std::size_t n,
                                                std::uint64_t seed);

UnitVector sample_uniform_sphere(int d, Rng &rng);
UnitVector sample_vmf(const VmfComponent &c, Rng &rng);

/// Cosine w = mu^T z of a vMF draw, by rejection from the marginal
/// proportional to exp(kappa w) (1 - w^2)^((d-3)/2).
double sample_vmf_cosine(int d, double kappa, Rng &rng);

/// Haar-random matrix with orthonormal columns (rows x cols, rows >= cols),
/// via QR of a Gaussian matrix with the sign fix on R's diagonal.
Matrix random_orthonormal_columns(int rows, int cols, Rng &rng);

} // namespace ink
