#pragma once

// Test-time OOD scores. Every score is oriented so that higher means "more
// in-distribution".

#include "ink/encoder.hpp"
#include "ink/vmf.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

namespace ink {

using ConstRowRef = Eigen::Ref<const Eigen::RowVectorXd>;

/// Embeddings further than this from unit norm are rejected by the
/// likelihood-based scores.
inline constexpr double kUnitNormTolerance = 1e-6;

/// tau * log sum_j exp(mu_j^T z / tau), max-shifted.
[[nodiscard]] double ink(const PrototypeBank &bank, const UnitVector &z,
                         double tau_test);
[[nodiscard]] double ink(const PrototypeBank &bank, ConstRowRef z,
                         double tau_test);

/// tau * log sum_j p_j exp(mu_j^T z / tau). Zero priors drop out of the sum.
[[nodiscard]] double ink_generalized(const PrototypeBank &bank,
                                     std::span<const double> priors,
                                     ConstRowRef z, double tau_test);
[[nodiscard]] double ink_generalized(const PrototypeBank &bank,
                                     std::span<const double> priors,
                                     const UnitVector &z, double tau_test);

/// max_c softmax(mu_c^T z / tau).
[[nodiscard]] double max_posterior(const PrototypeBank &bank, ConstRowRef z,
                                   double tau_test);
[[nodiscard]] double max_posterior(const PrototypeBank &bank,
                                   const UnitVector &z, double tau_test);

/// max_c softmax(f_c / tau) over raw logits.
[[nodiscard]] double max_posterior_from_logits(ConstRowRef logits, double tau_test);

/// Negative energy, tau * log sum_j exp(f_j / tau), from raw logits.
[[nodiscard]] double energy_from_logits(ConstRowRef logits, double tau_test);
/// Negative energy of a logit-head model at input x.
[[nodiscard]] double energy(const EncoderModel &ce_model, const Vector &x,
                            double tau_test);

/// argmax_c mu_c^T z.
[[nodiscard]] std::uint32_t predict_class(const PrototypeBank &bank,
                                          ConstRowRef z);

/// Immutable embedding pool for exact k-nearest-neighbor search.
class KnnPool {
public:
  explicit KnnPool(RowMatrix points);

  [[nodiscard]] Eigen::Index size() const noexcept { return points_.rows(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return points_.cols(); }
  [[nodiscard]] const RowMatrix &points() const noexcept { return points_; }

  /// Negative Euclidean distance from z to its k-th nearest pool member.
  [[nodiscard]] double score(ConstRowRef z, std::size_t k) const;

private:
  RowMatrix points_;
};

[[nodiscard]] double knn_score(const KnnPool &pool, std::size_t k,
                               const UnitVector &z);

/// Shared-covariance Gaussian class model; scores -min_c (z-m_c)^T S^-1 (z-m_c).
class MahalanobisModel {
public:
  /// Uses `covariance` as given; throws NotPositiveDefinite if the Cholesky
  /// factorization fails.
  MahalanobisModel(RowMatrix class_means, const Matrix &covariance);

  /// Class means and pooled within-class covariance of labeled embeddings,
  /// regularized by 1e-6 * trace / d on the diagonal.
  static MahalanobisModel fit(const RowMatrix &embeddings,
                              std::span<const std::uint32_t> labels);

  [[nodiscard]] double score(ConstRowRef z) const;
  [[nodiscard]] const RowMatrix &class_means() const noexcept { return means_; }

private:
  RowMatrix means_;
  Eigen::LLT<Matrix> chol_;
};

[[nodiscard]] double mahalanobis_score(const MahalanobisModel &model,
                                       const UnitVector &z);

enum class ScoreKind {
  Ink,
  InkGeneralized,
  Energy,
  MaxPosterior,
  LogitMaxPosterior, // softmax of the cross-entropy twin's logits
  Knn,
  Mahalanobis
};

[[nodiscard]] std::string_view to_string(ScoreKind kind) noexcept;
/// Accepts "ink", "ink_generalized", "energy", "msp", "msp_ce", "knn",
/// "mahalanobis".
[[nodiscard]] ScoreKind parse_score_kind(std::string_view name);

/// What a score consumes: sphere embeddings or classifier logits.
enum class InputSpace { Embedding, Logits };

/// One scoring rule with its frozen parameters. Cheap to copy; the KNN pool
/// and Mahalanobis model are shared and immutable.
class ScoreFunction {
public:
  static ScoreFunction ink(PrototypeBank bank, double tau_test);
  static ScoreFunction ink_generalized(PrototypeBank bank,
                                       std::vector<double> priors,
                                       double tau_test);
  static ScoreFunction max_posterior(PrototypeBank bank, double tau_test);
  static ScoreFunction energy(double tau_test);
  /// max_c softmax(f_c / tau) over raw logits.
  static ScoreFunction logit_max_posterior(double tau_test);
  static ScoreFunction knn(std::shared_ptr<const KnnPool> pool, std::size_t k);
  static ScoreFunction mahalanobis(std::shared_ptr<const MahalanobisModel> model);

  [[nodiscard]] ScoreKind kind() const noexcept { return kind_; }
  [[nodiscard]] InputSpace input_space() const noexcept {
    return kind_ == ScoreKind::Energy || kind_ == ScoreKind::LogitMaxPosterior
               ? InputSpace::Logits
               : InputSpace::Embedding;
  }
  [[nodiscard]] std::string_view name() const noexcept {
    return to_string(kind_);
  }

  [[nodiscard]] double operator()(ConstRowRef input) const;

private:
  struct Prototypes {
    PrototypeBank bank;
    std::vector<double> priors;
    double tau;
  };
  struct Energy {
    double tau;
  };
  struct Knn {
    std::shared_ptr<const KnnPool> pool;
    std::size_t k;
  };
  struct Mahalanobis {
    std::shared_ptr<const MahalanobisModel> model;
  };

  ScoreFunction(ScoreKind kind,
                std::variant<Prototypes, Energy, Knn, Mahalanobis> params)
      : kind_(kind), params_(std::move(params)) {}

  ScoreKind kind_;
  std::variant<Prototypes, Energy, Knn, Mahalanobis> params_;
};

/// Result of rescaling a classifier's logits by a per-input function.
struct MisalignmentReport {
  double max_posterior_discrepancy = 0.0;
  double max_shift_error = 0.0; // max |(s' - s) - tau log phi|
  Vector base_scores;
  Vector rescaled_scores;
  Vector score_difference;    // s' - s per sample
  Vector expected_difference; // tau log phi per sample
};

/// Builds the twin model with logits f_j(x) + tau * log phi(x) and compares
/// it with `ce_model` on `samples` (one input per row): posteriors agree,
/// negative energies differ by tau * log phi(x). `log_phi` returns log phi(x).
[[nodiscard]] MisalignmentReport
demonstrate_misalignment(const EncoderModel &ce_model,
                         const std::function<double(const Vector &)> &log_phi,
                         const RowMatrix &samples, double tau_test);

} // namespace ink
