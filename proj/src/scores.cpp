#include "ink/scores.hpp"

#include "ink/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ink {

namespace {

void check_embedding(const PrototypeBank &bank, ConstRowRef z) {
  require(z.size() == bank.dim(), ErrorCode::DimensionMismatch,
          fmt::format("embedding has dimension {}, prototypes {}", z.size(),
                      bank.dim()));
  const double norm = z.norm();
  require(std::abs(norm - 1.0) <= kUnitNormTolerance,
          ErrorCode::InvalidArgument,
          fmt::format("embedding norm {} is off the unit sphere", norm));
}

void check_tau(double tau) {
  require(std::isfinite(tau) && tau > 0.0, ErrorCode::InvalidArgument,
          "temperature must be positive");
}

// log sum_j exp(v_j), max-shifted.
double log_sum_exp(const Eigen::RowVectorXd &v) {
  const double peak = v.maxCoeff();
  return peak + std::log((v.array() - peak).exp().sum());
}

} // namespace

double ink(const PrototypeBank &bank, ConstRowRef z, double tau_test) {
  check_tau(tau_test);
  check_embedding(bank, z);
  const Eigen::RowVectorXd sims = z * bank.mus.transpose();
  return tau_test * log_sum_exp(sims / tau_test);
}

double ink(const PrototypeBank &bank, const UnitVector &z, double tau_test) {
  return ink(bank, z.coords().transpose(), tau_test);
}

double ink_generalized(const PrototypeBank &bank, std::span<const double> priors,
                       ConstRowRef z, double tau_test) {
  check_tau(tau_test);
  check_embedding(bank, z);
  require(priors.size() == static_cast<std::size_t>(bank.num_classes()),
          ErrorCode::DimensionMismatch, "one prior per prototype");
  const Eigen::RowVectorXd sims = z * bank.mus.transpose();
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < priors.size(); ++j) {
    require(std::isfinite(priors[j]) && priors[j] >= 0.0,
            ErrorCode::InvalidArgument, "priors must be nonnegative");
    if (priors[j] > 0.0)
      peak = std::max(peak, std::log(priors[j]) +
                                sims[static_cast<Eigen::Index>(j)] / tau_test);
  }
  require(std::isfinite(peak), ErrorCode::InvalidArgument,
          "at least one prior must be positive");
  double acc = 0.0;
  for (std::size_t j = 0; j < priors.size(); ++j)
    if (priors[j] > 0.0)
      acc += std::exp(std::log(priors[j]) +
                      sims[static_cast<Eigen::Index>(j)] / tau_test - peak);
  return tau_test * (peak + std::log(acc));
}

double ink_generalized(const PrototypeBank &bank, std::span<const double> priors,
                       const UnitVector &z, double tau_test) {
  return ink_generalized(bank, priors, z.coords().transpose(), tau_test);
}

double max_posterior(const PrototypeBank &bank, ConstRowRef z,
                     double tau_test) {
  check_tau(tau_test);
  check_embedding(bank, z);
  const Eigen::RowVectorXd logits = (z * bank.mus.transpose()) / tau_test;
  // max softmax = exp(max - lse)
  return std::exp(logits.maxCoeff() - log_sum_exp(logits));
}

double max_posterior(const PrototypeBank &bank, const UnitVector &z,
                     double tau_test) {
  return max_posterior(bank, z.coords().transpose(), tau_test);
}

double energy_from_logits(ConstRowRef logits, double tau_test) {
  check_tau(tau_test);
  require(logits.size() >= 1, ErrorCode::InvalidArgument, "no logits");
  return tau_test * log_sum_exp(logits / tau_test);
}

double max_posterior_from_logits(ConstRowRef logits, double tau_test) {
  check_tau(tau_test);
  require(logits.size() >= 1, ErrorCode::InvalidArgument, "no logits");
  const Eigen::RowVectorXd scaled = logits / tau_test;
  return std::exp(scaled.maxCoeff() - log_sum_exp(scaled));
}

double energy(const EncoderModel &ce_model, const Vector &x, double tau_test) {
  require(ce_model.head() == Head::Logits, ErrorCode::InvalidArgument,
          "energy needs a logit-head model");
  const Matrix logits = ce_model.forward_batch(x.transpose());
  return energy_from_logits(logits.row(0), tau_test);
}

std::uint32_t predict_class(const PrototypeBank &bank, ConstRowRef z) {
  require(z.size() == bank.dim(), ErrorCode::DimensionMismatch,
          "embedding dimension differs from prototypes");
  Eigen::Index best = 0;
  (z * bank.mus.transpose()).maxCoeff(&best);
  return static_cast<std::uint32_t>(best);
}

KnnPool::KnnPool(RowMatrix points) : points_(std::move(points)) {
  require(points_.rows() >= 1, ErrorCode::InvalidArgument,
          "KNN pool is empty");
}

double KnnPool::score(ConstRowRef z, std::size_t k) const {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be >= 1");
  require(k <= static_cast<std::size_t>(points_.rows()),
          ErrorCode::InvalidArgument,
          fmt::format("k = {} exceeds pool size {}", k, points_.rows()));
  require(z.size() == points_.cols(), ErrorCode::DimensionMismatch,
          "query dimension differs from pool");
  const Eigen::Index n = points_.rows();
  const Eigen::Index d = points_.cols();
  std::vector<double> dist(static_cast<std::size_t>(n));
  const double *q = z.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double *p = points_.data() + i * d;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = p[j] - q[j];
      acc += diff * diff;
    }
    dist[static_cast<std::size_t>(i)] = acc;
  }
  auto kth = dist.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(dist.begin(), kth, dist.end());
  return -std::sqrt(*kth);
}

double knn_score(const KnnPool &pool, std::size_t k, const UnitVector &z) {
  return pool.score(z.coords().transpose(), k);
}

MahalanobisModel::MahalanobisModel(RowMatrix class_means,
                                   const Matrix &covariance)
    : means_(std::move(class_means)) {
  require(means_.rows() >= 1, ErrorCode::InvalidArgument,
          "need at least one class mean");
  require(covariance.rows() == means_.cols() &&
              covariance.cols() == means_.cols(),
          ErrorCode::DimensionMismatch, "covariance shape differs from means");
  require(covariance.isApprox(covariance.transpose(), 1e-12),
          ErrorCode::InvalidArgument, "covariance must be symmetric");
  chol_.compute(covariance);
  require(chol_.info() == Eigen::Success, ErrorCode::NotPositiveDefinite,
          "covariance is not positive definite");
}

MahalanobisModel MahalanobisModel::fit(const RowMatrix &embeddings,
                                       std::span<const std::uint32_t> labels) {
  require(labels.size() == static_cast<std::size_t>(embeddings.rows()),
          ErrorCode::DimensionMismatch, "one label per embedding");
  const int classes = count_classes(labels);
  const Eigen::Index d = embeddings.cols();
  RowMatrix means = RowMatrix::Zero(classes, d);
  std::vector<double> counts(static_cast<std::size_t>(classes), 0.0);
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    means.row(labels[static_cast<std::size_t>(i)]) += embeddings.row(i);
    counts[labels[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (int c = 0; c < classes; ++c)
    means.row(c) /= counts[static_cast<std::size_t>(c)];
  Matrix cov = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const Eigen::RowVectorXd centered =
        embeddings.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
    cov.noalias() += centered.transpose() * centered;
  }
  cov /= static_cast<double>(embeddings.rows());
  // Sphere-constrained embeddings leave the covariance rank-deficient.
  cov.diagonal().array() += 1e-6 * cov.trace() / static_cast<double>(d);
  return MahalanobisModel(std::move(means), cov);
}

double MahalanobisModel::score(ConstRowRef z) const {
  require(z.size() == means_.cols(), ErrorCode::DimensionMismatch,
          "query dimension differs from class means");
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < means_.rows(); ++c) {
    const Vector diff = (z - means_.row(c)).transpose();
    const Vector solved = chol_.matrixL().solve(diff);
    best = std::min(best, solved.squaredNorm());
  }
  return -best;
}

double mahalanobis_score(const MahalanobisModel &model, const UnitVector &z) {
  return model.score(z.coords().transpose());
}

std::string_view to_string(ScoreKind kind) noexcept {
  switch (kind) {
  case ScoreKind::Ink:
    return "ink";
  case ScoreKind::InkGeneralized:
    return "ink_generalized";
  case ScoreKind::Energy:
    return "energy";
  case ScoreKind::MaxPosterior:
    return "msp";
  case ScoreKind::LogitMaxPosterior:
    return "msp_ce";
  case ScoreKind::Knn:
    return "knn";
  case ScoreKind::Mahalanobis:
    return "mahalanobis";
  }
  return "unknown";
}

ScoreKind parse_score_kind(std::string_view name) {
  for (auto kind : {ScoreKind::Ink, ScoreKind::InkGeneralized,
                    ScoreKind::Energy, ScoreKind::MaxPosterior,
                    ScoreKind::LogitMaxPosterior, ScoreKind::Knn,
                    ScoreKind::Mahalanobis})
    if (name == to_string(kind))
      return kind;
  throw Error(ErrorCode::InvalidArgument,
              fmt::format("unknown score '{}'", name));
}

ScoreFunction ScoreFunction::ink(PrototypeBank bank, double tau_test) {
  bank.validate();
  check_tau(tau_test);
  return {ScoreKind::Ink, Prototypes{std::move(bank), {}, tau_test}};
}

ScoreFunction ScoreFunction::ink_generalized(PrototypeBank bank,
                                             std::vector<double> priors,
                                             double tau_test) {
  bank.validate();
  check_tau(tau_test);
  require(priors.size() == static_cast<std::size_t>(bank.num_classes()),
          ErrorCode::DimensionMismatch, "one prior per prototype");
  return {ScoreKind::InkGeneralized,
          Prototypes{std::move(bank), std::move(priors), tau_test}};
}

ScoreFunction ScoreFunction::max_posterior(PrototypeBank bank,
                                           double tau_test) {
  bank.validate();
  check_tau(tau_test);
  return {ScoreKind::MaxPosterior, Prototypes{std::move(bank), {}, tau_test}};
}

ScoreFunction ScoreFunction::energy(double tau_test) {
  check_tau(tau_test);
  return {ScoreKind::Energy, Energy{tau_test}};
}

ScoreFunction ScoreFunction::logit_max_posterior(double tau_test) {
  check_tau(tau_test);
  return {ScoreKind::LogitMaxPosterior, Energy{tau_test}};
}

ScoreFunction ScoreFunction::knn(std::shared_ptr<const KnnPool> pool,
                                 std::size_t k) {
  require(pool != nullptr, ErrorCode::InvalidArgument, "null KNN pool");
  require(k >= 1 && k <= static_cast<std::size_t>(pool->size()),
          ErrorCode::InvalidArgument, "k must lie in [1, pool size]");
  return {ScoreKind::Knn, Knn{std::move(pool), k}};
}

ScoreFunction
ScoreFunction::mahalanobis(std::shared_ptr<const MahalanobisModel> model) {
  require(model != nullptr, ErrorCode::InvalidArgument,
          "null Mahalanobis model");
  return {ScoreKind::Mahalanobis, Mahalanobis{std::move(model)}};
}

double ScoreFunction::operator()(ConstRowRef input) const {
  switch (kind_) {
  case ScoreKind::Ink: {
    const auto &p = std::get<Prototypes>(params_);
    return ink::ink(p.bank, input, p.tau);
  }
  case ScoreKind::InkGeneralized: {
    const auto &p = std::get<Prototypes>(params_);
    return ink::ink_generalized(p.bank, p.priors, input, p.tau);
  }
  case ScoreKind::MaxPosterior: {
    const auto &p = std::get<Prototypes>(params_);
    return ink::max_posterior(p.bank, input, p.tau);
  }
  case ScoreKind::Energy:
    return energy_from_logits(input, std::get<Energy>(params_).tau);
  case ScoreKind::LogitMaxPosterior:
    return max_posterior_from_logits(input, std::get<Energy>(params_).tau);
  case ScoreKind::Knn: {
    const auto &p = std::get<Knn>(params_);
    return p.pool->score(input, p.k);
  }
  case ScoreKind::Mahalanobis:
    return std::get<Mahalanobis>(params_).model->score(input);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown score kind");
}

MisalignmentReport
demonstrate_misalignment(const EncoderModel &ce_model,
                         const std::function<double(const Vector &)> &log_phi,
                         const RowMatrix &samples, double tau_test) {
  check_tau(tau_test);
  require(ce_model.head() == Head::Logits, ErrorCode::InvalidArgument,
          "misalignment demo needs a logit-head model");
  const Matrix logits = ce_model.forward_batch(samples);
  const Eigen::Index n = samples.rows();
  MisalignmentReport report;
  report.base_scores.resize(n);
  report.rescaled_scores.resize(n);
  report.score_difference.resize(n);
  report.expected_difference.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double shift = log_phi(samples.row(i).transpose());
    require(std::isfinite(shift), ErrorCode::InvalidArgument,
            "log phi must be finite");
    const Eigen::RowVectorXd base = logits.row(i);
    const Eigen::RowVectorXd rescaled =
        (base.array() + tau_test * shift).matrix();
    const double lse_base = log_sum_exp(base / tau_test);
    const double lse_rescaled = log_sum_exp(rescaled / tau_test);
    const Eigen::ArrayXd post_base =
        ((base / tau_test).array() - lse_base).exp().transpose();
    const Eigen::ArrayXd post_rescaled =
        ((rescaled / tau_test).array() - lse_rescaled).exp().transpose();
    report.max_posterior_discrepancy =
        std::max(report.max_posterior_discrepancy,
                 (post_base - post_rescaled).abs().maxCoeff());
    report.base_scores[i] = tau_test * lse_base;
    report.rescaled_scores[i] = tau_test * lse_rescaled;
    report.score_difference[i] = report.rescaled_scores[i] - report.base_scores[i];
    report.expected_difference[i] = tau_test * shift;
    report.max_shift_error =
        std::max(report.max_shift_error,
                 std::abs(report.score_difference[i] - report.expected_difference[i]));
  }
  return report;
}

} // namespace ink
