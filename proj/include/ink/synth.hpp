#pragma once

// Synthetic ID/OOD tasks drawn from vMF mixtures, lifted into a higher input
// dimension, plus the SSEM embedding file format.

#include "ink/vmf.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ink {

/// Points on the sphere (rows of `points`, count x dim) with class labels.
struct LabeledEmbeddingSet {
  std::string name;
  RowMatrix points;
  std::vector<std::uint32_t> labels;

  [[nodiscard]] Eigen::Index dim() const noexcept { return points.cols(); }
  [[nodiscard]] Eigen::Index size() const noexcept { return points.rows(); }
  [[nodiscard]] UnitVector point(Eigen::Index i) const {
    return UnitVector::from_normalized(points.row(i).transpose());
  }
  /// Throws unless labels match in length and every row is unit norm.
  void validate() const;

  friend bool operator==(const LabeledEmbeddingSet &a,
                         const LabeledEmbeddingSet &b) {
    return a.name == b.name && a.labels == b.labels &&
           a.points.rows() == b.points.rows() &&
           a.points.cols() == b.points.cols() && a.points == b.points;
  }
};

/// Raw (pre-embedding) inputs as rows. `labels` is empty for unlabeled sets.
struct RawInputSet {
  RowMatrix points;
  std::vector<std::uint32_t> labels;

  [[nodiscard]] Eigen::Index dim() const noexcept { return points.cols(); }
  [[nodiscard]] Eigen::Index size() const noexcept { return points.rows(); }
  [[nodiscard]] bool has_labels() const noexcept { return !labels.empty(); }
  void validate() const;

  friend bool operator==(const RawInputSet &a, const RawInputSet &b) {
    return a.labels == b.labels && a.points.rows() == b.points.rows() &&
           a.points.cols() == b.points.cols() && a.points == b.points;
  }
};

/// Fixed embedding of S^(d-1) into R^(d_in): x = basis * z + sigma * noise.
struct Lift {
  Matrix basis; // d_in x d, orthonormal columns
  double sigma = 0.05;

  [[nodiscard]] RawInputSet apply(const LabeledEmbeddingSet &set,
                                  std::uint64_t seed) const;
  /// basis^T x, renormalized.
  [[nodiscard]] UnitVector project(const Vector &x) const;
  [[nodiscard]] RowMatrix project_rows(const RowMatrix &x) const;
};

struct TaskParams {
  int d_in = 64;
  int d = 16;
  int num_classes = 10;
  double kappa = 30.0;
  std::vector<double> priors; // empty means uniform
  std::size_t n = 10000;      // split 80/20 into train/test
  double sigma_lift = 0.05;
  std::uint64_t seed = 0;
};

struct IdTask {
  RawInputSet train;
  RawInputSet test;
  VmfMixture truth;
  Lift lift;
  // The sphere points behind train/test, for exact-likelihood oracles.
  LabeledEmbeddingSet train_sphere;
  LabeledEmbeddingSet test_sphere;
};

/// Spreads C directions on S^(d-1): uniform draws followed by 50 projected
/// gradient steps on sum_{i<j} exp(s * cos_ij).
[[nodiscard]] std::vector<UnitVector> spread_means(int d, int count, Rng &rng);

[[nodiscard]] IdTask make_id_task(const TaskParams &params);

enum class OodKind { UniformSphere, ShiftedMixture, LowKappa };

[[nodiscard]] std::string_view to_string(OodKind kind) noexcept;
/// Accepts "uniform_sphere", "shifted_mixture", "low_kappa".
[[nodiscard]] OodKind parse_ood_kind(std::string_view name);

struct OodOptions {
  /// Rotation of each mean toward its nearest neighbor, in radians. Unset
  /// means half the minimum inter-mean angle.
  std::optional<double> shift_angle;
  double kappa_divisor = 4.0;
};

/// Half the smallest angle between two distinct mean directions.
[[nodiscard]] double default_shift_angle(const VmfMixture &reference);

/// The mixture whose means are rotated `angle` radians toward their nearest
/// neighbor in `reference`.
[[nodiscard]] VmfMixture shifted_mixture(const VmfMixture &reference,
                                         double angle);

/// OOD points on the sphere (labels hold the generating component, or 0 for
/// the uniform kind).
[[nodiscard]] LabeledEmbeddingSet sample_ood_sphere(OodKind kind,
                                                    const VmfMixture &reference,
                                                    std::size_t n,
                                                    std::uint64_t seed,
                                                    const OodOptions &opts = {});

/// OOD inputs lifted through the paired task's embedding; unlabeled.
[[nodiscard]] RawInputSet make_ood_set(OodKind kind, const VmfMixture &reference,
                                       const Lift &lift, std::size_t n,
                                       std::uint64_t seed,
                                       const OodOptions &opts = {});

/// x + x * eps elementwise, eps ~ N(0, sigma^2) i.i.d.
[[nodiscard]] RawInputSet speckle_corrupt(const RawInputSet &set, double sigma,
                                          std::uint64_t seed);

// SSEM files, little-endian:
//   "SSEM" | u32 version=1 | u32 flags (bit0 has_labels) | u32 dim | u64 count
//   | count*dim f64 (row-major) | count u32 labels if has_labels
inline constexpr std::uint32_t kSsemVersion = 1;

void save(const RawInputSet &set, const std::filesystem::path &path);
void save(const LabeledEmbeddingSet &set, const std::filesystem::path &path);

/// Throws MalformedHeader, TruncatedPayload, or DimensionMismatch (when
/// `expected_dim` is given and differs).
[[nodiscard]] RawInputSet
load_raw(const std::filesystem::path &path,
         std::optional<std::uint32_t> expected_dim = std::nullopt);

/// Like load_raw, but also checks unit norms. The name is the file stem.
[[nodiscard]] LabeledEmbeddingSet
load_embeddings(const std::filesystem::path &path,
                std::optional<std::uint32_t> expected_dim = std::nullopt);

} // namespace ink
