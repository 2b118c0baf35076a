#pragma once

#include <span>
#include <string>
#include <string_view>

namespace ink {

enum class Decision { Id, Ood };

/// Threshold rule g(x) = 1{score >= lambda}, calibrated on ID scores.
struct CalibratedDetector {
  std::string score_kind;
  double lambda = 0.0;
  double target_tpr = 0.95;

  [[nodiscard]] Decision decide(double score) const noexcept {
    return score >= lambda ? Decision::Id : Decision::Ood;
  }

  /// One-line text record: "detector kind=<k> lambda=<l> target_tpr=<t>".
  [[nodiscard]] std::string to_record() const;
  [[nodiscard]] static CalibratedDetector from_record(std::string_view line);
};

/// Smallest number of ID samples, out of n, whose fraction reaches `tpr`.
[[nodiscard]] std::size_t required_id_count(std::size_t n, double tpr);

/// Largest threshold that keeps at least `target_tpr` of `id_scores` at or
/// above it (lower empirical quantile, inclusive comparison).
[[nodiscard]] CalibratedDetector calibrate(std::span<const double> id_scores,
                                           double target_tpr = 0.95,
                                           std::string score_kind = {});

} // namespace ink
