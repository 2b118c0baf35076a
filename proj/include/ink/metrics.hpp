#pragma once

// Detection metrics, latency measurement, temperature selection and the
// ssreport/1 report format.

#include "ink/detector.hpp"
#include "ink/encoder.hpp"
#include "ink/scores.hpp"
#include "ink/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ink {

/// P(ID score > OOD score) + 0.5 P(tie), from midranks in O((m+n) log(m+n)).
[[nodiscard]] double auroc(std::span<const double> id_scores,
                           std::span<const double> ood_scores);

/// Fraction of OOD scores at or above the threshold calibrate() picks for
/// `target_tpr`.
[[nodiscard]] double fpr_at_tpr(std::span<const double> id_scores,
                                std::span<const double> ood_scores,
                                double target_tpr = 0.95);

/// argmax-prototype accuracy.
[[nodiscard]] double id_accuracy(const PrototypeBank &bank,
                                 const RowMatrix &embeddings,
                                 std::span<const std::uint32_t> labels);
/// argmax-logit accuracy.
[[nodiscard]] double logit_accuracy(const RowMatrix &logits,
                                    std::span<const std::uint32_t> labels);

struct LatencyStats {
  double mean_us = 0.0;
  double std_us = 0.0;
  double median_us = 0.0;
  int repeats = 0;
  int batch = 0;
};

struct LatencyOptions {
  int repeats = 10;
  int batch = 10000;
  int warmup = 1000;
};

/// Per-sample wall-clock time of `score`, single-threaded, over `repeats`
/// timed batches of `batch` rows drawn cyclically from `samples`. Embedding
/// extraction is not included: `samples` are already score inputs.
[[nodiscard]] LatencyStats bench_score_latency(const ScoreFunction &score,
                                               const RowMatrix &samples,
                                               const LatencyOptions &opts = {});

/// `points` values log-spaced over [center / 100, center * 100].
[[nodiscard]] std::vector<double> default_tau_grid(double center,
                                                   int points = 17);

struct SweepTable {
  std::vector<double> taus;
  std::vector<std::string> ood_names;
  std::vector<std::vector<double>> auroc; // [tau][ood set]
  std::vector<double> mean_auroc;         // averaged over OOD sets

  /// Index of the best mean AUROC; ties go to the smaller tau.
  [[nodiscard]] std::size_t best_index() const;
  [[nodiscard]] double best_tau() const { return taus.at(best_index()); }
};

struct NamedEmbeddings {
  std::string name;
  RowMatrix embeddings;
};

/// INK AUROC of ID embeddings against each OOD set, for every tau.
[[nodiscard]] SweepTable temperature_sweep(const PrototypeBank &bank,
                                           const RowMatrix &id_test,
                                           std::span<const NamedEmbeddings> ood,
                                           std::span<const double> tau_grid);

using EmbedFn = std::function<RowMatrix(const RowMatrix &)>;

struct TauSelection {
  double tau = 0.0;
  SweepTable table;
};

/// Builds a speckle-corrupted copy of `id_val` as validation OOD, embeds both
/// with `embed`, and returns the tau with the highest INK AUROC.
[[nodiscard]] TauSelection
select_tau_by_corruption(const PrototypeBank &bank, const RawInputSet &id_val,
                         const EmbedFn &embed, double sigma,
                         std::span<const double> tau_grid, std::uint64_t seed);

struct Histogram {
  std::vector<double> edges; // bins + 1
  std::vector<std::size_t> id_counts;
  std::vector<std::size_t> ood_counts;
};

/// Fixed-width bins over the pooled range of both score sets.
[[nodiscard]] Histogram score_histogram(std::span<const double> id_scores,
                                        std::span<const double> ood_scores,
                                        int bins = 50);

struct ResultRow {
  std::string score;
  std::string ood_set;
  double auroc = 0.0;
  double fpr = 0.0;
};

struct TimingRow {
  std::string score;
  std::size_t pool_size = 0;
  LatencyStats stats;
};

/// In-memory form of an ssreport/1 file.
struct DetectionReport {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<CalibratedDetector> detectors;
  std::vector<ResultRow> results;
  std::vector<TimingRow> timing; // marked non-deterministic in the file
  std::vector<std::pair<double, double>> sweep; // tau -> mean AUROC
};

inline constexpr std::string_view kReportVersion = "ssreport/1";

void write_report(const DetectionReport &report,
                  const std::filesystem::path &path);
[[nodiscard]] DetectionReport read_report(const std::filesystem::path &path);

/// CSV: score,ood_set,bin,lo,hi,id_count,ood_count
void append_histogram_csv(std::string &csv, std::string_view score,
                          std::string_view ood_set, const Histogram &h);
/// CSV: tau,<ood names...>,mean_auroc
[[nodiscard]] std::string sweep_csv(const SweepTable &table);

} // namespace ink
