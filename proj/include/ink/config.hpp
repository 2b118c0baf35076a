#pragma once

// Run configuration: a flat text file of `key = value` lines. Blank lines and
// lines starting with '#' are ignored; list values are comma-separated.

#include "ink/encoder.hpp"
#include "ink/scores.hpp"
#include "ink/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ink {

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "run";

  // generation
  int d_in = 64;
  int d = 16;
  int num_classes = 10;
  double kappa = 30.0;
  std::vector<double> priors; // empty means uniform
  std::size_t n = 10000;
  std::size_t n_ood = 2000;
  double sigma_lift = 0.05;
  std::vector<OodKind> ood_kinds{OodKind::UniformSphere,
                                 OodKind::ShiftedMixture, OodKind::LowKappa};

  // training
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 0.5;
  std::optional<double> ce_learning_rate; // defaults to learning_rate
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double ema_momentum = 0.5;
  double tau_train = 0.1;
  std::vector<int> hidden{128, 128};
  PrototypeUpdate prototype_update = PrototypeUpdate::Ema;
  std::optional<bool> prior_weighted_loss; // defaults to !priors.empty()

  // evaluation
  std::vector<ScoreKind> scores{ScoreKind::Ink, ScoreKind::Energy,
                                ScoreKind::MaxPosterior, ScoreKind::Knn,
                                ScoreKind::Mahalanobis};
  double tau_test = 0.05;
  double energy_tau = 1.0;
  double target_tpr = 0.95;
  std::size_t knn_k = 50;
  int histogram_bins = 50;

  // benchmarking
  std::vector<std::size_t> bench_pool_sizes{5000, 100000};
  int bench_repeats = 10;
  int bench_batch = 100;

  // temperature sweep
  int sweep_points = 17;
  std::optional<double> sweep_center; // defaults to tau_train
  bool sweep_validate = false;
  double speckle_sigma = 0.5;

  [[nodiscard]] TaskParams task_params() const;
  [[nodiscard]] TrainConfig train_config() const;
  /// Throws Config naming the offending field.
  void validate() const;
};

/// Parses config text; `seed` is mandatory. Throws Config errors that name
/// the offending key.
[[nodiscard]] RunConfig parse_config(std::string_view text);
[[nodiscard]] RunConfig load_config(const std::filesystem::path &path);

/// Parses a comma-separated score list ("ink,energy,knn").
[[nodiscard]] std::vector<ScoreKind> parse_score_list(std::string_view text);

} // namespace ink
