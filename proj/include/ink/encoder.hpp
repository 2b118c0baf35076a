#pragma once

// Small feed-forward encoders trained with manual backpropagation.
//
// Batches are row-major: one sample per row. The hyperspherical encoder ends
// in an L2-normalize layer and is trained with the vMF negative
// log-likelihood against a PrototypeBank; the cross-entropy twin ends in an
// unconstrained affine head producing logits.

#include "ink/synth.hpp"
#include "ink/vmf.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace ink {

struct DenseLayer {
  Matrix weights; // out x in
  Vector bias;    // out

  [[nodiscard]] Eigen::Index in_dim() const noexcept { return weights.cols(); }
  [[nodiscard]] Eigen::Index out_dim() const noexcept { return weights.rows(); }
};

/// Per-layer forward/backward primitives. Backward functions take the
/// gradient w.r.t. the layer output and return the gradient w.r.t. its input.
namespace layers {

[[nodiscard]] Matrix affine_forward(const DenseLayer &layer, const Matrix &x);
/// Accumulates parameter gradients into `grad`.
[[nodiscard]] Matrix affine_backward(const DenseLayer &layer, const Matrix &x,
                                     const Matrix &grad_out, DenseLayer &grad);

[[nodiscard]] Matrix relu_forward(const Matrix &x);
[[nodiscard]] Matrix relu_backward(const Matrix &x, const Matrix &grad_out);

/// Row-wise x / ‖x‖; throws DegenerateEmbedding on a zero row.
[[nodiscard]] Matrix normalize_forward(const Matrix &x);
/// (g - (g.z) z) / ‖x‖ per row, z = x / ‖x‖.
[[nodiscard]] Matrix normalize_backward(const Matrix &x, const Matrix &grad_out);

} // namespace layers

enum class Head { Normalized, Logits };

class EncoderModel {
public:
  EncoderModel() = default;
  EncoderModel(std::vector<DenseLayer> layers, Head head);

  /// He-style uniform init, zero biases. `widths` = {d_in, hidden..., d_out}.
  static EncoderModel init(std::span<const int> widths, Head head, Rng &rng);

  [[nodiscard]] Eigen::Index dim_in() const { return layers_.front().in_dim(); }
  [[nodiscard]] Eigen::Index dim_out() const {
    return layers_.back().out_dim();
  }
  [[nodiscard]] Head head() const noexcept { return head_; }
  [[nodiscard]] const std::vector<DenseLayer> &layers() const noexcept {
    return layers_;
  }
  [[nodiscard]] std::vector<DenseLayer> &layers() noexcept { return layers_; }

  /// Unit-norm embedding; Normalized head only.
  [[nodiscard]] UnitVector forward(const Vector &x) const;
  /// Logits (Logits head) or embeddings (Normalized head), one row per input.
  [[nodiscard]] Matrix forward_batch(const Matrix &x) const;

  /// Activations kept for backward().
  struct Cache {
    std::vector<Matrix> inputs;   // input to each affine layer
    std::vector<Matrix> preacts;  // output of each affine layer
    Matrix output;                // final output (after normalize if any)
  };
  [[nodiscard]] Cache forward_cached(const Matrix &x) const;
  /// Parameter gradients for d(loss)/d(output) = grad_out.
  [[nodiscard]] std::vector<DenseLayer> backward(const Cache &cache,
                                                 const Matrix &grad_out) const;
  /// Gradient w.r.t. the input batch as well.
  [[nodiscard]] Matrix input_gradient(const Cache &cache,
                                      const Matrix &grad_out) const;

  friend bool operator==(const EncoderModel &a, const EncoderModel &b);

private:
  std::vector<DenseLayer> layers_;
  Head head_ = Head::Normalized;
};

/// Class prototypes on the sphere (rows of `mus`, C x d) with a temperature.
struct PrototypeBank {
  Matrix mus;
  double tau = 0.1;

  [[nodiscard]] Eigen::Index num_classes() const noexcept { return mus.rows(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return mus.cols(); }
  /// Throws unless every prototype is unit norm within 1e-9 and tau > 0.
  void validate() const;
  [[nodiscard]] static PrototypeBank from_mixture(const VmfMixture &mixture,
                                                  double tau);
  friend bool operator==(const PrototypeBank &a, const PrototypeBank &b);
};

struct LossResult {
  double loss = 0.0;
  Matrix grad; // d(loss)/dz, one row per sample
};

/// Mean over the batch of -log softmax_y(mu^T z / tau), with the analytic
/// gradient (1/tau) (sum_j p(j|z) mu_j - mu_y) / B. Non-empty `log_priors`
/// adds log p(y=j) to each logit (prior-weighted posterior).
[[nodiscard]] LossResult nll_loss(const PrototypeBank &bank, const Matrix &z,
                                  std::span<const std::uint32_t> labels,
                                  std::span<const double> log_priors = {});

/// d(loss)/d(mus) for the same loss, used by gradient prototype updates.
[[nodiscard]] Matrix nll_prototype_gradient(const PrototypeBank &bank,
                                            const Matrix &z,
                                            std::span<const std::uint32_t> labels,
                                            std::span<const double> log_priors = {});

/// Mean softmax cross-entropy over raw logits (temperature 1).
[[nodiscard]] LossResult cross_entropy_loss(const Matrix &logits,
                                            std::span<const std::uint32_t> labels);

enum class PrototypeUpdate { Ema, Gradient };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 0.5;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4; // L2 penalty on weights and biases
  double ema_momentum = 0.5;
  double tau_train = 0.1;
  std::vector<int> hidden{128, 128};
  int embedding_dim = 16;
  PrototypeUpdate prototype_update = PrototypeUpdate::Ema;
  // Put the training-set class frequencies into the vMF posterior.
  bool prior_weighted_loss = false;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  EncoderModel model;
  std::optional<PrototypeBank> bank; // set for the hyperspherical encoder
  std::vector<double> loss_trace;    // mean batch loss per epoch
};

/// Mini-batch SGD with momentum and cosine-annealed learning rate under the
/// vMF loss; prototypes follow per-batch EMA of class embedding means.
/// Throws NumericalDivergence on a non-finite loss or on 3 consecutive epochs
/// above 10x the first epoch's loss.
[[nodiscard]] TrainResult train(const RawInputSet &train_set,
                                const TrainConfig &config);

/// Same optimizer, cross-entropy on an unconstrained logit head.
[[nodiscard]] TrainResult train_ce_twin(const RawInputSet &train_set,
                                        const TrainConfig &config);

/// Number of classes implied by the labels; throws if any class in
/// [0, max label] is empty.
[[nodiscard]] int count_classes(std::span<const std::uint32_t> labels);

// SSMD checkpoints, little-endian:
//   "SSMD" | u32 version=1 | u32 flags (bit0 normalized head, bit1 bank)
//   | u32 layer count | per layer u32 out, u32 in
//   | per layer out*in f64 weights (row-major), out f64 bias
//   | if bank: u32 C, u32 d, f64 tau, C*d f64 prototypes
//   | f64 tau_train
inline constexpr std::uint32_t kSsmdVersion = 1;

struct Checkpoint {
  EncoderModel model;
  std::optional<PrototypeBank> bank;
  double tau_train = 0.1;
};

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace ink
