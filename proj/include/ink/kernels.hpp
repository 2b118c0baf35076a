#pragma once

// Batch scoring. The parallel kernels split samples across OpenMP threads;
// the serial versions are the reference they are tested against and must
// produce bit-identical results (each sample is scored independently).

#include "ink/encoder.hpp"
#include "ink/scores.hpp"
#include "ink/vmf.hpp"

namespace ink {

/// Scores every row of `inputs`.
[[nodiscard]] Vector score_batch(const ScoreFunction &score,
                                 const RowMatrix &inputs);
[[nodiscard]] Vector score_batch_serial(const ScoreFunction &score,
                                        const RowMatrix &inputs);

/// log_marginal for every row of `points`.
[[nodiscard]] Vector log_marginal_batch(const VmfMixture &mixture,
                                        const RowMatrix &points);
[[nodiscard]] Vector log_marginal_batch_serial(const VmfMixture &mixture,
                                               const RowMatrix &points);

/// Model outputs (embeddings or logits), one row per input, computed in
/// row blocks across threads.
[[nodiscard]] RowMatrix embed_batch(const EncoderModel &model,
                                    const RowMatrix &inputs);
[[nodiscard]] RowMatrix embed_batch_serial(const EncoderModel &model,
                                           const RowMatrix &inputs);

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
[[nodiscard]] int kernel_threads() noexcept;

} // namespace ink
