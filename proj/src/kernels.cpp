#include "ink/kernels.hpp"

#include "ink/error.hpp"

#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ink {

namespace {

// Exceptions must not escape an OpenMP region; keep the first and rethrow.
class ErrorSlot {
public:
  template <class F> void run(F &&f) noexcept {
    try {
      f();
    } catch (...) {
      std::lock_guard lock(mutex_);
      if (!error_)
        error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_)
      std::rethrow_exception(error_);
  }

private:
  std::mutex mutex_;
  std::exception_ptr error_;
};

constexpr Eigen::Index kEmbedBlock = 256;

} // namespace

int kernel_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

Vector score_batch(const ScoreFunction &score, const RowMatrix &inputs) {
  const Eigen::Index n = inputs.rows();
  Vector out(n);
  ErrorSlot errors;
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i)
    errors.run([&] { out[i] = score(inputs.row(i)); });
  errors.rethrow();
  return out;
}

Vector score_batch_serial(const ScoreFunction &score, const RowMatrix &inputs) {
  Vector out(inputs.rows());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i)
    out[i] = score(inputs.row(i));
  return out;
}

Vector log_marginal_batch(const VmfMixture &mixture, const RowMatrix &points) {
  const Eigen::Index n = points.rows();
  Vector out(n);
  ErrorSlot errors;
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i)
    errors.run([&] {
      out[i] = log_marginal(
          mixture, UnitVector::from_normalized(points.row(i).transpose()));
    });
  errors.rethrow();
  return out;
}

Vector log_marginal_batch_serial(const VmfMixture &mixture,
                                 const RowMatrix &points) {
  Vector out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    out[i] = log_marginal(mixture,
                          UnitVector::from_normalized(points.row(i).transpose()));
  return out;
}

RowMatrix embed_batch(const EncoderModel &model, const RowMatrix &inputs) {
  const Eigen::Index n = inputs.rows();
  RowMatrix out(n, model.dim_out());
  const Eigen::Index blocks = (n + kEmbedBlock - 1) / kEmbedBlock;
  ErrorSlot errors;
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < blocks; ++b)
    errors.run([&] {
      const Eigen::Index start = b * kEmbedBlock;
      const Eigen::Index len = std::min(kEmbedBlock, n - start);
      out.middleRows(start, len) =
          model.forward_batch(inputs.middleRows(start, len));
    });
  errors.rethrow();
  return out;
}

RowMatrix embed_batch_serial(const EncoderModel &model,
                             const RowMatrix &inputs) {
  const Eigen::Index n = inputs.rows();
  RowMatrix out(n, model.dim_out());
  for (Eigen::Index start = 0; start < n; start += kEmbedBlock) {
    const Eigen::Index len = std::min(kEmbedBlock, n - start);
    out.middleRows(start, len) =
        model.forward_batch(inputs.middleRows(start, len));
  }
  return out;
}

} // namespace ink
