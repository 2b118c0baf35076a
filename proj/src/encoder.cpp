#include "ink/encoder.hpp"

#include "binary_io.hpp"
#include "ink/error.hpp"
#include "ink/seed.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace ink {

namespace layers {

Matrix affine_forward(const DenseLayer &layer, const Matrix &x) {
  require(x.cols() == layer.in_dim(), ErrorCode::DimensionMismatch,
          fmt::format("layer expects {} inputs, got {}", layer.in_dim(),
                      x.cols()));
  Matrix out = x * layer.weights.transpose();
  out.rowwise() += layer.bias.transpose();
  return out;
}

Matrix affine_backward(const DenseLayer &layer, const Matrix &x,
                       const Matrix &grad_out, DenseLayer &grad) {
  grad.weights.noalias() += grad_out.transpose() * x;
  grad.bias += grad_out.colwise().sum().transpose();
  return grad_out * layer.weights;
}

Matrix relu_forward(const Matrix &x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix &x, const Matrix &grad_out) {
  return (x.array() > 0.0).select(grad_out, 0.0);
}

Matrix normalize_forward(const Matrix &x) {
  Matrix z = x;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double norm = z.row(i).norm();
    require(std::isfinite(norm) && norm > 0.0, ErrorCode::DegenerateEmbedding,
            fmt::format("row {} has zero pre-normalization activation", i));
    z.row(i) /= norm;
  }
  return z;
}

Matrix normalize_backward(const Matrix &x, const Matrix &grad_out) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    const Eigen::RowVectorXd z = x.row(i) / norm;
    g.row(i) = (grad_out.row(i) - grad_out.row(i).dot(z) * z) / norm;
  }
  return g;
}

} // namespace layers

EncoderModel::EncoderModel(std::vector<DenseLayer> layers, Head head)
    : layers_(std::move(layers)), head_(head) {
  require(!layers_.empty(), ErrorCode::InvalidArgument,
          "model needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    require(layers_[l].bias.size() == layers_[l].out_dim(),
            ErrorCode::DimensionMismatch, "bias length must match layer output");
    if (l > 0)
      require(layers_[l].in_dim() == layers_[l - 1].out_dim(),
              ErrorCode::DimensionMismatch, "consecutive layer shapes differ");
  }
}

EncoderModel EncoderModel::init(std::span<const int> widths, Head head,
                                Rng &rng) {
  require(widths.size() >= 2, ErrorCode::InvalidArgument,
          "need input and output widths");
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    require(in >= 1 && out >= 1, ErrorCode::InvalidArgument,
            "layer widths must be positive");
    const double limit = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> unif(-limit, limit);
    DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j)
        layer.weights(i, j) = unif(rng);
    layers.push_back(std::move(layer));
  }
  return EncoderModel(std::move(layers), head);
}

EncoderModel::Cache EncoderModel::forward_cached(const Matrix &x) const {
  Cache cache;
  cache.inputs.reserve(layers_.size());
  cache.preacts.reserve(layers_.size());
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix h = layers::affine_forward(layers_[l], a);
    cache.inputs.push_back(std::move(a));
    a = l + 1 < layers_.size() ? layers::relu_forward(h) : h;
    cache.preacts.push_back(std::move(h));
  }
  cache.output = head_ == Head::Normalized ? layers::normalize_forward(a) : a;
  return cache;
}

Matrix EncoderModel::forward_batch(const Matrix &x) const {
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    a = layers::affine_forward(layers_[l], a);
    if (l + 1 < layers_.size())
      a = layers::relu_forward(a);
  }
  return head_ == Head::Normalized ? layers::normalize_forward(a) : a;
}

UnitVector EncoderModel::forward(const Vector &x) const {
  require(head_ == Head::Normalized, ErrorCode::InvalidArgument,
          "forward() needs a normalized head");
  const Matrix z = forward_batch(x.transpose());
  return UnitVector::from_normalized(z.row(0).transpose());
}

namespace {

// Runs backward through the stack; returns the input gradient.
Matrix backprop(const std::vector<DenseLayer> &layers, Head head,
                const EncoderModel::Cache &cache, const Matrix &grad_out,
                std::vector<DenseLayer> *grads) {
  Matrix g = head == Head::Normalized
                 ? layers::normalize_backward(cache.preacts.back(), grad_out)
                 : grad_out;
  DenseLayer scratch;
  for (std::size_t l = layers.size(); l-- > 0;) {
    DenseLayer &dst = grads ? (*grads)[l] : scratch;
    if (!grads)
      dst = {Matrix::Zero(layers[l].out_dim(), layers[l].in_dim()),
             Vector::Zero(layers[l].out_dim())};
    Matrix gin = layers::affine_backward(layers[l], cache.inputs[l], g, dst);
    g = l > 0 ? layers::relu_backward(cache.preacts[l - 1], gin) : gin;
  }
  return g;
}

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer> &layers) {
  std::vector<DenseLayer> out;
  out.reserve(layers.size());
  for (const auto &l : layers)
    out.push_back({Matrix::Zero(l.out_dim(), l.in_dim()),
                   Vector::Zero(l.out_dim())});
  return out;
}

} // namespace

std::vector<DenseLayer> EncoderModel::backward(const Cache &cache,
                                               const Matrix &grad_out) const {
  auto grads = zero_like(layers_);
  (void)backprop(layers_, head_, cache, grad_out, &grads);
  return grads;
}

Matrix EncoderModel::input_gradient(const Cache &cache,
                                    const Matrix &grad_out) const {
  return backprop(layers_, head_, cache, grad_out, nullptr);
}

bool operator==(const EncoderModel &a, const EncoderModel &b) {
  if (a.head_ != b.head_ || a.layers_.size() != b.layers_.size())
    return false;
  for (std::size_t l = 0; l < a.layers_.size(); ++l) {
    const auto &x = a.layers_[l];
    const auto &y = b.layers_[l];
    if (x.weights.rows() != y.weights.rows() ||
        x.weights.cols() != y.weights.cols() || x.weights != y.weights ||
        x.bias != y.bias)
      return false;
  }
  return true;
}

void PrototypeBank::validate() const {
  require(mus.rows() >= 1 && mus.cols() >= 2, ErrorCode::InvalidArgument,
          "prototype bank needs C >= 1 prototypes of dimension >= 2");
  require(std::isfinite(tau) && tau > 0.0, ErrorCode::InvalidArgument,
          "temperature must be positive");
  for (Eigen::Index c = 0; c < mus.rows(); ++c)
    require(std::abs(mus.row(c).norm() - 1.0) <= 1e-9,
            ErrorCode::InvalidArgument,
            fmt::format("prototype {} is not unit norm", c));
}

PrototypeBank PrototypeBank::from_mixture(const VmfMixture &mixture,
                                          double tau) {
  PrototypeBank bank{mixture.mean_matrix(), tau};
  bank.validate();
  return bank;
}

bool operator==(const PrototypeBank &a, const PrototypeBank &b) {
  return a.tau == b.tau && a.mus.rows() == b.mus.rows() &&
         a.mus.cols() == b.mus.cols() && a.mus == b.mus;
}

namespace {

void check_labels(std::span<const std::uint32_t> labels, Eigen::Index rows,
                  Eigen::Index classes) {
  require(labels.size() == static_cast<std::size_t>(rows),
          ErrorCode::DimensionMismatch, "one label per sample");
  require(rows >= 1, ErrorCode::InvalidArgument, "empty batch");
  for (auto y : labels)
    require(y < classes, ErrorCode::InvalidArgument,
            fmt::format("label {} out of range [0, {})", y, classes));
}

// Row-wise softmax and log-sum-exp of `logits`.
void softmax_rows(const Matrix &logits, Matrix &probs, Vector &lse) {
  probs.resize(logits.rows(), logits.cols());
  lse.resize(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double peak = logits.row(i).maxCoeff();
    probs.row(i) = (logits.row(i).array() - peak).exp();
    const double total = probs.row(i).sum();
    probs.row(i) /= total;
    lse[i] = peak + std::log(total);
  }
}

} // namespace

namespace {

Matrix vmf_logits(const PrototypeBank &bank, const Matrix &z,
                  std::span<const double> log_priors) {
  Matrix logits = (1.0 / bank.tau) * (z * bank.mus.transpose());
  if (!log_priors.empty()) {
    require(log_priors.size() == static_cast<std::size_t>(bank.num_classes()),
            ErrorCode::DimensionMismatch, "one log prior per class");
    logits.rowwise() +=
        Eigen::Map<const Eigen::RowVectorXd>(log_priors.data(), bank.num_classes());
  }
  return logits;
}

} // namespace

LossResult nll_loss(const PrototypeBank &bank, const Matrix &z,
                    std::span<const std::uint32_t> labels,
                    std::span<const double> log_priors) {
  require(z.cols() == bank.dim(), ErrorCode::DimensionMismatch,
          "embedding dimension differs from prototypes");
  check_labels(labels, z.rows(), bank.num_classes());
  const double inv_tau = 1.0 / bank.tau;
  const Matrix logits = vmf_logits(bank, z, log_priors);
  Matrix probs;
  Vector lse;
  softmax_rows(logits, probs, lse);
  const auto batch = static_cast<double>(z.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    loss += lse[i] - logits(i, labels[static_cast<std::size_t>(i)]);
    probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  return {loss / batch, (inv_tau / batch) * (probs * bank.mus)};
}

Matrix nll_prototype_gradient(const PrototypeBank &bank, const Matrix &z,
                              std::span<const std::uint32_t> labels,
                              std::span<const double> log_priors) {
  check_labels(labels, z.rows(), bank.num_classes());
  const double inv_tau = 1.0 / bank.tau;
  Matrix probs;
  Vector lse;
  softmax_rows(vmf_logits(bank, z, log_priors), probs, lse);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  return (inv_tau / static_cast<double>(z.rows())) * (probs.transpose() * z);
}

LossResult cross_entropy_loss(const Matrix &logits,
                              std::span<const std::uint32_t> labels) {
  check_labels(labels, logits.rows(), logits.cols());
  Matrix probs;
  Vector lse;
  softmax_rows(logits, probs, lse);
  const auto batch = static_cast<double>(logits.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    loss += lse[i] - logits(i, labels[static_cast<std::size_t>(i)]);
    probs(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  }
  return {loss / batch, probs / batch};
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::InvalidArgument, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::InvalidArgument,
          "batch_size must be >= 1");
  require(std::isfinite(learning_rate) && learning_rate >= 0.0,
          ErrorCode::InvalidArgument, "learning_rate must be >= 0");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0,
          ErrorCode::InvalidArgument, "weight_decay must be >= 0");
  require(sgd_momentum >= 0.0 && sgd_momentum < 1.0,
          ErrorCode::InvalidArgument, "sgd_momentum must lie in [0, 1)");
  // 1 freezes the prototypes.
  require(ema_momentum >= 0.0 && ema_momentum <= 1.0,
          ErrorCode::InvalidArgument, "ema_momentum must lie in [0, 1]");
  require(std::isfinite(tau_train) && tau_train > 0.0,
          ErrorCode::InvalidArgument, "tau_train must be positive");
  require(embedding_dim >= 2, ErrorCode::InvalidArgument,
          "embedding_dim must be >= 2");
  for (int h : hidden)
    require(h >= 1, ErrorCode::InvalidArgument, "hidden widths must be >= 1");
}

int count_classes(std::span<const std::uint32_t> labels) {
  require(!labels.empty(), ErrorCode::InvalidArgument, "no labels");
  const std::uint32_t top = *std::max_element(labels.begin(), labels.end());
  std::vector<std::size_t> counts(top + 1, 0);
  for (auto y : labels)
    ++counts[y];
  for (std::size_t c = 0; c < counts.size(); ++c)
    require(counts[c] > 0, ErrorCode::InvalidArgument,
            fmt::format("class {} has no training samples", c));
  return static_cast<int>(counts.size());
}

namespace {

Matrix gather_rows(const RowMatrix &m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) =
        m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

PrototypeBank initial_prototypes(const EncoderModel &model, const Matrix &x,
                                 std::span<const std::uint32_t> labels,
                                 int classes, double tau) {
  const Matrix z = model.forward_batch(x);
  Matrix sums = Matrix::Zero(classes, z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    sums.row(labels[static_cast<std::size_t>(i)]) += z.row(i);
  for (int c = 0; c < classes; ++c) {
    const double norm = sums.row(c).norm();
    require(norm > 0.0, ErrorCode::DegenerateEmbedding,
            fmt::format("class {} embeddings cancel at initialization", c));
    sums.row(c) /= norm;
  }
  return {std::move(sums), tau};
}

void ema_update(PrototypeBank &bank, const Matrix &z,
                std::span<const std::uint32_t> labels, double momentum) {
  const auto classes = bank.num_classes();
  Matrix sums = Matrix::Zero(classes, z.cols());
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += z.row(i);
    ++counts[labels[static_cast<std::size_t>(i)]];
  }
  for (Eigen::Index c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      continue;
    const Eigen::RowVectorXd mean = sums.row(c) / counts[static_cast<std::size_t>(c)];
    const Eigen::RowVectorXd blended =
        momentum * bank.mus.row(c) + (1.0 - momentum) * mean;
    const double norm = blended.norm();
    if (norm > 0.0)
      bank.mus.row(c) = blended / norm;
  }
}

enum class Objective { Vmf, CrossEntropy };

TrainResult run_training(const RawInputSet &train_set,
                         const TrainConfig &config, Objective objective) {
  config.validate();
  train_set.validate();
  require(train_set.has_labels(), ErrorCode::InvalidArgument,
          "training set needs labels");
  const int classes = count_classes(train_set.labels);
  const auto n = static_cast<std::size_t>(train_set.size());

  std::vector<int> widths;
  widths.push_back(static_cast<int>(train_set.dim()));
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  const bool vmf = objective == Objective::Vmf;
  widths.push_back(vmf ? config.embedding_dim : classes);

  Rng init_rng(derive_seed(config.seed, vmf ? "init_vmf" : "init_ce"));
  EncoderModel model = EncoderModel::init(
      widths, vmf ? Head::Normalized : Head::Logits, init_rng);
  std::vector<double> log_priors;
  if (vmf && config.prior_weighted_loss) {
    log_priors.assign(static_cast<std::size_t>(classes), 0.0);
    for (auto y : train_set.labels)
      log_priors[y] += 1.0;
    for (double &v : log_priors)
      v = std::log(v / static_cast<double>(n));
  }
  std::optional<PrototypeBank> bank;
  if (vmf)
    bank = initial_prototypes(model, train_set.points, train_set.labels,
                              classes, config.tau_train);

  auto velocity = zero_like(model.layers());
  Rng shuffle_rng(derive_seed(config.seed, vmf ? "shuffle_vmf" : "shuffle_ce"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double total_steps =
      static_cast<double>(steps_per_epoch) * config.epochs;
  std::size_t step = 0;

  TrainResult result;
  int over_limit = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(batch, n - start));
      const Matrix x = gather_rows(train_set.points, idx);
      std::vector<std::uint32_t> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        y[i] = train_set.labels[idx[i]];

      const auto cache = model.forward_cached(x);
      const LossResult lr = vmf ? nll_loss(*bank, cache.output, y, log_priors)
                                : cross_entropy_loss(cache.output, y);
      require(std::isfinite(lr.loss), ErrorCode::NumericalDivergence,
              fmt::format("non-finite loss at epoch {} step {}", epoch, step));
      epoch_loss += lr.loss * static_cast<double>(idx.size());

      const double rate = config.learning_rate * 0.5 *
                          (1.0 + std::cos(std::numbers::pi * step / total_steps));
      const auto grads = model.backward(cache, lr.grad);
      auto &params = model.layers();
      for (std::size_t l = 0; l < params.size(); ++l) {
        velocity[l].weights = config.sgd_momentum * velocity[l].weights +
                              grads[l].weights +
                              config.weight_decay * params[l].weights;
        velocity[l].bias = config.sgd_momentum * velocity[l].bias + grads[l].bias +
                           config.weight_decay * params[l].bias;
        params[l].weights -= rate * velocity[l].weights;
        params[l].bias -= rate * velocity[l].bias;
      }
      if (vmf) {
        if (config.prototype_update == PrototypeUpdate::Ema) {
          ema_update(*bank, cache.output, y, config.ema_momentum);
        } else {
          bank->mus -= rate * nll_prototype_gradient(*bank, cache.output, y, log_priors);
          bank->mus.rowwise().normalize();
        }
      }
    }
    epoch_loss /= static_cast<double>(n);
    require(std::isfinite(epoch_loss), ErrorCode::NumericalDivergence,
            fmt::format("non-finite loss at epoch {}", epoch));
    result.loss_trace.push_back(epoch_loss);
    over_limit = epoch_loss > 10.0 * result.loss_trace.front() ? over_limit + 1 : 0;
    require(over_limit < 3, ErrorCode::NumericalDivergence,
            fmt::format("loss {} exceeded 10x the initial {} for 3 epochs",
                        epoch_loss, result.loss_trace.front()));
  }
  // Guard against weights that blew up without the loss noticing.
  for (const auto &layer : model.layers())
    require(layer.weights.allFinite() && layer.bias.allFinite(),
            ErrorCode::NumericalDivergence, "non-finite parameters");
  result.model = std::move(model);
  result.bank = std::move(bank);
  return result;
}

} // namespace

TrainResult train(const RawInputSet &train_set, const TrainConfig &config) {
  return run_training(train_set, config, Objective::Vmf);
}

TrainResult train_ce_twin(const RawInputSet &train_set,
                          const TrainConfig &config) {
  return run_training(train_set, config, Objective::CrossEntropy);
}

// ---- SSMD ----

namespace {

constexpr std::array<char, 4> kSsmdMagic{'S', 'S', 'M', 'D'};

} // namespace

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path) {
  using detail::put_le;
  std::string buf(kSsmdMagic.data(), kSsmdMagic.size());
  const auto &layers = ckpt.model.layers();
  std::uint32_t flags = ckpt.model.head() == Head::Normalized ? 1u : 0u;
  if (ckpt.bank)
    flags |= 2u;
  put_le(buf, kSsmdVersion);
  put_le(buf, flags);
  put_le(buf, static_cast<std::uint32_t>(layers.size()));
  for (const auto &l : layers) {
    put_le(buf, static_cast<std::uint32_t>(l.out_dim()));
    put_le(buf, static_cast<std::uint32_t>(l.in_dim()));
  }
  for (const auto &l : layers) {
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j)
        put_le(buf, l.weights(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i)
      put_le(buf, l.bias[i]);
  }
  if (ckpt.bank) {
    const auto &mus = ckpt.bank->mus;
    put_le(buf, static_cast<std::uint32_t>(mus.rows()));
    put_le(buf, static_cast<std::uint32_t>(mus.cols()));
    put_le(buf, ckpt.bank->tau);
    for (Eigen::Index i = 0; i < mus.rows(); ++i)
      for (Eigen::Index j = 0; j < mus.cols(); ++j)
        put_le(buf, mus(i, j));
  }
  put_le(buf, ckpt.tau_train);
  detail::write_file(path, buf);
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  const std::string buf = detail::read_file(path);
  const auto where = path.string();
  require(buf.size() >= 16 &&
              std::equal(kSsmdMagic.begin(), kSsmdMagic.end(), buf.begin()),
          ErrorCode::MalformedHeader, fmt::format("'{}' is not SSMD", where));
  detail::ByteReader in(buf, where);
  in.skip(4);
  const auto version = in.read<std::uint32_t>();
  const auto flags = in.read<std::uint32_t>();
  const auto count = in.read<std::uint32_t>();
  require(version == kSsmdVersion, ErrorCode::MalformedHeader,
          fmt::format("'{}': unsupported version {}", where, version));
  require((flags & ~3u) == 0, ErrorCode::MalformedHeader,
          fmt::format("'{}': unknown flags {:#x}", where, flags));
  require(count >= 1 && count <= 64, ErrorCode::MalformedHeader,
          fmt::format("'{}': implausible layer count {}", where, count));
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(count);
  std::size_t params = 0;
  for (auto &[out, in_dim] : shapes) {
    out = in.read<std::uint32_t>();
    in_dim = in.read<std::uint32_t>();
    require(out >= 1 && in_dim >= 1, ErrorCode::MalformedHeader,
            fmt::format("'{}': zero layer width", where));
    params += std::size_t{out} * (std::size_t{in_dim} + 1);
  }
  require(params * 8 <= in.remaining(), ErrorCode::TruncatedPayload,
          fmt::format("'{}': parameters cut short", where));
  std::vector<DenseLayer> layers;
  for (auto [out, in_dim] : shapes) {
    DenseLayer l{Matrix(out, in_dim), Vector(out)};
    for (std::uint32_t i = 0; i < out; ++i)
      for (std::uint32_t j = 0; j < in_dim; ++j)
        l.weights(i, j) = in.read<double>();
    for (std::uint32_t i = 0; i < out; ++i)
      l.bias[i] = in.read<double>();
    layers.push_back(std::move(l));
  }
  Checkpoint ckpt;
  ckpt.model = EncoderModel(std::move(layers),
                            (flags & 1u) ? Head::Normalized : Head::Logits);
  if (flags & 2u) {
    const auto classes = in.read<std::uint32_t>();
    const auto dim = in.read<std::uint32_t>();
    require(dim == ckpt.model.dim_out(), ErrorCode::DimensionMismatch,
            fmt::format("'{}': prototypes have dimension {}, model emits {}",
                        where, dim, ckpt.model.dim_out()));
    PrototypeBank bank{Matrix(classes, dim), in.read<double>()};
    require(std::size_t{classes} * dim * 8 <= in.remaining(),
            ErrorCode::TruncatedPayload,
            fmt::format("'{}': prototypes cut short", where));
    for (std::uint32_t i = 0; i < classes; ++i)
      for (std::uint32_t j = 0; j < dim; ++j)
        bank.mus(i, j) = in.read<double>();
    bank.validate();
    ckpt.bank = std::move(bank);
  }
  ckpt.tau_train = in.read<double>();
  require(in.remaining() == 0, ErrorCode::MalformedHeader,
          fmt::format("'{}': trailing bytes after checkpoint", where));
  return ckpt;
}

} // namespace ink
