#include "ink/synth.hpp"

#include "binary_io.hpp"
#include "ink/error.hpp"
#include "ink/seed.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

namespace ink {

void LabeledEmbeddingSet::validate() const {
  require(labels.size() == static_cast<std::size_t>(points.rows()),
          ErrorCode::DimensionMismatch,
          fmt::format("{} points but {} labels", points.rows(), labels.size()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double norm = points.row(i).norm();
    require(std::abs(norm - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
            fmt::format("point {} has norm {}", i, norm));
  }
}

void RawInputSet::validate() const {
  require(labels.empty() ||
              labels.size() == static_cast<std::size_t>(points.rows()),
          ErrorCode::DimensionMismatch,
          fmt::format("{} points but {} labels", points.rows(), labels.size()));
  require(points.allFinite(), ErrorCode::InvalidArgument,
          "input values must be finite");
}

RawInputSet Lift::apply(const LabeledEmbeddingSet &set,
                        std::uint64_t seed) const {
  require(set.dim() == basis.cols(), ErrorCode::DimensionMismatch,
          "lift basis does not match embedding dimension");
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  RawInputSet out;
  out.points = set.points * basis.transpose();
  for (Eigen::Index i = 0; i < out.points.rows(); ++i)
    for (Eigen::Index j = 0; j < out.points.cols(); ++j)
      out.points(i, j) += gauss(rng);
  out.labels = set.labels;
  return out;
}

UnitVector Lift::project(const Vector &x) const {
  return UnitVector(Vector(basis.transpose() * x));
}

RowMatrix Lift::project_rows(const RowMatrix &x) const {
  RowMatrix z = x * basis;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double norm = z.row(i).norm();
    require(norm > 0.0, ErrorCode::DegenerateEmbedding,
            "projection of a zero input");
    z.row(i) /= norm;
  }
  return z;
}

std::vector<UnitVector> spread_means(int d, int count, Rng &rng) {
  constexpr int kSteps = 50;
  constexpr double kSharpness = 5.0;
  constexpr double kStep = 0.05;
  Matrix m(count, d);
  for (int i = 0; i < count; ++i)
    m.row(i) = sample_uniform_sphere(d, rng).coords().transpose();
  for (int step = 0; step < kSteps; ++step) {
    const Matrix cos = m * m.transpose();
    Matrix grad = Matrix::Zero(count, d);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < count; ++j)
        if (i != j)
          grad.row(i) += kSharpness * std::exp(kSharpness * (cos(i, j) - 1.0)) *
                         m.row(j);
    for (int i = 0; i < count; ++i) {
      // Tangent component only, then back onto the sphere.
      Eigen::RowVectorXd g = grad.row(i) - grad.row(i).dot(m.row(i)) * m.row(i);
      m.row(i) -= kStep * g;
      m.row(i).normalize();
    }
  }
  std::vector<UnitVector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.emplace_back(Vector(m.row(i).transpose()));
  return out;
}

namespace {

LabeledEmbeddingSet to_set(std::string name,
                           const std::vector<LabeledSample> &samples,
                           std::size_t begin, std::size_t end, int d) {
  LabeledEmbeddingSet set;
  set.name = std::move(name);
  set.points.resize(static_cast<Eigen::Index>(end - begin), d);
  set.labels.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    set.points.row(static_cast<Eigen::Index>(i - begin)) =
        samples[i].z.coords().transpose();
    set.labels.push_back(samples[i].label);
  }
  return set;
}

} // namespace

IdTask make_id_task(const TaskParams &params) {
  require(params.d >= 2, ErrorCode::InvalidArgument, "d must be >= 2");
  require(params.d_in >= params.d, ErrorCode::InvalidArgument,
          "d_in must be >= d");
  require(params.num_classes >= 2, ErrorCode::InvalidArgument,
          "need at least two classes");
  require(params.kappa > 0.0 && std::isfinite(params.kappa),
          ErrorCode::InvalidArgument, "kappa must be positive");
  require(params.n >= 5, ErrorCode::InvalidArgument,
          "need at least 5 samples for the 80/20 split");
  std::vector<double> priors = params.priors;
  if (priors.empty())
    priors.assign(static_cast<std::size_t>(params.num_classes),
                  1.0 / params.num_classes);
  require(priors.size() == static_cast<std::size_t>(params.num_classes),
          ErrorCode::InvalidArgument, "priors length must equal num_classes");
  double total = 0.0;
  for (double p : priors) {
    require(p >= 0.0 && std::isfinite(p), ErrorCode::InvalidArgument,
            "priors must be nonnegative");
    total += p;
  }
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
          fmt::format("priors sum to {}, not 1", total));
  // Absorb sub-1e-9 round-off so the mixture's 1e-12 check holds.
  for (double &p : priors)
    p /= total;

  Rng mean_rng(derive_seed(params.seed, "means"));
  auto means = spread_means(params.d, params.num_classes, mean_rng);
  VmfMixture truth(std::move(means), params.kappa, priors);

  Rng lift_rng(derive_seed(params.seed, "lift"));
  Lift lift{random_orthonormal_columns(params.d_in, params.d, lift_rng),
            params.sigma_lift};

  const auto samples =
      sample(truth, params.n, derive_seed(params.seed, "samples"));
  const std::size_t n_train = params.n * 4 / 5;
  auto train_sphere = to_set("id_train", samples, 0, n_train, params.d);
  auto test_sphere = to_set("id_test", samples, n_train, params.n, params.d);
  auto train = lift.apply(train_sphere, derive_seed(params.seed, "lift_train"));
  auto test = lift.apply(test_sphere, derive_seed(params.seed, "lift_test"));
  return IdTask{std::move(train),        std::move(test),
                std::move(truth),        std::move(lift),
                std::move(train_sphere), std::move(test_sphere)};
}

std::string_view to_string(OodKind kind) noexcept {
  switch (kind) {
  case OodKind::UniformSphere:
    return "uniform_sphere";
  case OodKind::ShiftedMixture:
    return "shifted_mixture";
  case OodKind::LowKappa:
    return "low_kappa";
  }
  return "unknown";
}

OodKind parse_ood_kind(std::string_view name) {
  for (auto kind :
       {OodKind::UniformSphere, OodKind::ShiftedMixture, OodKind::LowKappa})
    if (name == to_string(kind))
      return kind;
  throw Error(ErrorCode::InvalidArgument,
              fmt::format("unknown OOD kind '{}'", name));
}

double default_shift_angle(const VmfMixture &reference) {
  const auto &means = reference.means();
  double max_cos = -1.0;
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t j = i + 1; j < means.size(); ++j)
      max_cos = std::max(max_cos, means[i].dot(means[j]));
  if (means.size() < 2)
    return 0.0;
  return 0.5 * std::acos(std::clamp(max_cos, -1.0, 1.0));
}

VmfMixture shifted_mixture(const VmfMixture &reference, double angle) {
  const auto &means = reference.means();
  std::vector<UnitVector> shifted;
  shifted.reserve(means.size());
  for (std::size_t i = 0; i < means.size(); ++i) {
    std::size_t nearest = i;
    double best = -2.0;
    for (std::size_t j = 0; j < means.size(); ++j)
      if (j != i && means[i].dot(means[j]) > best) {
        best = means[i].dot(means[j]);
        nearest = j;
      }
    const Vector &mu = means[i].coords();
    Vector toward = means[nearest].coords() - best * mu;
    if (nearest == i || angle == 0.0 || toward.norm() < 1e-12) {
      shifted.push_back(means[i]);
      continue;
    }
    toward.normalize();
    shifted.emplace_back(Vector(std::cos(angle) * mu + std::sin(angle) * toward));
  }
  return VmfMixture(std::move(shifted), reference.kappa(), reference.priors());
}

LabeledEmbeddingSet sample_ood_sphere(OodKind kind, const VmfMixture &reference,
                                      std::size_t n, std::uint64_t seed,
                                      const OodOptions &opts) {
  require(n >= 1, ErrorCode::InvalidArgument, "OOD set size must be >= 1");
  const int d = static_cast<int>(reference.dim());
  switch (kind) {
  case OodKind::UniformSphere: {
    Rng rng(seed);
    LabeledEmbeddingSet set;
    set.name = std::string(to_string(kind));
    set.points.resize(static_cast<Eigen::Index>(n), d);
    for (std::size_t i = 0; i < n; ++i)
      set.points.row(static_cast<Eigen::Index>(i)) =
          sample_uniform_sphere(d, rng).coords().transpose();
    set.labels.assign(n, 0);
    return set;
  }
  case OodKind::ShiftedMixture: {
    const double angle = opts.shift_angle.value_or(default_shift_angle(reference));
    const auto samples = sample(shifted_mixture(reference, angle), n, seed);
    return to_set(std::string(to_string(kind)), samples, 0, n, d);
  }
  case OodKind::LowKappa: {
    require(opts.kappa_divisor > 0.0, ErrorCode::InvalidArgument,
            "kappa divisor must be positive");
    const VmfMixture broad(reference.means(),
                           reference.kappa() / opts.kappa_divisor,
                           reference.priors());
    return to_set(std::string(to_string(kind)), sample(broad, n, seed), 0, n, d);
  }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown OOD kind");
}

RawInputSet make_ood_set(OodKind kind, const VmfMixture &reference,
                         const Lift &lift, std::size_t n, std::uint64_t seed,
                         const OodOptions &opts) {
  const auto sphere = sample_ood_sphere(kind, reference, n,
                                        derive_seed(seed, "ood_sphere"), opts);
  auto raw = lift.apply(sphere, derive_seed(seed, "ood_lift"));
  raw.labels.clear();
  return raw;
}

RawInputSet speckle_corrupt(const RawInputSet &set, double sigma,
                            std::uint64_t seed) {
  require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::InvalidArgument,
          "speckle sigma must be nonnegative");
  RawInputSet out = set;
  if (sigma == 0.0)
    return out;
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (Eigen::Index i = 0; i < out.points.rows(); ++i)
    for (Eigen::Index j = 0; j < out.points.cols(); ++j)
      out.points(i, j) += out.points(i, j) * gauss(rng);
  return out;
}

// ---- SSEM ----

namespace {

using detail::get_le;
using detail::put_le;
using detail::read_file;
using detail::write_file;

constexpr std::array<char, 4> kSsemMagic{'S', 'S', 'E', 'M'};
constexpr std::size_t kSsemHeaderBytes = 4 + 4 + 4 + 4 + 8;

void write_ssem(const RowMatrix &points, const std::vector<std::uint32_t> &labels,
                const std::filesystem::path &path) {
  std::string buf;
  const auto count = static_cast<std::uint64_t>(points.rows());
  const auto dim = static_cast<std::uint32_t>(points.cols());
  buf.reserve(kSsemHeaderBytes + count * dim * 8 + labels.size() * 4);
  buf.append(kSsemMagic.data(), kSsemMagic.size());
  put_le(buf, kSsemVersion);
  put_le(buf, static_cast<std::uint32_t>(labels.empty() ? 0u : 1u));
  put_le(buf, dim);
  put_le(buf, count);
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (Eigen::Index j = 0; j < points.cols(); ++j)
      put_le(buf, points(i, j));
  for (auto label : labels)
    put_le(buf, label);
  write_file(path, buf);
}

struct SsemContents {
  RowMatrix points;
  std::vector<std::uint32_t> labels;
};

SsemContents read_ssem(const std::filesystem::path &path,
                       std::optional<std::uint32_t> expected_dim) {
  const std::string buf = read_file(path);
  const auto where = path.string();
  require(buf.size() >= kSsemHeaderBytes &&
              std::equal(kSsemMagic.begin(), kSsemMagic.end(), buf.begin()),
          ErrorCode::MalformedHeader, fmt::format("'{}' is not SSEM", where));
  const char *p = buf.data() + 4;
  const auto version = get_le<std::uint32_t>(p);
  const auto flags = get_le<std::uint32_t>(p + 4);
  const auto dim = get_le<std::uint32_t>(p + 8);
  const auto count = get_le<std::uint64_t>(p + 12);
  require(version == kSsemVersion, ErrorCode::MalformedHeader,
          fmt::format("'{}': unsupported version {}", where, version));
  require((flags & ~1u) == 0, ErrorCode::MalformedHeader,
          fmt::format("'{}': unknown flags {:#x}", where, flags));
  require(dim >= 1, ErrorCode::MalformedHeader,
          fmt::format("'{}': zero dimension", where));
  if (expected_dim)
    require(dim == *expected_dim, ErrorCode::DimensionMismatch,
            fmt::format("'{}': dimension {} but expected {}", where, dim,
                        *expected_dim));
  const bool has_labels = (flags & 1u) != 0;
  const std::size_t available = buf.size() - kSsemHeaderBytes;
  const std::size_t record = std::size_t{dim} * 8 + (has_labels ? 4 : 0);
  require(count <= available / record, ErrorCode::TruncatedPayload,
          fmt::format("'{}': header promises {} records, file holds {} bytes",
                      where, count, available));
  require(count * record == available, ErrorCode::MalformedHeader,
          fmt::format("'{}': trailing bytes after payload", where));

  SsemContents c;
  c.points.resize(static_cast<Eigen::Index>(count), dim);
  p = buf.data() + kSsemHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i)
    for (std::uint32_t j = 0; j < dim; ++j, p += 8)
      c.points(static_cast<Eigen::Index>(i), j) = get_le<double>(p);
  if (has_labels) {
    c.labels.resize(count);
    for (std::uint64_t i = 0; i < count; ++i, p += 4)
      c.labels[i] = get_le<std::uint32_t>(p);
  }
  return c;
}

} // namespace

void save(const RawInputSet &set, const std::filesystem::path &path) {
  set.validate();
  write_ssem(set.points, set.labels, path);
}

void save(const LabeledEmbeddingSet &set, const std::filesystem::path &path) {
  set.validate();
  write_ssem(set.points, set.labels, path);
}

RawInputSet load_raw(const std::filesystem::path &path,
                     std::optional<std::uint32_t> expected_dim) {
  auto c = read_ssem(path, expected_dim);
  return RawInputSet{std::move(c.points), std::move(c.labels)};
}

LabeledEmbeddingSet load_embeddings(const std::filesystem::path &path,
                                    std::optional<std::uint32_t> expected_dim) {
  auto c = read_ssem(path, expected_dim);
  LabeledEmbeddingSet set{path.stem().string(), std::move(c.points),
                          std::move(c.labels)};
  set.validate();
  return set;
}

} // namespace ink
