#include "ink/encoder.hpp"
#include "ink/error.hpp"
#include "ink/kernels.hpp"
#include "ink/metrics.hpp"
#include "ink/scores.hpp"
#include "ink/seed.hpp"
#include "ink/synth.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ink;
namespace fs = std::filesystem;
using oracle::numeric_gradient;
using oracle::relative_error;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng &rng) {
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = g(rng);
  return m;
}

Matrix random_unit_rows(Eigen::Index r, Eigen::Index c, Rng &rng) {
  Matrix m = random_matrix(r, c, rng);
  m.rowwise().normalize();
  return m;
}

std::vector<std::uint32_t> random_labels(std::size_t n, int classes, Rng &rng) {
  std::uniform_int_distribution<int> u(0, classes - 1);
  std::vector<std::uint32_t> out(n);
  for (auto &y : out)
    y = static_cast<std::uint32_t>(u(rng));
  return out;
}

// Scalar probe L = sum(W .* output) so d L / d output = W.
double probe(const Matrix &out, const Matrix &w) { return out.cwiseProduct(w).sum(); }

} // namespace

TEST_CASE("forward examples") {
  DenseLayer id{Matrix::Identity(2, 2), Vector::Zero(2)};
  const EncoderModel model({id}, Head::Normalized);
  const UnitVector z = model.forward(Vector{{3.0, 4.0}});
  CHECK(z[0] == doctest::Approx(0.6));
  CHECK(z[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS((void)model.forward(Vector::Zero(2)), Error);

  Rng rng(1);
  const std::array widths{12, 32, 32, 5};
  const auto net = EncoderModel::init(widths, Head::Normalized, rng);
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_matrix(12, 1, rng);
    const UnitVector a = net.forward(x);
    CHECK(std::abs(a.coords().norm() - 1.0) < 1e-9);
    CHECK(a.coords() == net.forward(x).coords());
  }
  CHECK_THROWS_AS((void)net.forward(Vector::Zero(11)), Error);
}

TEST_CASE("nll_loss examples") {
  PrototypeBank bank{Matrix{{1.0, 0.0}, {-1.0, 0.0}}, 1.0};
  const Matrix z{{1.0, 0.0}};
  const std::vector<std::uint32_t> y{0};
  const auto r = nll_loss(bank, z, y);
  CHECK(r.loss == doctest::Approx(std::log(1 + std::exp(-2.0))).epsilon(1e-14));
  CHECK(r.loss == doctest::Approx(0.12693).epsilon(1e-4));

  // equidistant from every prototype
  PrototypeBank square{Matrix{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {-1.0, 0.0, 0.0}, {0.0, -1.0, 0.0}},
                       0.1};
  const std::vector<std::uint32_t> y2{2};
  CHECK(nll_loss(square, Matrix{{0.0, 0.0, 1.0}}, y2).loss ==
        doctest::Approx(std::log(4.0)).epsilon(1e-14));

  const std::vector<std::uint32_t> bad{5};
  CHECK_THROWS_AS((void)nll_loss(bank, z, bad), Error);

  // prior-weighted posterior: p0 e / (p0 e + p1 e^-1)
  const std::vector<double> log_priors{std::log(0.25), std::log(0.75)};
  const auto w = nll_loss(bank, z, y, log_priors);
  CHECK(w.loss == doctest::Approx(std::log(1 + 3 * std::exp(-2.0))).epsilon(1e-14));
  const std::vector<double> flat{std::log(0.5), std::log(0.5)};
  CHECK(nll_loss(bank, z, y, flat).loss == doctest::Approx(r.loss).epsilon(1e-14));
  // gradient keeps the same form with the weighted posterior
  const double p1 = 3 * std::exp(-2.0) / (1 + 3 * std::exp(-2.0));
  CHECK(w.grad(0, 0) == doctest::Approx(-2 * p1).epsilon(1e-12));
  const std::vector<double> short_priors{0.0};
  CHECK_THROWS_AS((void)nll_loss(bank, z, y, short_priors), Error);
}

TEST_CASE("nll_loss gradient matches finite differences") {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const int classes = 2 + t % 5;
    const int d = 2 + t % 7;
    const Eigen::Index batch = 1 + t % 6;
    PrototypeBank bank{random_unit_rows(classes, d, rng), 0.1 + 0.05 * (t % 10)};
    Matrix z = random_unit_rows(batch, d, rng);
    const auto y = random_labels(static_cast<std::size_t>(batch), classes, rng);
    const Matrix analytic = nll_loss(bank, z, y).grad;
    const Matrix numeric = numeric_gradient(z, [&] { return oracle::nll_loss(bank.mus, bank.tau, z, y); });
    CHECK(relative_error(analytic, numeric) < 1e-6);

    Matrix mus = bank.mus;
    const Matrix proto = nll_prototype_gradient(bank, z, y);
    const Matrix proto_num = numeric_gradient(mus, [&] {
      return oracle::nll_loss(mus, bank.tau, z, y);
    });
    CHECK(relative_error(proto, proto_num) < 1e-5);
  }
}

TEST_CASE("cross-entropy gradient matches finite differences") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const int classes = 2 + t % 6;
    Matrix logits = 3.0 * random_matrix(1 + t % 5, classes, rng);
    const auto y = random_labels(static_cast<std::size_t>(logits.rows()), classes, rng);
    const Matrix analytic = cross_entropy_loss(logits, y).grad;
    const Matrix numeric =
        numeric_gradient(logits, [&] { return cross_entropy_loss(logits, y).loss; });
    CHECK(relative_error(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index batch = 1 + t % 4;
    const Eigen::Index in = 2 + t % 5;
    const Eigen::Index out = 2 + (t * 3) % 6;

    { // affine
      DenseLayer layer{random_matrix(out, in, rng), random_matrix(out, 1, rng)};
      Matrix x = random_matrix(batch, in, rng);
      const Matrix w = random_matrix(batch, out, rng);
      DenseLayer grad{Matrix::Zero(out, in), Vector::Zero(out)};
      const Matrix gx = layers::affine_backward(layer, x, w, grad);
      const auto loss = [&] { return probe(layers::affine_forward(layer, x), w); };
      CHECK(relative_error(gx, numeric_gradient(x, loss)) < 1e-5);
      CHECK(relative_error(grad.weights, numeric_gradient(layer.weights, loss)) < 1e-5);
      Matrix bias = layer.bias;
      const Matrix gb = numeric_gradient(bias, [&] {
        DenseLayer l2{layer.weights, bias};
        return probe(layers::affine_forward(l2, x), w);
      });
      CHECK(relative_error(grad.bias, gb) < 1e-5);
    }
    { // relu
      Matrix x = random_matrix(batch, in, rng);
      // keep entries away from the kink
      x = x.unaryExpr([](double v) { return std::abs(v) < 1e-3 ? v + 0.01 : v; });
      const Matrix w = random_matrix(batch, in, rng);
      const Matrix gx = layers::relu_backward(x, w);
      CHECK(relative_error(gx, numeric_gradient(x, [&] {
              return probe(layers::relu_forward(x), w);
            })) < 1e-5);
    }
    { // normalize
      Matrix x = random_matrix(batch, in, rng);
      const Matrix w = random_matrix(batch, in, rng);
      const Matrix gx = layers::normalize_backward(x, w);
      CHECK(relative_error(gx, numeric_gradient(x, [&] {
              return probe(layers::normalize_forward(x), w);
            })) < 1e-5);
      // projected: orthogonal to the input direction
      for (Eigen::Index i = 0; i < batch; ++i)
        CHECK(std::abs(gx.row(i).dot(x.row(i))) < 1e-12 * x.row(i).norm() * gx.row(i).norm() + 1e-14);
    }
  }
}

TEST_CASE("end-to-end backprop matches finite differences") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Head head = t % 2 == 0 ? Head::Normalized : Head::Logits;
    const std::array widths{4 + t % 3, 6, 5, 3};
    auto model = EncoderModel::init(widths, head, rng);
    for (auto &l : model.layers())
      l.bias = 0.1 * random_matrix(l.out_dim(), 1, rng);
    const Matrix x = random_matrix(3, widths[0], rng);
    const auto y = random_labels(3, 3, rng);
    PrototypeBank bank{random_unit_rows(3, 3, rng), 0.2};
    const auto loss_of = [&](const EncoderModel &m) {
      const Matrix out = m.forward_batch(x);
      return head == Head::Normalized ? nll_loss(bank, out, y).loss
                                      : cross_entropy_loss(out, y).loss;
    };
    const auto cache = model.forward_cached(x);
    const Matrix g_out = head == Head::Normalized ? nll_loss(bank, cache.output, y).grad
                                                  : cross_entropy_loss(cache.output, y).grad;
    const auto grads = model.backward(cache, g_out);
    for (std::size_t l = 0; l < grads.size(); ++l) {
      Matrix &w = model.layers()[l].weights;
      CHECK(relative_error(grads[l].weights, numeric_gradient(w, [&] { return loss_of(model); })) <
            1e-5);
      Matrix b = model.layers()[l].bias;
      const Matrix gb = numeric_gradient(b, [&] {
        model.layers()[l].bias = b;
        return loss_of(model);
      });
      model.layers()[l].bias = b;
      CHECK(relative_error(grads[l].bias, gb) < 1e-5);
    }
  }
}

TEST_CASE("a gradient step pulls toward the target and pushes from the rival mean") {
  Rng rng(6);
  int rival_increases = 0, target_decreases = 0;
  for (int t = 0; t < 100; ++t) {
    const int classes = 3 + t % 5;
    const int d = 3 + t % 6;
    PrototypeBank bank{random_unit_rows(classes, d, rng), 0.1 + 0.1 * (t % 5)};
    const Matrix z = random_unit_rows(1, d, rng);
    const std::vector<std::uint32_t> y{static_cast<std::uint32_t>(t % classes)};
    const auto res = nll_loss(bank, z, y);

    const Eigen::VectorXd logits = bank.mus * z.row(0).transpose() / bank.tau;
    const Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp().matrix();
    const Eigen::VectorXd post = p / p.sum();
    Eigen::RowVectorXd rival_mean = Eigen::RowVectorXd::Zero(d);
    for (int j = 0; j < classes; ++j)
      if (j != static_cast<int>(y[0]))
        rival_mean += post[j] * bank.mus.row(j);
    // -grad = ((1 - p_y) mu_y - sum_{j != y} p_j mu_j) / tau
    const Eigen::RowVectorXd pull = (1 - post[y[0]]) * bank.mus.row(y[0]) - rival_mean;
    CHECK(oracle::relative_error(-res.grad, pull / bank.tau) < 1e-12);

    Eigen::RowVectorXd z2 = z.row(0) - 1e-4 * res.grad.row(0);
    z2.normalize();
    target_decreases += bank.mus.row(y[0]).dot(z2) < bank.mus.row(y[0]).dot(z.row(0));
    CHECK(nll_loss(bank, Matrix(z2), y).loss < res.loss);
    rival_increases += rival_mean.dot(z2) > rival_mean.dot(z.row(0));
  }
  // After renormalization neither term is monotone on its own: when rivals
  // sit close to the target they move together. Only the loss is.
  CHECK(rival_increases > 0);
  CHECK(rival_increases < 20);
  CHECK(target_decreases < 20);
}

TEST_CASE("training on the default task") {
  TaskParams p;
  p.seed = derive_seed(1, "generate");
  const auto task = make_id_task(p);
  TrainConfig cfg;
  cfg.seed = derive_seed(1, "train");
  const auto result = train(task.train, cfg);
  REQUIRE(result.bank.has_value());
  CHECK(result.loss_trace.size() == 30);
  CHECK(result.loss_trace.back() < 0.3 * result.loss_trace.front());
  CHECK_NOTHROW(result.bank->validate());
  CHECK(result.bank->tau == cfg.tau_train);

  const RowMatrix z_test = embed_batch(result.model, task.test.points);
  CHECK(id_accuracy(*result.bank, z_test, task.test.labels) >= 0.95);
  const auto ood = make_ood_set(OodKind::UniformSphere, task.truth, task.lift, 2000, 3);
  const auto fn = ScoreFunction::ink(*result.bank, 0.05);
  CHECK(score_batch(fn, z_test).mean() > score_batch(fn, embed_batch(result.model, ood.points)).mean());

  { // deterministic
    CHECK(train(task.train, cfg).model == result.model);
  }
  { // cross-entropy twin
    const auto ce = train_ce_twin(task.train, cfg);
    CHECK_FALSE(ce.bank.has_value());
    const RowMatrix logits = embed_batch(ce.model, task.test.points);
    CHECK(logit_accuracy(logits, task.test.labels) >= 0.9);
    const RowMatrix big = embed_batch(ce.model, RowMatrix(10.0 * task.test.points));
    CHECK(big.cwiseAbs().maxCoeff() > 5.0 * logits.cwiseAbs().maxCoeff());
    CHECK(train_ce_twin(task.train, cfg).model == ce.model);
  }
}

TEST_CASE("frozen dynamics") {
  TaskParams p;
  p.seed = 9;
  p.n = 1000;
  const auto task = make_id_task(p);
  TrainConfig cfg;
  cfg.seed = 10;
  cfg.epochs = 4;
  cfg.learning_rate = 0.0;
  cfg.ema_momentum = 1.0;
  const auto result = train(task.train, cfg);

  std::vector<int> widths{64, 128, 128, 16};
  Rng init_rng(derive_seed(cfg.seed, "init_vmf"));
  CHECK(result.model == EncoderModel::init(widths, Head::Normalized, init_rng));
  for (double l : result.loss_trace)
    CHECK(std::abs(l - result.loss_trace.front()) < 1e-6);
}

TEST_CASE("training divergence and config errors") {
  TaskParams p;
  p.seed = 11;
  p.n = 500;
  const auto task = make_id_task(p);
  TrainConfig cfg;
  cfg.seed = 1;
  cfg.epochs = 5;
  SUBCASE("huge learning rate") {
    cfg.learning_rate = 1e200;
    try {
      (void)train_ce_twin(task.train, cfg);
      FAIL("expected divergence");
    } catch (const Error &e) {
      CHECK(e.code() == ErrorCode::NumericalDivergence);
    }
  }
  SUBCASE("empty class") {
    RawInputSet set = task.train;
    for (auto &y : set.labels)
      if (y == 3)
        y = 4;
    CHECK_THROWS_AS((void)train(set, cfg), Error);
  }
  SUBCASE("bad momentum") {
    cfg.sgd_momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
  }
}

TEST_CASE("gradient prototype updates keep unit norm") {
  TaskParams p;
  p.seed = 12;
  p.n = 1500;
  const auto task = make_id_task(p);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.epochs = 3;
  cfg.prototype_update = PrototypeUpdate::Gradient;
  const auto result = train(task.train, cfg);
  CHECK_NOTHROW(result.bank->validate());
}

TEST_CASE("checkpoint round trip") {
  Rng rng(13);
  const std::array widths{5, 7, 3};
  const auto model = EncoderModel::init(widths, Head::Normalized, rng);
  PrototypeBank bank{random_unit_rows(4, 3, rng), 0.1};
  const auto dir = fs::temp_directory_path() / "ink_encoder_tests";
  fs::create_directories(dir);
  const auto path = dir / "m.ssmd";

  save_checkpoint({model, bank, 0.1}, path);
  const auto back = load_checkpoint(path);
  CHECK(back.model == model);
  REQUIRE(back.bank.has_value());
  CHECK(*back.bank == bank);
  CHECK(back.tau_train == 0.1);

  const auto logits = EncoderModel::init(widths, Head::Logits, rng);
  save_checkpoint({logits, std::nullopt, 0.1}, path);
  const auto back2 = load_checkpoint(path);
  CHECK(back2.model == logits);
  CHECK_FALSE(back2.bank.has_value());

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto code_of = [&](const std::string &b) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << b;
    try {
      (void)load_checkpoint(path);
    } catch (const Error &e) {
      return e.code();
    }
    return ErrorCode::Config;
  };
  std::string bad = bytes;
  bad[1] = '?';
  CHECK(code_of(bad) == ErrorCode::MalformedHeader);
  CHECK(code_of(bytes.substr(0, bytes.size() / 2)) == ErrorCode::TruncatedPayload);
}
