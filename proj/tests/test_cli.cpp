#include "ink/commands.hpp"
#include "ink/config.hpp"
#include "ink/error.hpp"
#include "ink/kernels.hpp"
#include "ink/metrics.hpp"
#include "ink/seed.hpp"

#include <doctest.h>
#include <fmt/format.h>

#include <filesystem>
#include <map>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace ink;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const auto dir = fs::temp_directory_path() / "ink_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int count_lines(const std::string &s) {
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

fs::path write_config(const fs::path &dir, const std::string &body) {
  const auto path = dir / "run.cfg";
  std::ofstream(path) << body;
  return path;
}

int run_inkctl(const std::string &args) {
  const std::string cmd = std::string(INKCTL_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string small_config(const fs::path &out) {
  return "seed = 21\n"
         "out_dir = " +
         out.string() +
         "\n"
         "n = 1500\n"
         "n_ood = 300\n"
         "epochs = 4\n"
         "knn_k = 10\n"
         "bench_pool_sizes = 200, 400\n"
         "bench_repeats = 2\n"
         "bench_batch = 20\n"
         "sweep_points = 5\n"
         "sweep_validate = true\n"
         "scores = ink, ink_generalized, energy, msp, msp_ce, knn, mahalanobis\n";
}

ErrorCode config_error(const std::string &text) {
  try {
    (void)parse_config(text);
  } catch (const Error &e) {
    return e.code();
  }
  return ErrorCode::Io;
}

} // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_config("# comment\nseed = 9\n\npriors = uniform\nscores = ink, knn\n"
                                "hidden = 32,32\nsweep_validate = yes\n");
  CHECK(cfg.seed == 9);
  CHECK(cfg.priors.empty());
  CHECK(cfg.scores == std::vector<ScoreKind>{ScoreKind::Ink, ScoreKind::Knn});
  CHECK(cfg.hidden == std::vector<int>{32, 32});
  CHECK(cfg.sweep_validate);
  CHECK(cfg.train_config().seed == derive_seed(9, "train"));
  CHECK(cfg.task_params().seed == derive_seed(9, "generate"));
  CHECK_FALSE(cfg.train_config().prior_weighted_loss);
  CHECK(parse_config("seed = 1\npriors = 0.05,0.05,0.05,0.05,0.05,0.15,0.15,0.15,0.15,0.15\n")
            .train_config()
            .prior_weighted_loss);
  CHECK_FALSE(parse_config("seed = 1\nprior_weighted_loss = false\n"
                           "priors = 0.05,0.05,0.05,0.05,0.05,0.15,0.15,0.15,0.15,0.15\n")
                  .train_config()
                  .prior_weighted_loss);

  CHECK(config_error("d = 8\n") == ErrorCode::Config);              // no seed
  CHECK(config_error("seed = 1\nfoo = 2\n") == ErrorCode::Config);  // unknown key
  CHECK(config_error("seed = 1\nseed = 2\n") == ErrorCode::Config); // duplicate
  CHECK(config_error("seed = x\n") == ErrorCode::Config);
  CHECK(config_error("seed = 1\nscores = ink, odin\n") == ErrorCode::Config);

  try {
    (void)parse_config("seed = 1\npriors = 0.5, 0.6, 0, 0, 0, 0, 0, 0, 0, 0\n");
    FAIL("expected a config error");
  } catch (const Error &e) {
    CHECK(std::string(e.what()).find("priors") != std::string::npos);
  }
  CHECK_THROWS_AS((void)load_config("/nonexistent/run.cfg"), Error);
}

TEST_CASE("exit code mapping") {
  CHECK(exit_code_for(ErrorCode::Config) == 1);
  CHECK(exit_code_for(ErrorCode::NumericalDivergence) == 2);
  CHECK(exit_code_for(ErrorCode::Io) == 3);
  CHECK(exit_code_for(ErrorCode::TruncatedPayload) == 3);
}

TEST_CASE("commands end to end") {
  const auto dir = scratch("e2e");
  const auto out = dir / "nested" / "out";
  const auto cfg = parse_config(small_config(out));
  std::ostringstream log;

  cmd_generate(cfg, log);
  for (auto name : {"id_train.ssem", "id_test.ssem", "ood_uniform_sphere.ssem",
                    "ood_shifted_mixture.ssem", "ood_low_kappa.ssem", "truth.txt"})
    CHECK(fs::exists(out / name));
  CHECK(log.str().find("id_train.ssem") != std::string::npos);

  const auto truth = load_truth(out / "truth.txt");
  CHECK(truth.num_components() == 10);
  CHECK(truth.kappa() == 30.0);

  cmd_train(cfg, log);
  CHECK(count_lines(slurp(out / "loss_trace.csv")) == 1 + cfg.epochs);

  cmd_eval(cfg, log);
  const auto report = read_report(out / "report.txt");
  CHECK(report.results.size() == cfg.scores.size() * cfg.ood_kinds.size());
  CHECK(report.detectors.size() == cfg.scores.size());
  CHECK(std::any_of(report.results.begin(), report.results.end(),
                    [](const ResultRow &r) { return r.score == "ink"; }));
  for (const auto &r : report.results) {
    CHECK(r.auroc >= 0.0);
    CHECK(r.auroc <= 1.0);
    CHECK(r.fpr >= 0.0);
    CHECK(r.fpr <= 1.0);
  }

  cmd_bench(cfg, log);
  CHECK(count_lines(slurp(out / "bench.csv")) ==
        1 + static_cast<int>(cfg.scores.size() * cfg.bench_pool_sizes.size()));

  cmd_sweep(cfg, log);
  CHECK(count_lines(slurp(out / "sweep.csv")) == 1 + cfg.sweep_points);

  // chosen tau must match a direct call
  const auto ckpt = load_checkpoint(out / "model.ssmd");
  const auto train_set = load_raw(out / "id_train.ssem");
  const auto grid = default_tau_grid(ckpt.tau_train, cfg.sweep_points);
  const auto sel = select_tau_by_corruption(
      *ckpt.bank, train_set,
      [&](const RowMatrix &x) { return embed_batch(ckpt.model, x); }, cfg.speckle_sigma, grid,
      derive_seed(cfg.seed, "speckle"));
  CHECK(slurp(out / "sweep.txt").find(fmt::format("chosen_tau={}\n", sel.tau)) !=
        std::string::npos);

  SUBCASE("reruns are byte-identical") {
    std::map<std::string, std::string> before;
    for (const auto &e : fs::directory_iterator(out))
      if (e.path().filename() != "bench.csv")
        before[e.path().filename().string()] = slurp(e.path());
    cmd_generate(cfg, log);
    cmd_train(cfg, log);
    cmd_eval(cfg, log);
    cmd_sweep(cfg, log);
    for (const auto &[name, bytes] : before)
      CHECK_MESSAGE(slurp(out / name) == bytes, name);
  }
}

TEST_CASE("inkctl exit codes") {
  const auto dir = scratch("exit");
  const auto out = dir / "out";
  const auto cfg = write_config(dir, small_config(out));

  CHECK(run_inkctl("generate --config " + cfg.string()) == 0);
  CHECK(run_inkctl("generate --config " + (dir / "missing.cfg").string()) == 1);
  CHECK(run_inkctl("generate") == 1);
  CHECK(run_inkctl("frobnicate --config " + cfg.string()) == 1);
  CHECK(run_inkctl("eval --config " + cfg.string() + " --tpr 1.5") == 1);
  CHECK(run_inkctl("eval --config " + cfg.string() + " --scores ink,odin") == 1);

  // no checkpoint yet
  CHECK(run_inkctl("eval --config " + cfg.string()) == 3);

  const auto bad = write_config(dir, small_config(out) + "learning_rate = 1e200\n");
  CHECK(run_inkctl("train --config " + bad.string()) == 2);

  // --out and --seed overrides
  const auto other = dir / "other";
  CHECK(run_inkctl("generate --config " + cfg.string() + " --out " + other.string() +
                   " --seed 22") == 0);
  CHECK(fs::exists(other / "truth.txt"));
  CHECK(slurp(other / "id_train.ssem") != slurp(out / "id_train.ssem"));

  std::ofstream(out / "model.ssmd") << "SSMD-broken";
  CHECK(run_inkctl("eval --config " + cfg.string()) == 3);
}
