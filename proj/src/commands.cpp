#include "ink/commands.hpp"

#include "binary_io.hpp"
#include "ink/encoder.hpp"
#include "ink/kernels.hpp"
#include "ink/metrics.hpp"
#include "ink/seed.hpp"
#include "ink/synth.hpp"

#include <fmt/format.h>

#include <charconv>
#include <map>
#include <memory>
#include <sstream>

namespace ink {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::Config:
  case ErrorCode::InvalidArgument:
  case ErrorCode::DimensionMismatch:
    return kExitConfig;
  case ErrorCode::NumericalDivergence:
  case ErrorCode::DegenerateEmbedding:
  case ErrorCode::NotPositiveDefinite:
    return kExitDivergence;
  case ErrorCode::Io:
  case ErrorCode::MalformedHeader:
  case ErrorCode::TruncatedPayload:
    return kExitIo;
  }
  return kExitIo;
}

namespace {

constexpr std::string_view kTruthVersion = "sstruth/1";

std::string join(const auto &values) {
  std::string out;
  for (const auto &v : values)
    out += (out.empty() ? "" : ",") + fmt::format("{}", v);
  return out;
}

std::vector<double> parse_doubles(std::string_view s) {
  std::vector<double> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto item = s.substr(0, comma);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    require(ec == std::errc{} && ptr == item.data() + item.size(),
            ErrorCode::MalformedHeader, fmt::format("bad number '{}'", item));
    out.push_back(v);
    s = comma == std::string_view::npos ? std::string_view{} : s.substr(comma + 1);
  }
  return out;
}

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::Io,
          fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
}

fs::path ood_file(OodKind kind) {
  return fmt::format("ood_{}.ssem", to_string(kind));
}

void manifest(std::ostream &log, const fs::path &path) {
  log << fmt::format("  {} ({} bytes)\n", path.string(), fs::file_size(path));
}

struct LoadedRun {
  Checkpoint model;
  RawInputSet train;
  RawInputSet test;
  std::vector<std::pair<OodKind, RawInputSet>> ood;
};

LoadedRun load_run(const RunConfig &config, bool need_ood) {
  const auto &dir = config.out_dir;
  LoadedRun run;
  run.model = load_checkpoint(dir / "model.ssmd");
  require(run.model.bank.has_value(), ErrorCode::MalformedHeader,
          "model.ssmd has no prototype bank");
  const auto d_in = static_cast<std::uint32_t>(run.model.model.dim_in());
  run.train = load_raw(dir / "id_train.ssem", d_in);
  run.test = load_raw(dir / "id_test.ssem", d_in);
  if (need_ood)
    for (auto kind : config.ood_kinds)
      run.ood.emplace_back(kind, load_raw(dir / ood_file(kind), d_in));
  return run;
}

std::vector<double> to_std(const Vector &v) {
  return {v.data(), v.data() + v.size()};
}

std::vector<double> class_frequencies(std::span<const std::uint32_t> labels,
                                      Eigen::Index classes) {
  std::vector<double> freq(static_cast<std::size_t>(classes), 0.0);
  for (auto y : labels)
    freq.at(y) += 1.0;
  for (double &f : freq)
    f /= static_cast<double>(labels.size());
  return freq;
}

} // namespace

void save_truth(const VmfMixture &mixture, const fs::path &path) {
  std::string out = fmt::format("{}\n", kTruthVersion);
  out += fmt::format("d={}\nnum_classes={}\nkappa={}\npriors={}\n",
                     mixture.dim(), mixture.num_components(), mixture.kappa(),
                     join(mixture.priors()));
  for (std::size_t j = 0; j < mixture.num_components(); ++j) {
    const Vector &mu = mixture.means()[j].coords();
    out += fmt::format("mean{}={}\n", j,
                       join(std::vector<double>(mu.data(), mu.data() + mu.size())));
  }
  detail::write_file(path, out);
}

VmfMixture load_truth(const fs::path &path) {
  std::stringstream in(detail::read_file(path));
  std::string line;
  require(std::getline(in, line) && line == kTruthVersion,
          ErrorCode::MalformedHeader,
          fmt::format("'{}' is not a {} file", path.string(), kTruthVersion));
  std::map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::MalformedHeader,
            "truth lines are key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto get = [&](const std::string &key) -> const std::string & {
    const auto it = kv.find(key);
    require(it != kv.end(), ErrorCode::MalformedHeader,
            fmt::format("truth file lacks '{}'", key));
    return it->second;
  };
  const auto classes = static_cast<std::size_t>(parse_doubles(get("num_classes")).at(0));
  const auto d = static_cast<Eigen::Index>(parse_doubles(get("d")).at(0));
  std::vector<UnitVector> means;
  for (std::size_t j = 0; j < classes; ++j) {
    const auto coords = parse_doubles(get(fmt::format("mean{}", j)));
    require(static_cast<Eigen::Index>(coords.size()) == d,
            ErrorCode::MalformedHeader, "mean has the wrong dimension");
    means.push_back(UnitVector::from_normalized(
        Eigen::Map<const Vector>(coords.data(), d), 1e-9));
  }
  return VmfMixture(std::move(means), parse_doubles(get("kappa")).at(0),
                    parse_doubles(get("priors")));
}

void cmd_generate(const RunConfig &config, std::ostream &log) {
  config.validate();
  ensure_dir(config.out_dir);
  const auto task = make_id_task(config.task_params());
  const auto &dir = config.out_dir;
  std::vector<fs::path> written{dir / "id_train.ssem", dir / "id_test.ssem"};
  save(task.train, written[0]);
  save(task.test, written[1]);
  for (auto kind : config.ood_kinds) {
    const auto seed = derive_seed(config.seed, fmt::format("ood_{}", to_string(kind)));
    written.push_back(dir / ood_file(kind));
    save(make_ood_set(kind, task.truth, task.lift, config.n_ood, seed),
         written.back());
  }
  written.push_back(dir / "truth.txt");
  save_truth(task.truth, written.back());
  log << "generated:\n";
  for (const auto &p : written)
    manifest(log, p);
}

void cmd_train(const RunConfig &config, std::ostream &log) {
  config.validate();
  const auto &dir = config.out_dir;
  const auto train_set = load_raw(dir / "id_train.ssem",
                                  static_cast<std::uint32_t>(config.d_in));
  const auto tc = config.train_config();
  const auto vmf = train(train_set, tc);
  auto ce_config = tc;
  ce_config.learning_rate = config.ce_learning_rate.value_or(tc.learning_rate);
  const auto ce = train_ce_twin(train_set, ce_config);

  save_checkpoint({vmf.model, vmf.bank, tc.tau_train}, dir / "model.ssmd");
  save_checkpoint({ce.model, std::nullopt, tc.tau_train}, dir / "ce_model.ssmd");
  std::string csv = "epoch,vmf_loss,ce_loss\n";
  for (std::size_t e = 0; e < vmf.loss_trace.size(); ++e)
    csv += fmt::format("{},{},{}\n", e, vmf.loss_trace[e], ce.loss_trace[e]);
  detail::write_file(dir / "loss_trace.csv", csv);
  log << fmt::format("trained {} epochs: vmf loss {:.4f} -> {:.4f}, ce loss "
                     "{:.4f} -> {:.4f}\n",
                     vmf.loss_trace.size(), vmf.loss_trace.front(),
                     vmf.loss_trace.back(), ce.loss_trace.front(),
                     ce.loss_trace.back());
  manifest(log, dir / "model.ssmd");
  manifest(log, dir / "ce_model.ssmd");
  manifest(log, dir / "loss_trace.csv");
}

void cmd_eval(const RunConfig &config, std::ostream &log) {
  config.validate();
  const auto run = load_run(config, true);
  const auto ce = load_checkpoint(config.out_dir / "ce_model.ssmd");
  const auto &bank = *run.model.bank;
  const auto &model = run.model.model;

  const RowMatrix z_train = embed_batch(model, run.train.points);
  const RowMatrix z_test = embed_batch(model, run.test.points);
  std::vector<RowMatrix> z_ood;
  std::vector<RowMatrix> logits_ood;
  for (const auto &[kind, set] : run.ood) {
    z_ood.push_back(embed_batch(model, set.points));
    logits_ood.push_back(embed_batch(ce.model, set.points));
  }
  const RowMatrix logits_test = embed_batch(ce.model, run.test.points);

  DetectionReport report;
  report.meta = {
      {"seed", fmt::format("{}", config.seed)},
      {"tau_test", fmt::format("{}", config.tau_test)},
      {"energy_tau", fmt::format("{}", config.energy_tau)},
      {"target_tpr", fmt::format("{}", config.target_tpr)},
      {"knn_k", fmt::format("{}", config.knn_k)},
      {"id_accuracy", fmt::format("{}", id_accuracy(bank, z_test, run.test.labels))},
      {"ce_accuracy", fmt::format("{}", logit_accuracy(logits_test, run.test.labels))},
  };
  std::string histograms;
  for (auto kind : config.scores) {
    std::optional<ScoreFunction> fn;
    switch (kind) {
    case ScoreKind::Ink:
      fn = ScoreFunction::ink(bank, config.tau_test);
      break;
    case ScoreKind::InkGeneralized:
      fn = ScoreFunction::ink_generalized(
          bank, class_frequencies(run.train.labels, bank.num_classes()),
          config.tau_test);
      break;
    case ScoreKind::MaxPosterior:
      fn = ScoreFunction::max_posterior(bank, config.tau_test);
      break;
    case ScoreKind::Energy:
      fn = ScoreFunction::energy(config.energy_tau);
      break;
    case ScoreKind::LogitMaxPosterior:
      fn = ScoreFunction::logit_max_posterior(config.energy_tau);
      break;
    case ScoreKind::Knn:
      require(config.knn_k <= static_cast<std::size_t>(z_train.rows()),
              ErrorCode::Config, "field 'knn_k': exceeds the training set size");
      fn = ScoreFunction::knn(std::make_shared<const KnnPool>(z_train),
                              config.knn_k);
      break;
    case ScoreKind::Mahalanobis:
      fn = ScoreFunction::mahalanobis(std::make_shared<const MahalanobisModel>(
          MahalanobisModel::fit(z_train, run.train.labels)));
      break;
    }
    const bool logits = fn->input_space() == InputSpace::Logits;
    const auto id_scores = to_std(score_batch(*fn, logits ? logits_test : z_test));
    auto det = calibrate(id_scores, config.target_tpr, std::string(fn->name()));
    report.detectors.push_back(det);
    for (std::size_t k = 0; k < run.ood.size(); ++k) {
      const auto ood_scores =
          to_std(score_batch(*fn, logits ? logits_ood[k] : z_ood[k]));
      const auto ood_name = std::string(to_string(run.ood[k].first));
      report.results.push_back({std::string(fn->name()), ood_name,
                                auroc(id_scores, ood_scores),
                                fpr_at_tpr(id_scores, ood_scores, config.target_tpr)});
      append_histogram_csv(histograms, fn->name(), ood_name,
                           score_histogram(id_scores, ood_scores,
                                           config.histogram_bins));
    }
  }
  write_report(report, config.out_dir / "report.txt");
  detail::write_file(config.out_dir / "histograms.csv", histograms);
  log << fmt::format("{:<16} {:<16} {:>8} {:>8}\n", "score", "ood_set", "auroc",
                     "fpr");
  for (const auto &r : report.results)
    log << fmt::format("{:<16} {:<16} {:>8.4f} {:>8.4f}\n", r.score, r.ood_set,
                       r.auroc, r.fpr);
  manifest(log, config.out_dir / "report.txt");
  manifest(log, config.out_dir / "histograms.csv");
}

void cmd_bench(const RunConfig &config, std::ostream &log) {
  config.validate();
  const auto run = load_run(config, false);
  const auto ce = load_checkpoint(config.out_dir / "ce_model.ssmd");
  const auto truth = load_truth(config.out_dir / "truth.txt");
  const auto &bank = *run.model.bank;
  const RowMatrix z_test = embed_batch(run.model.model, run.test.points);
  const RowMatrix logits_test = embed_batch(ce.model, run.test.points);
  const RowMatrix z_train = embed_batch(run.model.model, run.train.points);
  const auto mahalanobis = std::make_shared<const MahalanobisModel>(
      MahalanobisModel::fit(z_train, run.train.labels));

  LatencyOptions opts{config.bench_repeats, config.bench_batch,
                      std::min(config.bench_batch, 100)};
  std::string csv = "score,pool_size,mean_us,std_us,median_us,repeats,batch\n";
  for (auto pool_size : config.bench_pool_sizes) {
    const auto samples = sample(
        truth, pool_size, derive_seed(config.seed, fmt::format("bench_pool_{}", pool_size)));
    RowMatrix pool(static_cast<Eigen::Index>(pool_size), truth.dim());
    for (std::size_t i = 0; i < pool_size; ++i)
      pool.row(static_cast<Eigen::Index>(i)) = samples[i].z.coords().transpose();
    const auto knn_pool = std::make_shared<const KnnPool>(std::move(pool));
    for (auto kind : config.scores) {
      std::optional<ScoreFunction> fn;
      switch (kind) {
      case ScoreKind::Ink:
        fn = ScoreFunction::ink(bank, config.tau_test);
        break;
      case ScoreKind::InkGeneralized:
        fn = ScoreFunction::ink_generalized(
            bank, class_frequencies(run.train.labels, bank.num_classes()),
            config.tau_test);
        break;
      case ScoreKind::MaxPosterior:
        fn = ScoreFunction::max_posterior(bank, config.tau_test);
        break;
      case ScoreKind::Energy:
        fn = ScoreFunction::energy(config.energy_tau);
        break;
      case ScoreKind::LogitMaxPosterior:
        fn = ScoreFunction::logit_max_posterior(config.energy_tau);
        break;
      case ScoreKind::Knn:
        fn = ScoreFunction::knn(knn_pool, config.knn_k);
        break;
      case ScoreKind::Mahalanobis:
        fn = ScoreFunction::mahalanobis(mahalanobis);
        break;
      }
      const bool logits = fn->input_space() == InputSpace::Logits;
      const auto stats =
          bench_score_latency(*fn, logits ? logits_test : z_test, opts);
      csv += fmt::format("{},{},{},{},{},{},{}\n", fn->name(), pool_size,
                         stats.mean_us, stats.std_us, stats.median_us,
                         stats.repeats, stats.batch);
      log << fmt::format("{:<16} N={:<8} {:>12.4f} us/sample (std {:.4f})\n",
                         fn->name(), pool_size, stats.mean_us, stats.std_us);
    }
  }
  detail::write_file(config.out_dir / "bench.csv", csv);
  manifest(log, config.out_dir / "bench.csv");
}

void cmd_sweep(const RunConfig &config, std::ostream &log) {
  config.validate();
  const auto run = load_run(config, true);
  const auto &bank = *run.model.bank;
  const auto &model = run.model.model;
  const RowMatrix z_test = embed_batch(model, run.test.points);
  std::vector<NamedEmbeddings> ood;
  for (const auto &[kind, set] : run.ood)
    ood.push_back({std::string(to_string(kind)), embed_batch(model, set.points)});
  const auto grid = default_tau_grid(config.sweep_center.value_or(run.model.tau_train),
                                     config.sweep_points);
  const auto table = temperature_sweep(bank, z_test, ood, grid);
  detail::write_file(config.out_dir / "sweep.csv", sweep_csv(table));
  std::string summary = fmt::format("best_tau={}\n", table.best_tau());
  if (config.sweep_validate) {
    const auto sel = select_tau_by_corruption(
        bank, run.train, [&](const RowMatrix &x) { return embed_batch(model, x); },
        config.speckle_sigma, grid, derive_seed(config.seed, "speckle"));
    summary += fmt::format("chosen_tau={}\n", sel.tau);
  }
  detail::write_file(config.out_dir / "sweep.txt", summary);
  log << summary;
  manifest(log, config.out_dir / "sweep.csv");
  manifest(log, config.out_dir / "sweep.txt");
}

} // namespace ink
