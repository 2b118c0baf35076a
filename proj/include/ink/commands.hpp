#pragma once

// The inkctl subcommands as library calls. Each reads and writes files under
// config.out_dir and prints a short log to `log`.
//
// Files in out_dir:
//   generate: id_train.ssem id_test.ssem ood_<kind>.ssem truth.txt
//   train:    model.ssmd ce_model.ssmd loss_trace.csv
//   eval:     report.txt histograms.csv
//   bench:    bench.csv (timing values are non-deterministic)
//   sweep:    sweep.csv sweep.txt

#include "ink/config.hpp"
#include "ink/error.hpp"
#include "ink/vmf.hpp"

#include <filesystem>
#include <ostream>

namespace ink {

void cmd_generate(const RunConfig &config, std::ostream &log);
void cmd_train(const RunConfig &config, std::ostream &log);
void cmd_eval(const RunConfig &config, std::ostream &log);
void cmd_bench(const RunConfig &config, std::ostream &log);
void cmd_sweep(const RunConfig &config, std::ostream &log);

/// 0 success, 1 config validation, 2 numerical divergence, 3 I/O.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitDivergence = 2,
  kExitIo = 3,
};
[[nodiscard]] int exit_code_for(ErrorCode code) noexcept;

// truth.txt: "sstruth/1" then key=value lines d, num_classes, kappa, priors,
// and mean<j> (comma-separated coordinates), numbers in shortest round-trip
// form.
void save_truth(const VmfMixture &mixture, const std::filesystem::path &path);
[[nodiscard]] VmfMixture load_truth(const std::filesystem::path &path);

} // namespace ink
