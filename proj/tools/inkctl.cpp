#include "ink/commands.hpp"
#include "ink/config.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scores;
  std::optional<double> tau_test;
  std::optional<double> tpr;
};

ink::RunConfig resolve(const Overrides &o) {
  auto cfg = ink::load_config(o.config_path);
  if (o.out_dir)
    cfg.out_dir = *o.out_dir;
  if (o.seed)
    cfg.seed = *o.seed;
  if (o.scores)
    cfg.scores = ink::parse_score_list(*o.scores);
  if (o.tau_test)
    cfg.tau_test = *o.tau_test;
  if (o.tpr)
    cfg.target_tpr = *o.tpr;
  cfg.validate();
  return cfg;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"inkctl: synthetic vMF OOD detection runs"};
  app.require_subcommand(1);

  Overrides o;
  using Command = void (*)(const ink::RunConfig &, std::ostream &);
  Command command = nullptr;

  const auto add = [&](const char *name, const char *help, Command fn) {
    auto *sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", o.config_path, "config file")->required();
    sub->add_option("-o,--out", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "root seed");
    sub->add_option("--scores", o.scores, "comma-separated score list");
    sub->add_option("--tau-test", o.tau_test, "test temperature");
    sub->add_option("--tpr", o.tpr, "target ID true positive rate");
    sub->callback([&command, fn] { command = fn; });
  };
  add("generate", "sample the ID task and OOD sets", ink::cmd_generate);
  add("train", "train the vMF encoder and the cross-entropy twin", ink::cmd_train);
  add("eval", "score, calibrate and write the detection report", ink::cmd_eval);
  add("bench", "time the scores per sample", ink::cmd_bench);
  add("sweep", "sweep the test temperature", ink::cmd_sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? ink::kExitOk : ink::kExitConfig;
  }

  try {
    command(resolve(o), std::cout);
  } catch (const ink::Error &e) {
    std::cerr << "inkctl: " << e.what() << '\n';
    return ink::exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::cerr << "inkctl: " << e.what() << '\n';
    return ink::kExitIo;
  }
  return ink::kExitOk;
}
