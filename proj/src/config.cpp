#include "ink/config.hpp"

#include "binary_io.hpp"
#include "ink/error.hpp"
#include "ink/seed.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <set>

namespace ink {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos)
      break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value,
                            std::string_view expected) {
  throw Error(ErrorCode::Config, fmt::format("field '{}': '{}' is not {}", key,
                                             value, expected));
}

template <class T> T parse_num(std::string_view key, std::string_view value) {
  T v{};
  const auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc{} || ptr != value.data() + value.size() || value.empty())
    bad_value(key, value, "a number");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v))
      bad_value(key, value, "a finite number");
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes")
    return true;
  if (value == "false" || value == "0" || value == "no")
    return false;
  bad_value(key, value, "a boolean");
}

template <class T>
std::vector<T> parse_num_list(std::string_view key, std::string_view value) {
  std::vector<T> out;
  for (auto item : split_list(value))
    out.push_back(parse_num<T>(key, item));
  return out;
}

void check(bool ok, std::string_view key, std::string_view what) {
  if (!ok)
    throw Error(ErrorCode::Config, fmt::format("field '{}': {}", key, what));
}

} // namespace

std::vector<ScoreKind> parse_score_list(std::string_view text) {
  std::vector<ScoreKind> out;
  for (auto item : split_list(text)) {
    try {
      out.push_back(parse_score_kind(item));
    } catch (const Error &) {
      bad_value("scores", item, "a known score");
    }
  }
  return out;
}

TaskParams RunConfig::task_params() const {
  TaskParams p;
  p.d_in = d_in;
  p.d = d;
  p.num_classes = num_classes;
  p.kappa = kappa;
  p.priors = priors;
  p.n = n;
  p.sigma_lift = sigma_lift;
  p.seed = derive_seed(seed, "generate");
  return p;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.learning_rate = learning_rate;
  c.sgd_momentum = sgd_momentum;
  c.weight_decay = weight_decay;
  c.ema_momentum = ema_momentum;
  c.tau_train = tau_train;
  c.hidden = hidden;
  c.embedding_dim = d;
  c.prototype_update = prototype_update;
  c.prior_weighted_loss = prior_weighted_loss.value_or(!priors.empty());
  c.seed = derive_seed(seed, "train");
  return c;
}

void RunConfig::validate() const {
  check(d >= 2, "d", "must be >= 2");
  check(d_in >= d, "d_in", "must be >= d");
  check(num_classes >= 2, "num_classes", "must be >= 2");
  check(kappa > 0.0, "kappa", "must be positive");
  if (!priors.empty()) {
    check(priors.size() == static_cast<std::size_t>(num_classes), "priors",
          "needs one entry per class");
    double total = 0.0;
    for (double p : priors) {
      check(p >= 0.0, "priors", "entries must be nonnegative");
      total += p;
    }
    check(std::abs(total - 1.0) <= 1e-9, "priors", "must sum to 1");
  }
  check(n >= 10, "n", "must be >= 10");
  check(n_ood >= 1, "n_ood", "must be >= 1");
  check(sigma_lift >= 0.0, "sigma_lift", "must be >= 0");
  check(!ood_kinds.empty(), "ood_kinds", "needs at least one kind");
  check(epochs >= 1, "epochs", "must be >= 1");
  check(batch_size >= 1, "batch_size", "must be >= 1");
  check(learning_rate >= 0.0, "learning_rate", "must be >= 0");
  check(!ce_learning_rate || *ce_learning_rate >= 0.0, "ce_learning_rate",
        "must be >= 0");
  check(weight_decay >= 0.0, "weight_decay", "must be >= 0");
  check(sgd_momentum >= 0.0 && sgd_momentum < 1.0, "sgd_momentum",
        "must lie in [0, 1)");
  check(ema_momentum >= 0.0 && ema_momentum <= 1.0, "ema_momentum",
        "must lie in [0, 1]");
  check(tau_train > 0.0, "tau_train", "must be positive");
  for (int h : hidden)
    check(h >= 1, "hidden", "widths must be >= 1");
  check(!scores.empty(), "scores", "needs at least one score");
  check(tau_test > 0.0, "tau_test", "must be positive");
  check(energy_tau > 0.0, "energy_tau", "must be positive");
  check(target_tpr > 0.0 && target_tpr < 1.0, "target_tpr",
        "must lie in (0, 1)");
  check(knn_k >= 1, "knn_k", "must be >= 1");
  check(histogram_bins >= 1, "histogram_bins", "must be >= 1");
  check(!bench_pool_sizes.empty(), "bench_pool_sizes", "needs a pool size");
  for (auto s : bench_pool_sizes)
    check(s >= knn_k, "bench_pool_sizes", "every pool must hold >= knn_k points");
  check(bench_repeats >= 1, "bench_repeats", "must be >= 1");
  check(bench_batch >= 1, "bench_batch", "must be >= 1");
  check(sweep_points >= 2, "sweep_points", "must be >= 2");
  check(!sweep_center || *sweep_center > 0.0, "sweep_center",
        "must be positive");
  check(speckle_sigma >= 0.0, "speckle_sigma", "must be >= 0");
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  using Setter = std::function<void(std::string_view, std::string_view)>;
  const std::map<std::string, Setter, std::less<>> setters{
      {"seed", [&](auto k, auto v) { cfg.seed = parse_num<std::uint64_t>(k, v); }},
      {"out_dir", [&](auto, auto v) { cfg.out_dir = std::string(v); }},
      {"d_in", [&](auto k, auto v) { cfg.d_in = parse_num<int>(k, v); }},
      {"d", [&](auto k, auto v) { cfg.d = parse_num<int>(k, v); }},
      {"num_classes", [&](auto k, auto v) { cfg.num_classes = parse_num<int>(k, v); }},
      {"kappa", [&](auto k, auto v) { cfg.kappa = parse_num<double>(k, v); }},
      {"priors",
       [&](auto k, auto v) {
         cfg.priors = v == "uniform" ? std::vector<double>{}
                                     : parse_num_list<double>(k, v);
       }},
      {"n", [&](auto k, auto v) { cfg.n = parse_num<std::size_t>(k, v); }},
      {"n_ood", [&](auto k, auto v) { cfg.n_ood = parse_num<std::size_t>(k, v); }},
      {"sigma_lift", [&](auto k, auto v) { cfg.sigma_lift = parse_num<double>(k, v); }},
      {"ood_kinds",
       [&](auto k, auto v) {
         cfg.ood_kinds.clear();
         for (auto item : split_list(v)) {
           try {
             cfg.ood_kinds.push_back(parse_ood_kind(item));
           } catch (const Error &) {
             bad_value(k, item, "a known OOD kind");
           }
         }
       }},
      {"epochs", [&](auto k, auto v) { cfg.epochs = parse_num<int>(k, v); }},
      {"batch_size", [&](auto k, auto v) { cfg.batch_size = parse_num<int>(k, v); }},
      {"learning_rate",
       [&](auto k, auto v) { cfg.learning_rate = parse_num<double>(k, v); }},
      {"ce_learning_rate",
       [&](auto k, auto v) { cfg.ce_learning_rate = parse_num<double>(k, v); }},
      {"sgd_momentum",
       [&](auto k, auto v) { cfg.sgd_momentum = parse_num<double>(k, v); }},
      {"weight_decay",
       [&](auto k, auto v) { cfg.weight_decay = parse_num<double>(k, v); }},
      {"ema_momentum",
       [&](auto k, auto v) { cfg.ema_momentum = parse_num<double>(k, v); }},
      {"tau_train", [&](auto k, auto v) { cfg.tau_train = parse_num<double>(k, v); }},
      {"hidden", [&](auto k, auto v) { cfg.hidden = parse_num_list<int>(k, v); }},
      {"prototype_update",
       [&](auto k, auto v) {
         if (v == "ema")
           cfg.prototype_update = PrototypeUpdate::Ema;
         else if (v == "gradient")
           cfg.prototype_update = PrototypeUpdate::Gradient;
         else
           bad_value(k, v, "'ema' or 'gradient'");
       }},
      {"prior_weighted_loss",
       [&](auto k, auto v) { cfg.prior_weighted_loss = parse_bool(k, v); }},
      {"scores", [&](auto, auto v) { cfg.scores = parse_score_list(v); }},
      {"tau_test", [&](auto k, auto v) { cfg.tau_test = parse_num<double>(k, v); }},
      {"energy_tau", [&](auto k, auto v) { cfg.energy_tau = parse_num<double>(k, v); }},
      {"target_tpr", [&](auto k, auto v) { cfg.target_tpr = parse_num<double>(k, v); }},
      {"knn_k", [&](auto k, auto v) { cfg.knn_k = parse_num<std::size_t>(k, v); }},
      {"histogram_bins",
       [&](auto k, auto v) { cfg.histogram_bins = parse_num<int>(k, v); }},
      {"bench_pool_sizes",
       [&](auto k, auto v) {
         cfg.bench_pool_sizes = parse_num_list<std::size_t>(k, v);
       }},
      {"bench_repeats",
       [&](auto k, auto v) { cfg.bench_repeats = parse_num<int>(k, v); }},
      {"bench_batch", [&](auto k, auto v) { cfg.bench_batch = parse_num<int>(k, v); }},
      {"sweep_points",
       [&](auto k, auto v) { cfg.sweep_points = parse_num<int>(k, v); }},
      {"sweep_center",
       [&](auto k, auto v) { cfg.sweep_center = parse_num<double>(k, v); }},
      {"sweep_validate",
       [&](auto k, auto v) { cfg.sweep_validate = parse_bool(k, v); }},
      {"speckle_sigma",
       [&](auto k, auto v) { cfg.speckle_sigma = parse_num<double>(k, v); }},
  };

  bool have_seed = false;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::Config,
                  fmt::format("line {}: expected key = value", line_no));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end())
      throw Error(ErrorCode::Config,
                  fmt::format("line {}: unknown field '{}'", line_no, key));
    if (!seen.insert(std::string(key)).second)
      throw Error(ErrorCode::Config,
                  fmt::format("line {}: field '{}' given twice", line_no, key));
    it->second(key, value);
    have_seed = have_seed || key == "seed";
  }
  check(have_seed, "seed", "is mandatory");
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path &path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error &e) {
    throw Error(ErrorCode::Config,
                fmt::format("cannot read config '{}'", path.string()));
  }
  return parse_config(text);
}

} // namespace ink
