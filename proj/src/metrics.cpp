#include "ink/metrics.hpp"

#include "binary_io.hpp"
#include "ink/error.hpp"
#include "ink/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ink {

double auroc(std::span<const double> id_scores,
             std::span<const double> ood_scores) {
  require(!id_scores.empty() && !ood_scores.empty(),
          ErrorCode::InvalidArgument, "AUROC needs ID and OOD scores");
  const std::size_t m = id_scores.size();
  const std::size_t n = ood_scores.size();
  std::vector<std::pair<double, bool>> all;
  all.reserve(m + n);
  for (double s : id_scores) {
    require(!std::isnan(s), ErrorCode::InvalidArgument, "NaN score");
    all.emplace_back(s, true);
  }
  for (double s : ood_scores) {
    require(!std::isnan(s), ErrorCode::InvalidArgument, "NaN score");
    all.emplace_back(s, false);
  }
  std::sort(all.begin(), all.end(),
            [](const auto &a, const auto &b) { return a.first < b.first; });
  // Twice the ID rank sum; a tie block at positions [p, p+t) has midrank
  // p + (t+1)/2, so doubled ranks stay integral.
  std::int64_t rank_sum2 = 0;
  for (std::size_t p = 0; p < all.size();) {
    std::size_t q = p;
    std::int64_t ids = 0;
    while (q < all.size() && all[q].first == all[p].first) {
      ids += all[q].second ? 1 : 0;
      ++q;
    }
    const auto t = static_cast<std::int64_t>(q - p);
    rank_sum2 += ids * (2 * static_cast<std::int64_t>(p) + t + 1);
    p = q;
  }
  const auto mi = static_cast<std::int64_t>(m);
  const auto ni = static_cast<std::int64_t>(n);
  const std::int64_t u2 = rank_sum2 - mi * (mi + 1);
  return static_cast<double>(u2) / static_cast<double>(2 * mi * ni);
}

double fpr_at_tpr(std::span<const double> id_scores,
                  std::span<const double> ood_scores, double target_tpr) {
  require(!ood_scores.empty(), ErrorCode::InvalidArgument,
          "FPR needs OOD scores");
  const auto det = calibrate(id_scores, target_tpr);
  const auto false_pos = std::count_if(
      ood_scores.begin(), ood_scores.end(),
      [&](double s) { return det.decide(s) == Decision::Id; });
  return static_cast<double>(false_pos) /
         static_cast<double>(ood_scores.size());
}

double id_accuracy(const PrototypeBank &bank, const RowMatrix &embeddings,
                   std::span<const std::uint32_t> labels) {
  require(labels.size() == static_cast<std::size_t>(embeddings.rows()) &&
              !labels.empty(),
          ErrorCode::DimensionMismatch, "one label per embedding");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i)
    correct += predict_class(bank, embeddings.row(i)) ==
               labels[static_cast<std::size_t>(i)];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double logit_accuracy(const RowMatrix &logits,
                      std::span<const std::uint32_t> labels) {
  require(labels.size() == static_cast<std::size_t>(logits.rows()) &&
              !labels.empty(),
          ErrorCode::DimensionMismatch, "one label per row");
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += static_cast<std::uint32_t>(best) ==
               labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

LatencyStats bench_score_latency(const ScoreFunction &score,
                                 const RowMatrix &samples,
                                 const LatencyOptions &opts) {
  require(samples.rows() >= 1, ErrorCode::InvalidArgument, "no samples");
  require(opts.repeats >= 1 && opts.batch >= 1, ErrorCode::InvalidArgument,
          "repeats and batch must be >= 1");
  using Clock = std::chrono::steady_clock;
  const Eigen::Index n = samples.rows();
  volatile double sink = 0.0;
  for (int i = 0; i < opts.warmup; ++i)
    sink = sink + score(samples.row(i % n));
  std::vector<double> per_sample;
  per_sample.reserve(static_cast<std::size_t>(opts.repeats));
  Eigen::Index cursor = 0;
  for (int r = 0; r < opts.repeats; ++r) {
    double acc = 0.0;
    const auto start = Clock::now();
    for (int i = 0; i < opts.batch; ++i) {
      acc += score(samples.row(cursor));
      cursor = cursor + 1 == n ? 0 : cursor + 1;
    }
    const auto stop = Clock::now();
    sink = sink + acc;
    per_sample.push_back(
        std::chrono::duration<double, std::micro>(stop - start).count() /
        opts.batch);
  }
  LatencyStats stats;
  stats.repeats = opts.repeats;
  stats.batch = opts.batch;
  stats.mean_us = std::accumulate(per_sample.begin(), per_sample.end(), 0.0) /
                  static_cast<double>(per_sample.size());
  double var = 0.0;
  for (double t : per_sample)
    var += (t - stats.mean_us) * (t - stats.mean_us);
  stats.std_us = per_sample.size() > 1
                     ? std::sqrt(var / static_cast<double>(per_sample.size() - 1))
                     : 0.0;
  std::sort(per_sample.begin(), per_sample.end());
  const std::size_t mid = per_sample.size() / 2;
  stats.median_us = per_sample.size() % 2 == 1
                        ? per_sample[mid]
                        : 0.5 * (per_sample[mid - 1] + per_sample[mid]);
  return stats;
}

std::vector<double> default_tau_grid(double center, int points) {
  require(center > 0.0 && std::isfinite(center), ErrorCode::InvalidArgument,
          "grid center must be positive");
  require(points >= 2, ErrorCode::InvalidArgument, "grid needs >= 2 points");
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double lo = std::log10(center) - 2.0;
  const double step = 4.0 / (points - 1);
  for (int i = 0; i < points; ++i)
    grid[static_cast<std::size_t>(i)] = std::pow(10.0, lo + step * i);
  return grid;
}

std::size_t SweepTable::best_index() const {
  require(!mean_auroc.empty(), ErrorCode::InvalidArgument, "empty sweep");
  std::size_t best = 0;
  for (std::size_t i = 1; i < mean_auroc.size(); ++i) {
    const bool better = mean_auroc[i] > mean_auroc[best] ||
                        (mean_auroc[i] == mean_auroc[best] && taus[i] < taus[best]);
    if (better)
      best = i;
  }
  return best;
}

namespace {

std::vector<double> to_std(const Vector &v) {
  return {v.data(), v.data() + v.size()};
}

} // namespace

SweepTable temperature_sweep(const PrototypeBank &bank, const RowMatrix &id_test,
                             std::span<const NamedEmbeddings> ood,
                             std::span<const double> tau_grid) {
  require(!ood.empty(), ErrorCode::InvalidArgument, "no OOD sets to sweep");
  require(!tau_grid.empty(), ErrorCode::InvalidArgument, "empty tau grid");
  SweepTable table;
  table.taus.assign(tau_grid.begin(), tau_grid.end());
  for (const auto &set : ood)
    table.ood_names.push_back(set.name);
  for (double tau : tau_grid) {
    const auto fn = ScoreFunction::ink(bank, tau);
    const auto id_scores = to_std(score_batch(fn, id_test));
    std::vector<double> row;
    for (const auto &set : ood)
      row.push_back(auroc(id_scores, to_std(score_batch(fn, set.embeddings))));
    table.mean_auroc.push_back(std::accumulate(row.begin(), row.end(), 0.0) /
                               static_cast<double>(row.size()));
    table.auroc.push_back(std::move(row));
  }
  return table;
}

TauSelection select_tau_by_corruption(const PrototypeBank &bank,
                                      const RawInputSet &id_val,
                                      const EmbedFn &embed, double sigma,
                                      std::span<const double> tau_grid,
                                      std::uint64_t seed) {
  const RawInputSet corrupted = speckle_corrupt(id_val, sigma, seed);
  const RowMatrix id_z = embed(id_val.points);
  const std::vector<NamedEmbeddings> ood{{"speckle", embed(corrupted.points)}};
  TauSelection sel;
  sel.table = temperature_sweep(bank, id_z, ood, tau_grid);
  sel.tau = sel.table.best_tau();
  return sel;
}

Histogram score_histogram(std::span<const double> id_scores,
                          std::span<const double> ood_scores, int bins) {
  require(bins >= 1, ErrorCode::InvalidArgument, "bins must be >= 1");
  require(!id_scores.empty() || !ood_scores.empty(),
          ErrorCode::InvalidArgument, "no scores to bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (auto s : {id_scores, ood_scores})
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (hi == lo)
    hi = lo + 1.0;
  Histogram h;
  h.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b)
    h.edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * b / bins;
  auto fill = [&](std::span<const double> scores) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (double v : scores) {
      auto b = static_cast<int>((v - lo) / (hi - lo) * bins);
      ++counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
    }
    return counts;
  };
  h.id_counts = fill(id_scores);
  h.ood_counts = fill(ood_scores);
  return h;
}

void write_report(const DetectionReport &report,
                  const std::filesystem::path &path) {
  std::string out;
  out += fmt::format("{}\n[meta]\n", kReportVersion);
  for (const auto &[k, v] : report.meta)
    out += fmt::format("{}={}\n", k, v);
  out += "[detectors]\n";
  for (const auto &d : report.detectors)
    out += d.to_record() + "\n";
  out += "[results]\nscore,ood_set,auroc,fpr_at_tpr\n";
  for (const auto &r : report.results)
    out += fmt::format("{},{},{},{}\n", r.score, r.ood_set, r.auroc, r.fpr);
  if (!report.sweep.empty()) {
    out += "[sweep]\ntau,mean_auroc\n";
    for (const auto &[tau, a] : report.sweep)
      out += fmt::format("{},{}\n", tau, a);
  }
  if (!report.timing.empty()) {
    out += "[timing nondeterministic]\n"
           "score,pool_size,mean_us,std_us,median_us,repeats,batch\n";
    for (const auto &t : report.timing)
      out += fmt::format("{},{},{},{},{},{},{}\n", t.score, t.pool_size,
                         t.stats.mean_us, t.stats.std_us, t.stats.median_us,
                         t.stats.repeats, t.stats.batch);
  }
  detail::write_file(path, out);
}

namespace {

std::vector<std::string> split_csv(const std::string &line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ','))
    fields.push_back(f);
  return fields;
}

template <class T> T parse_number(const std::string &s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc{} && ptr == s.data() + s.size(),
          ErrorCode::MalformedHeader, fmt::format("bad number '{}'", s));
  return v;
}

} // namespace

DetectionReport read_report(const std::filesystem::path &path) {
  std::stringstream in(detail::read_file(path));
  std::string line;
  require(std::getline(in, line) && line == kReportVersion,
          ErrorCode::MalformedHeader,
          fmt::format("'{}' is not an {} file", path.string(), kReportVersion));
  DetectionReport report;
  std::string section;
  bool expect_columns = false;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    if (line.front() == '[') {
      section = line;
      expect_columns = section != "[meta]" && section != "[detectors]";
      continue;
    }
    if (expect_columns) {
      expect_columns = false;
      continue;
    }
    if (section == "[meta]") {
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorCode::MalformedHeader,
              "meta lines are key=value");
      report.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    } else if (section == "[detectors]") {
      report.detectors.push_back(CalibratedDetector::from_record(line));
    } else if (section == "[results]") {
      const auto f = split_csv(line);
      require(f.size() == 4, ErrorCode::MalformedHeader, "bad result row");
      report.results.push_back({f[0], f[1], parse_number<double>(f[2]),
                                parse_number<double>(f[3])});
    } else if (section == "[sweep]") {
      const auto f = split_csv(line);
      require(f.size() == 2, ErrorCode::MalformedHeader, "bad sweep row");
      report.sweep.emplace_back(parse_number<double>(f[0]),
                                parse_number<double>(f[1]));
    } else if (section == "[timing nondeterministic]") {
      const auto f = split_csv(line);
      require(f.size() == 7, ErrorCode::MalformedHeader, "bad timing row");
      TimingRow t{f[0], parse_number<std::size_t>(f[1]), {}};
      t.stats.mean_us = parse_number<double>(f[2]);
      t.stats.std_us = parse_number<double>(f[3]);
      t.stats.median_us = parse_number<double>(f[4]);
      t.stats.repeats = parse_number<int>(f[5]);
      t.stats.batch = parse_number<int>(f[6]);
      report.timing.push_back(std::move(t));
    } else {
      throw Error(ErrorCode::MalformedHeader,
                  fmt::format("unknown report section '{}'", section));
    }
  }
  return report;
}

void append_histogram_csv(std::string &csv, std::string_view score,
                          std::string_view ood_set, const Histogram &h) {
  if (csv.empty())
    csv = "score,ood_set,bin,lo,hi,id_count,ood_count\n";
  for (std::size_t b = 0; b < h.id_counts.size(); ++b)
    csv += fmt::format("{},{},{},{},{},{},{}\n", score, ood_set, b, h.edges[b],
                       h.edges[b + 1], h.id_counts[b], h.ood_counts[b]);
}

std::string sweep_csv(const SweepTable &table) {
  std::string csv = "tau";
  for (const auto &name : table.ood_names)
    csv += "," + name;
  csv += ",mean_auroc\n";
  for (std::size_t i = 0; i < table.taus.size(); ++i) {
    csv += fmt::format("{}", table.taus[i]);
    for (double a : table.auroc[i])
      csv += fmt::format(",{}", a);
    csv += fmt::format(",{}\n", table.mean_auroc[i]);
  }
  return csv;
}

} // namespace ink
