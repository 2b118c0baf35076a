#include "ink/detector.hpp"

#include "ink/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <vector>

namespace ink {

std::size_t required_id_count(std::size_t n, double tpr) {
  // k / n >= tpr evaluated exactly as the fraction is later reported.
  const auto dn = static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(tpr * dn));
  k = std::min(k, n);
  while (k > 0 && static_cast<double>(k - 1) / dn >= tpr)
    --k;
  while (k < n && static_cast<double>(k) / dn < tpr)
    ++k;
  return k;
}

CalibratedDetector calibrate(std::span<const double> id_scores,
                             double target_tpr, std::string score_kind) {
  require(!id_scores.empty(), ErrorCode::InvalidArgument,
          "calibration needs at least one ID score");
  require(target_tpr > 0.0 && target_tpr < 1.0, ErrorCode::InvalidArgument,
          "target TPR must lie in (0, 1)");
  for (double s : id_scores)
    require(!std::isnan(s), ErrorCode::InvalidArgument, "NaN ID score");
  std::vector<double> sorted(id_scores.begin(), id_scores.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const std::size_t k = std::max<std::size_t>(1, required_id_count(n, target_tpr));
  return {std::move(score_kind), sorted[n - k], target_tpr};
}

std::string CalibratedDetector::to_record() const {
  return fmt::format("detector kind={} lambda={} target_tpr={}",
                     score_kind.empty() ? "-" : score_kind, lambda, target_tpr);
}

namespace {

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc{} && ptr == text.data() + text.size(),
          ErrorCode::InvalidArgument,
          fmt::format("'{}' is not a number", text));
  return v;
}

} // namespace

CalibratedDetector CalibratedDetector::from_record(std::string_view line) {
  constexpr std::string_view prefix = "detector ";
  require(line.starts_with(prefix), ErrorCode::InvalidArgument,
          "not a detector record");
  line.remove_prefix(prefix.size());
  CalibratedDetector det;
  bool have_lambda = false;
  bool have_tpr = false;
  while (!line.empty()) {
    const auto space = line.find(' ');
    const auto field = line.substr(0, space);
    line = space == std::string_view::npos ? std::string_view{}
                                           : line.substr(space + 1);
    const auto eq = field.find('=');
    require(eq != std::string_view::npos, ErrorCode::InvalidArgument,
            fmt::format("bad detector field '{}'", field));
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "kind") {
      det.score_kind = value == "-" ? std::string{} : std::string(value);
    } else if (key == "lambda") {
      det.lambda = parse_double(value);
      have_lambda = true;
    } else if (key == "target_tpr") {
      det.target_tpr = parse_double(value);
      have_tpr = true;
    }
  }
  require(have_lambda && have_tpr, ErrorCode::InvalidArgument,
          "detector record needs lambda and target_tpr");
  return det;
}

} // namespace ink
