#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxstrata/error.hpp"
#include "ctxstrata/folds.hpp"

namespace ctxstrata {

/// Monotone piecewise-linear map from raw score to calibrated probability.
/// Queries outside [breakpoints.front(), breakpoints.back()] clamp to the end
/// values.
class IsotonicMap {
 public:
  IsotonicMap() = default;
  IsotonicMap(std::vector<double> breakpoints, std::vector<double> values)
      : breakpoints_(std::move(breakpoints)), values_(std::move(values)) {
    if (breakpoints_.empty() || breakpoints_.size() != values_.size())
      throw Error(ErrorKind::value, "isotonic map: breakpoints/values mismatch");
    for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
      if (!(breakpoints_[i - 1] < breakpoints_[i]))
        throw Error(ErrorKind::value, "isotonic map: breakpoints not increasing");
      if (values_[i - 1] > values_[i])
        throw Error(ErrorKind::value, "isotonic map: values decreasing");
    }
  }

  const std::vector<double>& breakpoints() const { return breakpoints_; }
  const std::vector<double>& values() const { return values_; }
  bool empty() const { return breakpoints_.empty(); }

  double operator()(double x) const {
    if (x <= breakpoints_.front()) return values_.front();
    if (x >= breakpoints_.back()) return values_.back();
    auto hi = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), x);
    std::size_t j = static_cast<std::size_t>(hi - breakpoints_.begin());
    double x0 = breakpoints_[j - 1], x1 = breakpoints_[j];
    double t = (x - x0) / (x1 - x0);
    return values_[j - 1] + t * (values_[j] - values_[j - 1]);
  }

 private:
  std::vector<double> breakpoints_;
  std::vector<double> values_;
};

inline nlohmann::ordered_json to_json(const IsotonicMap& map) {
  nlohmann::ordered_json j;
  j["breakpoints"] = map.breakpoints();
  j["values"] = map.values();
  return j;
}

inline IsotonicMap isotonic_from_json(const nlohmann::json& j) {
  try {
    return IsotonicMap(j.at("breakpoints").get<std::vector<double>>(),
                       j.at("values").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::schema, std::string("isotonic map: ") + e.what());
  }
}

/// Weighted least-squares nondecreasing fit by pool-adjacent-violators.
/// Points with equal score are pooled before fitting; the returned map has
/// one breakpoint per distinct score.
inline IsotonicMap fit_pava(std::span<const double> scores,
                            std::span<const double> targets,
                            std::span<const double> weights) {
  if (scores.empty()) throw Error(ErrorKind::insufficient_data, "fit_pava: empty input");
  if (scores.size() != targets.size() || scores.size() != weights.size())
    throw Error(ErrorKind::shape, "fit_pava: input lengths differ");
  for (double w : weights)
    if (!(w > 0.0)) throw Error(ErrorKind::value, "fit_pava: weights must be positive");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  struct Block {
    double weighted_sum;
    double weight;
    std::size_t first;  // index into `xs` of the first distinct score
    double value() const { return weighted_sum / weight; }
  };
  std::vector<double> xs;
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < order.size();) {
    const double x = scores[order[i]];
    Block b{0.0, 0.0, xs.size()};
    for (; i < order.size() && scores[order[i]] == x; ++i) {
      b.weighted_sum += weights[order[i]] * targets[order[i]];
      b.weight += weights[order[i]];
    }
    xs.push_back(x);
    blocks.push_back(b);
    while (blocks.size() > 1 &&
           blocks[blocks.size() - 2].value() > blocks.back().value()) {
      Block top = blocks.back();
      blocks.pop_back();
      blocks.back().weighted_sum += top.weighted_sum;
      blocks.back().weight += top.weight;
    }
  }

  std::vector<double> values(xs.size());
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::size_t end = b + 1 < blocks.size() ? blocks[b + 1].first : xs.size();
    std::fill(values.begin() + static_cast<std::ptrdiff_t>(blocks[b].first),
              values.begin() + static_cast<std::ptrdiff_t>(end), blocks[b].value());
  }
  return IsotonicMap(std::move(xs), std::move(values));
}

inline IsotonicMap fit_pava(std::span<const double> scores, std::span<const int> targets) {
  std::vector<double> t(targets.begin(), targets.end());
  std::vector<double> w(targets.size(), 1.0);
  return fit_pava(scores, t, w);
}

struct CalibrationSample {
  std::string subject_id;
  double score = 0.0;
  int target = 0;
};

/// Pointwise mean of several maps, exact on the union of their breakpoints.
inline IsotonicMap average_maps(std::span<const IsotonicMap> maps) {
  if (maps.empty()) throw Error(ErrorKind::insufficient_data, "average_maps: no maps");
  std::set<double> grid;
  for (const auto& m : maps) grid.insert(m.breakpoints().begin(), m.breakpoints().end());
  std::vector<double> xs(grid.begin(), grid.end());
  std::vector<double> ys(xs.size(), 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (const auto& m : maps) ys[i] += m(xs[i]);
    ys[i] /= static_cast<double>(maps.size());
  }
  return IsotonicMap(std::move(xs), std::move(ys));
}

/// Cross-validated isotonic calibration. Folds group records by subject and
/// balance positives; fold f's map is fit on the other k-1 folds, and the
/// result is the pointwise average of the k fold maps.
inline IsotonicMap calibrate_cv(std::span<const CalibrationSample> samples, int k = 5,
                                std::uint64_t seed = 0) {
  std::size_t positives = 0;
  for (const auto& s : samples) positives += s.target ? 1 : 0;
  if (positives == 0 || positives == samples.size())
    throw Error(ErrorKind::degenerate_target,
                "calibrate_cv: targets must contain both classes");

  std::vector<std::string> groups;
  std::vector<int> targets;
  groups.reserve(samples.size());
  targets.reserve(samples.size());
  for (const auto& s : samples) {
    groups.push_back(s.subject_id);
    targets.push_back(s.target);
  }
  std::vector<int> fold = group_stratified_folds(groups, targets, k, seed);

  std::vector<IsotonicMap> maps;
  maps.reserve(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    std::vector<double> xs, ts, ws;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (fold[i] == f) continue;
      xs.push_back(samples[i].score);
      ts.push_back(samples[i].target);
      ws.push_back(1.0);
    }
    maps.push_back(fit_pava(xs, ts, ws));
  }
  return average_maps(maps);
}

}  // namespace ctxstrata
