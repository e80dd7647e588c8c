#pragma once

// Slow reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

/// (#[s_pos > s_neg] + 0.5 #[s_pos == s_neg]) / (P N) over all pairs, with
/// the numerator kept in integer half-units.
inline std::optional<double> auroc_pairs(const std::vector<int>& y, const std::vector<double>& s) {
  std::uint64_t twice = 0, p = 0, n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? p : n) += 1;
  if (!p || !n) return std::nullopt;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j]) continue;
      twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

struct MatchOptimum {
  std::size_t pairs = 0;
  double cost = 0.0;
};

/// Best matching by exhaustive search over every injection of the smaller
/// side into the larger. Without a gap limit every smaller-side record is
/// matched and cost is minimised; with one, the number of pairs within the
/// limit is maximised first, then cost.
inline MatchOptimum match_exhaustive(const std::vector<double>& a, const std::vector<double>& b,
                                     std::optional<double> max_gap = std::nullopt) {
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  std::vector<std::size_t> perm(large.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  MatchOptimum best{0, std::numeric_limits<double>::infinity()};
  const std::size_t m = small.size();
  do {
    if (!max_gap) {
      double cost = 0.0;
      for (std::size_t i = 0; i < m; ++i) cost += std::abs(small[i] - large[perm[i]]);
      if (cost < best.cost) best = {m, cost};
      continue;
    }
    // Dropping a pair never helps once its gap is within the limit, so
    // every eligible pair is kept.
    std::size_t count = 0;
    double cost = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double gap = std::abs(small[i] - large[perm[i]]);
      if (gap <= *max_gap) {
        ++count;
        cost += gap;
      }
    }
    if (count > best.pairs || (count == best.pairs && cost < best.cost)) best = {count, cost};
  } while (std::next_permutation(perm.begin(), perm.end()));
  if (best.pairs == 0) best.cost = 0.0;
  return best;
}

/// Cost of pairing the i-th smallest of `a` with the i-th smallest of `b`.
inline double sorted_pairing_cost(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double cost = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) cost += std::abs(a[i] - b[i]);
  return cost;
}

/// Weighted isotonic least squares by enumerating every partition of the
/// x-sorted points into contiguous blocks whose means are nondecreasing.
/// Points must have distinct x. Returns fitted values in x-sorted order.
inline std::vector<double> isotonic_blocks(const std::vector<double>& x, const std::vector<double>& t,
                                           const std::vector<double>& w) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<double> best;
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<double> fit(n);
    double prev = -std::numeric_limits<double>::infinity();
    bool ok = true;
    double sse = 0.0;
    for (std::size_t start = 0; start < n && ok;) {
      std::size_t end = start + 1;
      while (end < n && !(mask >> (end - 1) & 1u)) ++end;
      double sw = 0.0, swt = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        sw += w[order[k]];
        swt += w[order[k]] * t[order[k]];
      }
      double mean = swt / sw;
      if (mean < prev) ok = false;
      prev = mean;
      for (std::size_t k = start; k < end; ++k) {
        fit[k] = mean;
        sse += w[order[k]] * (t[order[k]] - mean) * (t[order[k]] - mean);
      }
      start = end;
    }
    if (ok && sse < best_sse) {
      best_sse = sse;
      best = fit;
    }
  }
  return best;
}

/// Profile of the penalised logistic objective over a grid of one weight,
/// used to bracket the optimum of a one-feature problem.
template <class Objective>
std::pair<double, double> grid_minimum(Objective f, double lo, double hi, int steps) {
  double best_x = lo, best_f = f(lo);
  for (int i = 1; i <= steps; ++i) {
    double x = lo + (hi - lo) * i / steps;
    double v = f(x);
    if (v < best_f) {
      best_f = v;
      best_x = x;
    }
  }
  return {best_x, best_f};
}

}  // namespace oracle
