#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "ctxstrata/dataset.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/metrics.hpp"

namespace ctxstrata {

/// Gap limit applied by the matched evaluation unless overridden. Without a
/// limit, a 1:1 assignment that must use every minority record cannot balance
/// the pre-test distributions when the classes overlap only partially.
inline constexpr double kDefaultMaxGap = 0.01;

struct MatchOptions {
  /// nullopt: exact minimum-cost assignment of the smaller class into the
  /// larger one. Otherwise: the largest set of pairs whose gaps are all
  /// <= max_gap, and among those the one with minimum total gap.
  std::optional<double> max_gap;
};

struct MatchedPair {
  std::string pos_study_id;
  std::string neg_study_id;
  double gap = 0.0;
};

struct MatchedSet {
  std::vector<MatchedPair> pairs;
  double total_cost = 0.0;
  std::size_t unmatched = 0;  // leftover majority-class records
  std::size_t attrition = 0;  // minority-class records dropped by the gap limit
  double max_gap = 0.0;       // largest gap among the pairs
};

namespace detail {

struct Point {
  double p;
  std::uint64_t key;
  std::size_t index;  // position in the caller's span
};

inline std::vector<Point> sorted_points(std::span<const double> p,
                                        std::span<const std::uint64_t> key) {
  std::vector<Point> pts(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) pts[i] = {p[i], key[i], i};
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return std::tie(a.p, a.key, a.index) < std::tie(b.p, b.key, b.index);
  });
  return pts;
}

// Minimum-cost assignment of every row into distinct columns, m <= n, both
// sorted. An optimal assignment is order preserving, so row i uses a column
// in [i, i + n - m]; dp over that band.
inline std::vector<std::pair<std::size_t, std::size_t>> assign_all_rows(
    const std::vector<Point>& rows, const std::vector<Point>& cols) {
  const std::size_t m = rows.size(), n = cols.size();
  const std::size_t width = n - m + 1;
  std::vector<double> prev(width, 0.0), cur(width);
  std::vector<std::uint8_t> took(m * width);  // 1: row i paired with column i + d
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t d = 0; d < width; ++d) {
      double pair = prev[d] + std::abs(rows[i].p - cols[i + d].p);
      if (d > 0 && cur[d - 1] <= pair) {
        cur[d] = cur[d - 1];
        took[i * width + d] = 0;
      } else {
        cur[d] = pair;
        took[i * width + d] = 1;
      }
    }
    std::swap(prev, cur);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(m);
  std::size_t i = m, d = width - 1;
  while (i > 0) {
    if (took[(i - 1) * width + d]) {
      out.emplace_back(i - 1, i - 1 + d);
      --i;
    } else {
      --d;
    }
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Maximum number of pairs with gap <= limit, then minimum total gap. An
// optimal solution is order preserving and row r only reaches the columns in
// its window [lo_r, hi_r); the dp keeps one band per row.
inline std::vector<std::pair<std::size_t, std::size_t>> assign_within_gap(
    const std::vector<Point>& rows, const std::vector<Point>& cols, double limit) {
  const std::size_t m = rows.size(), n = cols.size();
  struct Value {
    std::size_t count = 0;
    double cost = 0.0;
  };
  auto better = [](const Value& a, const Value& b) {
    return a.count != b.count ? a.count > b.count : a.cost < b.cost;
  };

  std::vector<std::size_t> lo(m), hi(m);
  {
    // Same predicate as the reported gap, so rounding cannot admit a pair
    // whose |gap| exceeds the limit.
    auto within = [&](std::size_t r, std::size_t c) {
      return std::abs(rows[r].p - cols[c].p) <= limit;
    };
    std::size_t a = 0, b = 0;
    for (std::size_t r = 0; r < m; ++r) {
      while (a < n && cols[a].p < rows[r].p && !within(r, a)) ++a;
      if (b < a) b = a;
      while (b < n && (cols[b].p <= rows[r].p || within(r, b))) ++b;
      lo[r] = a;
      hi[r] = b;
    }
  }
  // Row r + 1 of the dp table covers columns-used counts j in [lo[r], hi[r]].
  std::vector<std::size_t> offset(m + 1, 0);
  for (std::size_t r = 0; r < m; ++r) offset[r + 1] = offset[r] + (hi[r] - lo[r] + 1);
  enum : std::uint8_t { kUp, kLeft, kDiag };
  std::vector<std::uint8_t> move(offset[m]);
  std::vector<Value> prev, cur;
  std::size_t prev_lo = 0, prev_hi = 0;  // the empty row 0 is constant: {0, 0}
  prev.assign(1, Value{});

  auto prev_at = [&](std::size_t j) -> const Value& {
    return prev[std::min(j, prev_hi) - prev_lo];
  };
  for (std::size_t r = 0; r < m; ++r) {
    cur.assign(hi[r] - lo[r] + 1, Value{});
    for (std::size_t j = lo[r]; j <= hi[r]; ++j) {
      const std::size_t c = j - lo[r];
      Value best = prev_at(j);
      std::uint8_t mv = kUp;
      if (j > lo[r] && better(cur[c - 1], best)) {
        best = cur[c - 1];
        mv = kLeft;
      }
      if (j > lo[r]) {  // column j - 1 is inside the window
        const Value& d = prev_at(j - 1);
        Value diag{d.count + 1, d.cost + std::abs(rows[r].p - cols[j - 1].p)};
        if (better(diag, best)) {
          best = diag;
          mv = kDiag;
        }
      }
      cur[c] = best;
      move[offset[r] + c] = mv;
    }
    std::swap(prev, cur);
    prev_lo = lo[r];
    prev_hi = hi[r];
  }

  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t r = m, j = n;
  while (r > 0) {
    const std::size_t row = r - 1;
    j = std::min(j, hi[row]);
    switch (move[offset[row] + (j - lo[row])]) {
      case kUp:
        --r;
        break;
      case kLeft:
        --j;
        break;
      default:
        out.emplace_back(row, j - 1);
        --r;
        --j;
    }
  }
  std::reverse(out.begin(), out.end());
  return out;
}

inline bool lexicographically_le(const std::vector<Point>& a, const std::vector<Point>& b) {
  return !std::lexicographical_compare(
      b.begin(), b.end(), a.begin(), a.end(), [](const Point& x, const Point& y) {
        return std::tie(x.p, x.key) < std::tie(y.p, y.key);
      });
}

}  // namespace detail

/// Index-level matching used by both the public API and the bootstrap.
/// Returns (pos index, neg index) pairs ordered by positive pre-test value.
/// The result does not depend on argument order: matching (neg, pos) gives
/// the same pairs with the roles swapped.
inline std::vector<std::pair<std::size_t, std::size_t>> match_indices(
    std::span<const double> pos_p, std::span<const std::uint64_t> pos_key,
    std::span<const double> neg_p, std::span<const std::uint64_t> neg_key,
    const MatchOptions& options = {}) {
  if (pos_p.empty() || neg_p.empty())
    throw Error(ErrorKind::empty_class, pos_p.empty() ? "match: no positive records"
                                                      : "match: no negative records");
  if (pos_p.size() != pos_key.size() || neg_p.size() != neg_key.size())
    throw Error(ErrorKind::shape, "match: keys and values differ in length");
  if (options.max_gap && !(*options.max_gap >= 0.0))
    throw Error(ErrorKind::config, "match: max_gap must be non-negative");

  auto pos = detail::sorted_points(pos_p, pos_key);
  auto neg = detail::sorted_points(neg_p, neg_key);
  // Canonical orientation: rows are the smaller side, or for equal sizes the
  // side whose sorted (p, key) sequence compares lower.
  bool pos_rows = pos.size() < neg.size() ||
                  (pos.size() == neg.size() && detail::lexicographically_le(pos, neg));
  const auto& rows = pos_rows ? pos : neg;
  const auto& cols = pos_rows ? neg : pos;
  auto raw = options.max_gap ? detail::assign_within_gap(rows, cols, *options.max_gap)
                             : detail::assign_all_rows(rows, cols);

  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(raw.size());
  for (auto [r, c] : raw) {
    if (pos_rows)
      out.emplace_back(rows[r].index, cols[c].index);
    else
      out.emplace_back(cols[c].index, rows[r].index);
  }
  std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
    return std::tie(pos_p[a.first], pos_key[a.first], a.first) <
           std::tie(pos_p[b.first], pos_key[b.first], b.first);
  });
  return out;
}

struct MatchCandidate {
  std::string study_id;
  double pretest = 0.0;
};

/// 1:1 matching of positives and negatives on |pretest gap|. Ties among
/// equal-cost optima are broken by study id.
inline MatchedSet match(std::span<const MatchCandidate> pos, std::span<const MatchCandidate> neg,
                        const MatchOptions& options = {}) {
  std::vector<std::string> ids;
  ids.reserve(pos.size() + neg.size());
  for (const auto& c : pos) ids.push_back(c.study_id);
  for (const auto& c : neg) ids.push_back(c.study_id);
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  std::vector<std::uint64_t> key(ids.size());
  for (std::size_t r = 0; r < order.size(); ++r) key[order[r]] = r;

  std::vector<double> pp, np;
  for (const auto& c : pos) pp.push_back(c.pretest);
  for (const auto& c : neg) np.push_back(c.pretest);
  std::span<const std::uint64_t> pk(key.data(), pos.size());
  std::span<const std::uint64_t> nk(key.data() + pos.size(), neg.size());
  auto idx = match_indices(pp, pk, np, nk, options);

  MatchedSet out;
  for (auto [a, b] : idx) {
    double gap = std::abs(pp[a] - np[b]);
    out.pairs.push_back({pos[a].study_id, neg[b].study_id, gap});
    out.total_cost += gap;
    out.max_gap = std::max(out.max_gap, gap);
  }
  out.unmatched = std::max(pos.size(), neg.size()) - out.pairs.size();
  out.attrition = std::min(pos.size(), neg.size()) - out.pairs.size();
  return out;
}

struct MatchedEval {
  AurocResult full;
  AurocResult matched;
  MatchedSet set;
};

/// Matches the positives and negatives of `columns` (pretest required) and
/// computes the score AUROC on the full set and on the 2 * |pairs| matched
/// studies.
inline MatchedEval matched_eval(const LabelColumns& columns, const MatchOptions& options = {}) {
  if (columns.pretest.size() != columns.size())
    throw Error(ErrorKind::missing_pretest, "matched evaluation needs pretest for " + columns.label);
  std::vector<std::size_t> pos_row, neg_row;
  std::vector<double> pp, np;
  std::vector<std::uint64_t> pk, nk;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    auto& rows = columns.y[i] ? pos_row : neg_row;
    (columns.y[i] ? pp : np).push_back(columns.pretest[i]);
    (columns.y[i] ? pk : nk).push_back(columns.key[i]);
    rows.push_back(i);
  }
  auto idx = match_indices(pp, pk, np, nk, options);

  MatchedEval out;
  out.full = auroc(columns.y, columns.score);
  std::vector<std::size_t> rows;
  for (auto [a, b] : idx) {
    double gap = std::abs(pp[a] - np[b]);
    out.set.pairs.push_back({columns.study_ids[pos_row[a]], columns.study_ids[neg_row[b]], gap});
    out.set.total_cost += gap;
    out.set.max_gap = std::max(out.set.max_gap, gap);
    rows.push_back(pos_row[a]);
    rows.push_back(neg_row[b]);
  }
  out.set.unmatched = std::max(pp.size(), np.size()) - idx.size();
  out.set.attrition = std::min(pp.size(), np.size()) - idx.size();
  if (rows.empty())
    throw Error(ErrorKind::empty_class, "matched evaluation for " + columns.label +
                                            ": no pair within the gap limit");
  out.matched = auroc(columns.y, columns.score, rows);
  return out;
}

inline MatchedEval matched_eval(std::span<const StudyRecord> records, const std::string& label,
                                const MatchOptions& options = {}) {
  return matched_eval(label_columns(records, label, true), options);
}

}  // namespace ctxstrata
