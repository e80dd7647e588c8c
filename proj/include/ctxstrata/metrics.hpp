#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctxstrata/error.hpp"

namespace ctxstrata {

struct AurocResult {
  std::optional<double> value;  // defined iff n_pos >= 1 and n_neg >= 1
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  bool defined() const { return value.has_value(); }
};

namespace detail {

// (score, label) pairs are sorted in place.
inline AurocResult auroc_sorted_pairs(std::vector<std::pair<double, int>>& items) {
  AurocResult out;
  for (const auto& [s, y] : items) {
    if (std::isnan(s)) throw Error(ErrorKind::value, "auroc: NaN score");
    (y ? out.n_pos : out.n_neg) += 1;
  }
  if (out.n_pos == 0 || out.n_neg == 0) return out;

  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Twice the positive rank sum, with tied groups sharing their mid-rank.
  std::int64_t twice_rank_sum = 0;
  std::size_t start = 0;
  while (start < items.size()) {
    std::size_t end = start;
    std::int64_t pos_in_group = 0;
    while (end < items.size() && items[end].first == items[start].first) {
      pos_in_group += items[end].second ? 1 : 0;
      ++end;
    }
    twice_rank_sum += pos_in_group * static_cast<std::int64_t>(start + 1 + end);
    start = end;
  }
  const auto p = static_cast<std::int64_t>(out.n_pos);
  const auto n = static_cast<std::int64_t>(out.n_neg);
  const std::int64_t twice_u = twice_rank_sum - p * (p + 1);
  out.value = static_cast<double>(twice_u) / static_cast<double>(2 * p * n);
  return out;
}

}  // namespace detail

/// Mann-Whitney AUROC: the fraction of positive/negative pairs in which the
/// positive scores higher, ties counting one half. O(n log n).
inline AurocResult auroc(std::span<const int> y, std::span<const double> s) {
  if (y.size() != s.size())
    throw Error(ErrorKind::shape, "auroc: |y| = " + std::to_string(y.size()) +
                                      " but |s| = " + std::to_string(s.size()));
  if (y.empty()) throw Error(ErrorKind::shape, "auroc: empty input");
  std::vector<std::pair<double, int>> items(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) items[i] = {s[i], y[i] != 0};
  return detail::auroc_sorted_pairs(items);
}

/// AUROC over the rows of (y, s) selected by `indices` (repeats allowed).
inline AurocResult auroc(std::span<const int> y, std::span<const double> s,
                         std::span<const std::size_t> indices) {
  if (y.size() != s.size()) throw Error(ErrorKind::shape, "auroc: length mismatch");
  if (indices.empty()) throw Error(ErrorKind::shape, "auroc: empty input");
  std::vector<std::pair<double, int>> items(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i)
    items[i] = {s[indices[i]], y[indices[i]] != 0};
  return detail::auroc_sorted_pairs(items);
}

struct LabelScores {
  std::vector<int> y;
  std::vector<double> s;
};

struct MacroAuroc {
  std::map<std::string, AurocResult> per_label;
  double macro = 0.0;                // mean over defined labels
  std::vector<std::string> skipped;  // labels with a single class
};

/// Per-label AUROC plus the mean over labels where it is defined.
inline MacroAuroc macro_auroc(const std::map<std::string, LabelScores>& labels) {
  MacroAuroc out;
  double sum = 0.0;
  std::size_t defined = 0;
  for (const auto& [label, data] : labels) {
    AurocResult r = auroc(data.y, data.s);
    if (r.defined()) {
      sum += *r.value;
      ++defined;
    } else {
      out.skipped.push_back(label);
    }
    out.per_label.emplace(label, r);
  }
  if (defined == 0)
    throw Error(ErrorKind::undefined_metric,
                "macro AUROC undefined: no label has both classes");
  out.macro = sum / static_cast<double>(defined);
  return out;
}

}  // namespace ctxstrata
