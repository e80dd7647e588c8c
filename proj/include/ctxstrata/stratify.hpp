#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctxstrata/dataset.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/phrases.hpp"

namespace ctxstrata {

// ---------------------------------------------------------------------------
// Quantile strata

enum class RiskStratum { bottom25, middle50, top25 };

constexpr std::string_view to_string(RiskStratum s) noexcept {
  switch (s) {
    case RiskStratum::bottom25: return "bottom25";
    case RiskStratum::middle50: return "middle50";
    case RiskStratum::top25: return "top25";
  }
  return "middle50";
}

struct QuantileStrata {
  std::string label;
  double q25 = 0.0;
  double q75 = 0.0;
  std::map<std::string, RiskStratum> assignment;

  std::vector<std::string> members(RiskStratum s) const {
    std::vector<std::string> out;
    for (const auto& [id, st] : assignment)
      if (st == s) out.push_back(id);
    return out;
  }
};

/// Element of sorted `values` at zero-based rank floor(fraction * n), capped
/// at n - 1.
inline double rank_cut(std::span<const double> sorted_values, double fraction) {
  const auto n = sorted_values.size();
  auto idx = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  return sorted_values[std::min(idx, n - 1)];
}

/// Splits studies into bottom 25% / middle 50% / top 25% of pre-test
/// probability. p < q25 is bottom, p >= q75 is top, everything else middle.
inline QuantileStrata quantile_strata(std::span<const std::pair<std::string, double>> pretest,
                                      const std::string& label) {
  if (pretest.size() < 4)
    throw Error(ErrorKind::insufficient_data,
                "quantile strata for " + label + " need at least 4 records with pretest, got " +
                    std::to_string(pretest.size()));
  std::vector<double> sorted;
  sorted.reserve(pretest.size());
  for (const auto& [_, p] : pretest) sorted.push_back(p);
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back())
    throw Error(ErrorKind::degenerate_distribution,
                "quantile strata for " + label + ": all pretest values are identical");

  QuantileStrata out;
  out.label = label;
  out.q25 = rank_cut(sorted, 0.25);
  out.q75 = rank_cut(sorted, 0.75);
  for (const auto& [id, p] : pretest) {
    RiskStratum s = p < out.q25 ? RiskStratum::bottom25
                    : p >= out.q75 ? RiskStratum::top25
                                   : RiskStratum::middle50;
    if (!out.assignment.emplace(id, s).second)
      throw Error(ErrorKind::conflict, "duplicate study id " + id);
  }
  return out;
}

inline QuantileStrata quantile_strata(std::span<const StudyRecord> records,
                                      const std::string& label) {
  std::vector<std::pair<std::string, double>> pretest;
  for (const auto& r : records) {
    auto it = r.pretest.find(label);
    if (it != r.pretest.end()) pretest.emplace_back(r.study_id, it->second);
  }
  return quantile_strata(pretest, label);
}

// ---------------------------------------------------------------------------
// Prior-mention strata

enum class Mention { mentioned, not_mentioned };

constexpr std::string_view to_string(Mention m) noexcept {
  return m == Mention::mentioned ? "mentioned" : "not_mentioned";
}

struct MentionStrata {
  std::string label;
  std::vector<std::string> phrases;
  std::map<std::string, Mention> assignment;
  std::vector<std::string> excluded;  // no prior notes and empty context not allowed

  std::vector<std::string> members(Mention m) const {
    std::vector<std::string> out;
    for (const auto& [id, v] : assignment)
      if (v == m) out.push_back(id);
    return out;
  }
};

/// ASCII lower-case with every whitespace run collapsed to a single space.
/// Punctuation is kept.
inline std::string normalize_for_matching(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = false;
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u == ' ' || u == '\t' || u == '\n' || u == '\r' || u == '\f' || u == '\v') {
      if (!in_space) out.push_back(' ');
      in_space = true;
      continue;
    }
    in_space = false;
    out.push_back(u >= 'A' && u <= 'Z' ? static_cast<char>(u - 'A' + 'a') : c);
  }
  return out;
}

/// True when any phrase occurs as a substring of the normalized text.
inline bool mentions_any(std::string_view normalized_text, std::span<const std::string> phrases) {
  for (const auto& p : phrases) {
    std::string needle = normalize_for_matching(p);
    if (!needle.empty() && normalized_text.find(needle) != std::string_view::npos) return true;
  }
  return false;
}

inline const std::vector<std::string>& phrases_for(const PhraseList& list,
                                                   const std::string& label) {
  auto it = list.find(label);
  if (it == list.end() || it->second.empty()) {
    std::string available;
    for (const auto& [l, p] : list)
      if (!p.empty()) available += (available.empty() ? "" : ", ") + l;
    throw Error(ErrorKind::missing_phrase_list,
                "no phrases for label '" + label + "' (available: " + available + ")");
  }
  return it->second;
}

/// Marks each study as mentioned when any of the label's phrases occurs in
/// its prior notes (joined by a space). Studies without prior notes are
/// not_mentioned when `allow_empty_context`, otherwise excluded.
inline MentionStrata mention_strata(std::span<const StudyRecord> records, const NoteIndex& notes,
                                    const PhraseList& phrases, const std::string& label,
                                    bool allow_empty_context = false) {
  MentionStrata out;
  out.label = label;
  out.phrases = phrases_for(phrases, label);
  for (const auto& rec : records) {
    auto prior = notes.prior_notes(rec);
    if (prior.empty()) {
      if (allow_empty_context)
        out.assignment[rec.study_id] = Mention::not_mentioned;
      else
        out.excluded.push_back(rec.study_id);
      continue;
    }
    std::string joined;
    for (const NoteRecord* n : prior) {
      if (!joined.empty()) joined.push_back(' ');
      joined += n->text;
    }
    out.assignment[rec.study_id] = mentions_any(normalize_for_matching(joined), out.phrases)
                                       ? Mention::mentioned
                                       : Mention::not_mentioned;
  }
  return out;
}

}  // namespace ctxstrata
