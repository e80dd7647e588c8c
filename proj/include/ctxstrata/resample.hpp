#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ctxstrata/dataset.hpp"
#include "ctxstrata/error.hpp"
#include "ctxstrata/matchset.hpp"
#include "ctxstrata/metrics.hpp"
#include "ctxstrata/random.hpp"

namespace ctxstrata {

struct BootstrapConfig {
  std::size_t iterations = 10000;
  std::uint64_t seed = 0;
  double ci_low = 2.5;    // percentile
  double ci_high = 97.5;  // percentile
  unsigned threads = 0;   // 0: hardware concurrency

  void validate() const {
    if (iterations < 1) throw Error(ErrorKind::config, "bootstrap: iterations must be >= 1");
    if (!(ci_low > 0.0 && ci_low < ci_high && ci_high < 100.0))
      throw Error(ErrorKind::config, "bootstrap: percentiles must satisfy 0 < low < high < 100");
  }
};

inline std::uint64_t label_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Stratified resampling

/// Draws, with replacement, exactly as many positives from the positives and
/// negatives from the negatives as the input holds. Randomness derives only
/// from (seed, stream, iteration).
class StratifiedResampler {
 public:
  explicit StratifiedResampler(std::span<const int> y) {
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos_ : neg_).push_back(i);
    if (pos_.empty() || neg_.empty())
      throw Error(ErrorKind::degenerate_target,
                  "stratified resample needs both classes (positives=" +
                      std::to_string(pos_.size()) + ", negatives=" + std::to_string(neg_.size()) +
                      ")");
  }

  std::vector<std::size_t> draw(std::uint64_t seed, std::uint64_t stream,
                                std::uint64_t iteration) const {
    Engine rng = make_engine(seed, {stream, iteration});
    std::vector<std::size_t> out;
    out.reserve(pos_.size() + neg_.size());
    std::uniform_int_distribution<std::size_t> pick_pos(0, pos_.size() - 1);
    for (std::size_t k = 0; k < pos_.size(); ++k) out.push_back(pos_[pick_pos(rng)]);
    std::uniform_int_distribution<std::size_t> pick_neg(0, neg_.size() - 1);
    for (std::size_t k = 0; k < neg_.size(); ++k) out.push_back(neg_[pick_neg(rng)]);
    return out;
  }

  std::size_t positives() const { return pos_.size(); }
  std::size_t negatives() const { return neg_.size(); }

 private:
  std::vector<std::size_t> pos_, neg_;
};

inline std::vector<std::size_t> stratified_resample(std::span<const int> y, std::uint64_t seed,
                                                    std::uint64_t iteration) {
  return StratifiedResampler(y).draw(seed, 0, iteration);
}

// ---------------------------------------------------------------------------
// Summaries

/// Nearest-rank percentile of sorted values: element ceil(q/100 * n) - 1.
inline double nearest_rank(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error(ErrorKind::undefined_metric, "percentile of empty sample");
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

struct Distribution {
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// NaN entries are skipped iterations. The mean sums in iteration order.
inline std::optional<Distribution> summarize(std::span<const double> per_iteration,
                                             const BootstrapConfig& config) {
  Distribution d;
  std::vector<double> kept;
  kept.reserve(per_iteration.size());
  double sum = 0.0;
  for (double v : per_iteration) {
    if (std::isnan(v)) {
      ++d.skipped;
      continue;
    }
    kept.push_back(v);
    sum += v;
  }
  d.used = kept.size();
  if (kept.empty()) return std::nullopt;
  d.mean = sum / static_cast<double>(kept.size());
  std::sort(kept.begin(), kept.end());
  d.ci_low = nearest_rank(kept, config.ci_low);
  d.ci_high = nearest_rank(kept, config.ci_high);
  return d;
}

struct GroupStats {
  std::string name;
  std::size_t n = 0;
  std::size_t n_pos = 0;
  std::optional<double> point;        // AUROC on the unresampled data
  std::optional<Distribution> boot;   // nullopt when no iteration was usable
};

struct DiffStats {
  std::string first;   // difference is first - second
  std::string second;
  std::optional<double> point;
  std::optional<Distribution> boot;

  bool significant() const { return boot && (boot->ci_low > 0.0 || boot->ci_high < 0.0); }
};

struct MatchStats {
  std::size_t pairs = 0;        // on the unresampled data
  double total_cost = 0.0;
  double max_gap = 0.0;
  std::size_t unmatched = 0;
  std::size_t attrition = 0;
  double mean_pairs = 0.0;      // averaged over iterations
  std::optional<double> max_gap_limit;
};


struct LabelReport {
  std::string label;
  std::vector<GroupStats> groups;
  std::vector<DiffStats> diffs;
  std::optional<MatchStats> matching;
  std::optional<std::string> error;  // set when no comparison was usable
};

struct StratumReport {
  std::string analysis;
  BootstrapConfig config;
  std::vector<LabelReport> labels;
  std::optional<LabelReport> macro;  // present when more than one label is usable
};

// ---------------------------------------------------------------------------
// Parallel iteration driver

/// Runs fn(i) for i in [0, iterations). Each call writes only its own slot,
/// so results do not depend on the thread count.
template <class Fn>
void for_each_iteration(std::size_t iterations, unsigned threads, Fn&& fn) {
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, iterations));
  if (workers <= 1) {
    for (std::size_t i = 0; i < iterations; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      try {
        for (std::size_t i = next++; i < iterations; i = next++) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = iterations;
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Subgroups

constexpr double kSkipped = std::numeric_limits<double>::quiet_NaN();

/// One subgroup's bootstrap: per-iteration AUROCs (NaN when undefined).
struct GroupBoot {
  GroupStats stats;
  std::vector<double> iterations;

  bool defined() const { return stats.point.has_value(); }
};

/// Resamples one subgroup stratified on the label. The random stream depends
/// on (seed, label, group name, iteration) only. A subgroup lacking a class
/// yields all-NaN iterations rather than an error.
inline GroupBoot bootstrap_group(const LabelColumns& cols, const std::string& name,
                                 const BootstrapConfig& config) {
  config.validate();
  GroupBoot g;
  g.stats.name = name;
  g.stats.n = cols.size();
  for (int v : cols.y) g.stats.n_pos += v ? 1 : 0;
  g.iterations.assign(config.iterations, kSkipped);
  if (g.stats.n_pos == 0 || g.stats.n_pos == g.stats.n) return g;
  g.stats.point = auroc(cols.y, cols.score).value;
  StratifiedResampler resampler(cols.y);
  const std::uint64_t stream = stream_seed(label_hash(cols.label), {label_hash(name)});
  for_each_iteration(config.iterations, config.threads, [&](std::size_t i) {
    auto idx = resampler.draw(config.seed, stream, i);
    g.iterations[i] = auroc(cols.y, cols.score, idx).value.value_or(kSkipped);
  });
  g.stats.boot = summarize(g.iterations, config);
  return g;
}

/// Distribution of a - b over iterations; iterations where either side is
/// undefined are skipped and counted.
inline DiffStats compare_groups(const GroupBoot& a, const GroupBoot& b,
                                const BootstrapConfig& config) {
  DiffStats d;
  d.first = a.stats.name;
  d.second = b.stats.name;
  if (a.stats.point && b.stats.point) d.point = *a.stats.point - *b.stats.point;
  std::vector<double> diff(std::min(a.iterations.size(), b.iterations.size()));
  for (std::size_t i = 0; i < diff.size(); ++i)
    diff[i] = (std::isnan(a.iterations[i]) || std::isnan(b.iterations[i]))
                  ? kSkipped
                  : a.iterations[i] - b.iterations[i];
  d.boot = summarize(diff, config);
  return d;
}

using GroupPairs = std::vector<std::pair<std::size_t, std::size_t>>;

inline LabelReport label_report(const std::string& label, const std::vector<GroupBoot>& groups,
                                const GroupPairs& pairs, const BootstrapConfig& config) {
  LabelReport rep;
  rep.label = label;
  for (const auto& g : groups) rep.groups.push_back(g.stats);
  bool any = false;
  for (auto [a, b] : pairs) {
    rep.diffs.push_back(compare_groups(groups.at(a), groups.at(b), config));
    any = any || rep.diffs.back().boot.has_value();
  }
  if (!any) {
    std::string missing;
    for (const auto& g : groups)
      if (!g.defined())
        missing += (missing.empty() ? "" : ", ") + g.stats.name + " (n=" + std::to_string(g.stats.n) +
                   ", positives=" + std::to_string(g.stats.n_pos) + ")";
    rep.error = "undefined CI for " + label + ": no usable bootstrap iteration; single-class subgroup " +
                missing;
  }
  return rep;
}

/// Macro rows: per iteration, the mean AUROC over labels whose subgroups all
/// have both classes. `per_label[l][g]` is group g of label l; group order and
/// names must agree across labels.
inline std::optional<LabelReport> macro_report(const std::vector<std::vector<GroupBoot>>& per_label,
                                               const GroupPairs& pairs,
                                               const BootstrapConfig& config) {
  std::vector<const std::vector<GroupBoot>*> usable;
  for (const auto& groups : per_label)
    if (std::all_of(groups.begin(), groups.end(), [](const GroupBoot& g) { return g.defined(); }))
      usable.push_back(&groups);
  if (usable.size() < 2) return std::nullopt;
  const std::size_t n_groups = usable.front()->size();
  const double k = static_cast<double>(usable.size());
  std::vector<GroupBoot> macro(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    GroupBoot& m = macro[g];
    m.stats.name = (*usable.front())[g].stats.name;
    m.iterations.assign(config.iterations, 0.0);
    double point = 0.0;
    for (const auto* groups : usable) {
      const GroupBoot& src = (*groups)[g];
      m.stats.n = std::max(m.stats.n, src.stats.n);
      point += *src.stats.point;
      for (std::size_t i = 0; i < config.iterations; ++i) m.iterations[i] += src.iterations[i];
    }
    for (double& v : m.iterations) v /= k;
    m.stats.point = point / k;
    m.stats.boot = summarize(m.iterations, config);
  }
  return label_report("macro", macro, pairs, config);
}

/// AUROC(A) - AUROC(B) per label, each subgroup resampled independently and
/// stratified on that label, plus a macro row when several labels are usable.
inline StratumReport bootstrap_subgroup_diff(std::span<const StudyRecord> group_a,
                                             std::span<const StudyRecord> group_b,
                                             std::span<const std::string> labels,
                                             const std::string& name_a, const std::string& name_b,
                                             const BootstrapConfig& config) {
  config.validate();
  if (group_a.empty() || group_b.empty())
    throw Error(ErrorKind::degenerate_subgroup,
                "subgroup '" + (group_a.empty() ? name_a : name_b) + "' is empty");
  StratumReport report;
  report.analysis = "subgroup";
  report.config = config;
  const GroupPairs pairs{{0, 1}};
  std::vector<std::vector<GroupBoot>> per_label;
  for (const auto& label : labels) {
    std::vector<GroupBoot> groups;
    groups.push_back(bootstrap_group(label_columns(group_a, label), name_a, config));
    groups.push_back(bootstrap_group(label_columns(group_b, label), name_b, config));
    report.labels.push_back(label_report(label, groups, pairs, config));
    per_label.push_back(std::move(groups));
  }
  if (std::all_of(report.labels.begin(), report.labels.end(),
                  [](const LabelReport& r) { return r.error.has_value(); }))
    throw Error(ErrorKind::undefined_metric,
                report.labels.size() == 1
                    ? *report.labels.front().error
                    : "no label has both classes in both subgroups '" + name_a + "' and '" +
                          name_b + "'");
  report.macro = macro_report(per_label, pairs, config);
  return report;
}

// ---------------------------------------------------------------------------
// Full versus matched

/// AUROC(full) - AUROC(matched) for one label: each iteration resamples the
/// whole set (stratified), re-runs the matching on the resample and scores
/// both sets.
inline LabelReport bootstrap_matched_diff(const LabelColumns& cols, const BootstrapConfig& config,
                                          const MatchOptions& options = {kDefaultMaxGap}) {
  config.validate();
  if (cols.pretest.size() != cols.size())
    throw Error(ErrorKind::missing_pretest,
                "matched analysis needs pretest for " + cols.label +
                    "; supply --pretest-col or --text-model");
  StratifiedResampler resampler(cols.y);
  MatchedEval point = matched_eval(cols, options);

  GroupBoot full, matched;
  full.stats = {"full", cols.size(), resampler.positives(), point.full.value, std::nullopt};
  matched.stats = {"matched", 2 * point.set.pairs.size(), point.set.pairs.size(),
                   point.matched.value, std::nullopt};
  MatchStats ms;
  ms.pairs = point.set.pairs.size();
  ms.total_cost = point.set.total_cost;
  ms.max_gap = point.set.max_gap;
  ms.unmatched = point.set.unmatched;
  ms.attrition = point.set.attrition;
  ms.max_gap_limit = options.max_gap;

  const std::uint64_t stream = stream_seed(label_hash(cols.label), {label_hash("matched")});
  full.iterations.assign(config.iterations, kSkipped);
  matched.iterations.assign(config.iterations, kSkipped);
  std::vector<std::size_t> pairs(config.iterations, 0);
  for_each_iteration(config.iterations, config.threads, [&](std::size_t i) {
    auto idx = resampler.draw(config.seed, stream, i);
    full.iterations[i] = auroc(cols.y, cols.score, idx).value.value_or(kSkipped);
    std::vector<double> pp, np;
    std::vector<std::uint64_t> pk, nk;
    std::vector<std::size_t> prow, nrow;
    for (std::size_t r : idx) {
      if (cols.y[r]) {
        pp.push_back(cols.pretest[r]);
        pk.push_back(cols.key[r]);
        prow.push_back(r);
      } else {
        np.push_back(cols.pretest[r]);
        nk.push_back(cols.key[r]);
        nrow.push_back(r);
      }
    }
    auto m = match_indices(pp, pk, np, nk, options);
    pairs[i] = m.size();
    if (m.empty()) return;
    std::vector<std::size_t> rows;
    rows.reserve(2 * m.size());
    for (auto [a, b] : m) {
      rows.push_back(prow[a]);
      rows.push_back(nrow[b]);
    }
    matched.iterations[i] = auroc(cols.y, cols.score, rows).value.value_or(kSkipped);
  });
  full.stats.boot = summarize(full.iterations, config);
  matched.stats.boot = summarize(matched.iterations, config);

  double pair_sum = 0.0;
  for (std::size_t p : pairs) pair_sum += static_cast<double>(p);
  ms.mean_pairs = pair_sum / static_cast<double>(config.iterations);

  LabelReport rep = label_report(cols.label, {full, matched}, {{0, 1}}, config);
  rep.matching = ms;
  return rep;
}

inline StratumReport bootstrap_matched_diff(std::span<const StudyRecord> records,
                                            std::span<const std::string> labels,
                                            const BootstrapConfig& config,
                                            const MatchOptions& options = {kDefaultMaxGap}) {
  StratumReport report;
  report.analysis = "matched";
  report.config = config;
  for (const auto& label : labels)
    report.labels.push_back(
        bootstrap_matched_diff(label_columns(records, label, true), config, options));
  return report;
}

}  // namespace ctxstrata
