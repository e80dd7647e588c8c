#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ctxstrata/error.hpp"
#include "ctxstrata/random.hpp"

namespace ctxstrata {

/// Assigns every record to one of k folds such that all records of a group
/// share a fold and per-fold positive counts are balanced.
///
/// Groups are visited in order of decreasing positive count, then size, with
/// the seed breaking remaining ties. A group with positives goes to the fold
/// holding the fewest positives; a group without positives goes to the fold
/// holding the fewest negatives. Remaining ties go to the smaller fold, then
/// the lower fold index.
inline std::vector<int> group_stratified_folds(std::span<const std::string> groups,
                                               std::span<const int> targets, int k,
                                               std::uint64_t seed) {
  if (groups.size() != targets.size())
    throw Error(ErrorKind::shape, "folds: groups and targets differ in length");
  if (k < 2) throw Error(ErrorKind::config, "folds: k must be at least 2");

  struct Group {
    std::size_t pos = 0;
    std::size_t size = 0;
    std::uint64_t tiebreak = 0;
    int fold = -1;
  };
  std::map<std::string, Group> by_name;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    Group& g = by_name[groups[i]];
    g.pos += targets[i] ? 1 : 0;
    g.size += 1;
  }
  if (by_name.size() < static_cast<std::size_t>(k))
    throw Error(ErrorKind::insufficient_groups,
                "folds: " + std::to_string(by_name.size()) +
                    " distinct groups for " + std::to_string(k) + " folds");

  std::vector<Group*> order;
  order.reserve(by_name.size());
  Engine rng = make_engine(seed, {0xf01d});
  for (auto& [_, g] : by_name) {
    g.tiebreak = rng();
    order.push_back(&g);
  }
  std::sort(order.begin(), order.end(), [](const Group* a, const Group* b) {
    return std::tuple(b->pos, b->size, a->tiebreak) <
           std::tuple(a->pos, a->size, b->tiebreak);
  });

  std::vector<std::size_t> fold_pos(k, 0), fold_neg(k, 0);
  for (Group* g : order) {
    int best = 0;
    auto key = [&](int f) {
      std::size_t primary = g->pos > 0 ? fold_pos[f] : fold_neg[f];
      return std::tuple(primary, fold_pos[f] + fold_neg[f], f);
    };
    for (int f = 1; f < k; ++f)
      if (key(f) < key(best)) best = f;
    g->fold = best;
    fold_pos[best] += g->pos;
    fold_neg[best] += g->size - g->pos;
  }

  std::vector<int> out(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) out[i] = by_name[groups[i]].fold;
  return out;
}

}  // namespace ctxstrata
