#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "serbench/manifest.hpp"

namespace serbench {

enum class FoldConstraint { none, pair_by_gender };

/// Assignment of grouping keys (session, speaker) to k folds.
struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignment;

  int fold_of(const std::string& group) const;
  /// Groups per fold, each list sorted.
  std::vector<std::vector<std::string>> folds() const;
};

/// Shuffles the manifest's groups with `seed` and deals them round-robin into
/// k folds. With pair_by_gender, one M group and one F group are paired first
/// and the pairs are dealt.
FoldPlan make_folds(const Manifest& manifest, int k, FoldConstraint constraint, std::uint64_t seed);

/// (train, test) for held-out fold `fold`.
std::pair<Manifest, Manifest> split_fold(const Manifest& manifest, const FoldPlan& plan, int fold);

/// Throws DataError if any training record derives from a test utterance.
void check_no_leakage(const Manifest& train, const Manifest& test);

}  // namespace serbench
