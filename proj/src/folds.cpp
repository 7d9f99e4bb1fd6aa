#include "serbench/folds.hpp"

#include <algorithm>
#include <set>

#include "serbench/error.hpp"
#include "serbench/rng.hpp"

namespace serbench {

int FoldPlan::fold_of(const std::string& group) const {
  const auto it = assignment.find(group);
  if (it == assignment.end()) throw DataError("group '" + group + "' is not in the fold plan");
  return it->second;
}

std::vector<std::vector<std::string>> FoldPlan::folds() const {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(k));
  for (const auto& [group, fold] : assignment) out[static_cast<std::size_t>(fold)].push_back(group);
  return out;
}

FoldPlan make_folds(const Manifest& manifest, int k, FoldConstraint constraint, std::uint64_t seed) {
  if (k < 2) throw UsageError("make_folds: k must be at least 2");
  std::map<std::string, std::optional<char>> group_gender;
  for (const auto& r : manifest) {
    const auto [it, inserted] = group_gender.emplace(r.group, r.gender);
    if (!inserted && it->second != r.gender) it->second.reset();
  }
  Rng rng = make_rng(stream_seed(seed, "folds", constraint == FoldConstraint::none ? "none" : "paired"));

  // Units are dealt round-robin; a unit is one group or one M+F pair.
  std::vector<std::vector<std::string>> units;
  if (constraint == FoldConstraint::none) {
    for (const auto& entry : group_gender) units.push_back({entry.first});
  } else {
    std::vector<std::string> male;
    std::vector<std::string> female;
    for (const auto& [group, gender] : group_gender) {
      if (gender == 'M') male.push_back(group);
      else if (gender == 'F') female.push_back(group);
      else throw DataError("make_folds: group '" + group + "' has no single gender; cannot pair");
    }
    if (male.size() != female.size()) {
      throw DataError("make_folds: cannot pair " + std::to_string(male.size()) + " male with " +
                      std::to_string(female.size()) + " female groups");
    }
    std::shuffle(male.begin(), male.end(), rng);
    std::shuffle(female.begin(), female.end(), rng);
    for (std::size_t i = 0; i < male.size(); ++i) units.push_back({male[i], female[i]});
  }
  if (static_cast<int>(units.size()) < k) {
    throw DataError("make_folds: " + std::to_string(units.size()) + " group unit(s) for " +
                    std::to_string(k) + " folds");
  }
  std::shuffle(units.begin(), units.end(), rng);

  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < units.size(); ++i) {
    for (const auto& group : units[i]) plan.assignment[group] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return plan;
}

std::pair<Manifest, Manifest> split_fold(const Manifest& manifest, const FoldPlan& plan, int fold) {
  if (fold < 0 || fold >= plan.k) throw UsageError("split_fold: fold index out of range");
  std::pair<Manifest, Manifest> out;
  for (const auto& r : manifest) {
    (plan.fold_of(r.group) == fold ? out.second : out.first).push_back(r);
  }
  return out;
}

void check_no_leakage(const Manifest& train, const Manifest& test) {
  std::set<std::string> test_ids;
  for (const auto& r : test) test_ids.insert(r.id);
  for (const auto& r : train) {
    for (const auto& source : source_closure(r)) {
      if (test_ids.count(source) != 0) {
        throw DataError("leakage: training record '" + r.id + "' derives from test utterance '" +
                        source + "'");
      }
    }
  }
}

}  // namespace serbench
