#include "ensembleseg/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace eseg {

LevelPlan plan_levels(int s1, int n0) {
    if (s1 < 1) throw std::invalid_argument("plan_levels: S_1 must be >= 1");
    if (n0 < 0) throw std::invalid_argument("plan_levels: N_0 must be >= 0");
    if ((s1 & (s1 - 1)) != 0) {
        throw std::invalid_argument("plan_levels: S_1 = " + std::to_string(s1) +
                                    " is not a power of two; the halving schedule is only "
                                    "defined for powers of two");
    }
    LevelPlan plan;
    plan.n0 = n0;
    for (int n = 1;; ++n) {
        const int sn = std::max(s1 >> (n - 1), 1);
        LevelSpec spec;
        spec.level_index = n;
        spec.submodel_count = sn;
        spec.subset_size = static_cast<int>(std::floor(double(n0) / sn + 0.5));
        plan.levels.push_back(spec);
        if (sn == 1) break;
    }
    return plan;
}

std::vector<int> select_parents(int prev_count, int next_count, Rng& rng) {
    if (next_count > prev_count) {
        throw std::invalid_argument("select_parents: cannot draw " + std::to_string(next_count) +
                                    " parents from " + std::to_string(prev_count) +
                                    " previous sub-models");
    }
    if (next_count < 0 || prev_count < 1) {
        throw std::invalid_argument("select_parents: counts must be positive");
    }
    const std::vector<std::size_t> picks = rng.sample_without_replacement(prev_count, next_count);
    std::vector<int> parents(picks.begin(), picks.end());
    return parents;
}

SubsetAssignment assign_subsets(const std::vector<std::string>& unlabeled_ids, int subset_size,
                                int submodel_count, int level_index, std::uint64_t base_seed) {
    if (subset_size < 0 || submodel_count < 1) {
        throw std::invalid_argument("assign_subsets: subset size and sub-model count must be "
                                    "nonnegative/positive");
    }
    if (static_cast<std::size_t>(subset_size) > unlabeled_ids.size()) {
        throw std::invalid_argument("assign_subsets: subset size " + std::to_string(subset_size) +
                                    " exceeds pool of " + std::to_string(unlabeled_ids.size()) +
                                    " unlabeled ids");
    }
    SubsetAssignment assignment;
    assignment.level_index = level_index;
    assignment.per_submodel.resize(submodel_count);
    for (int i = 0; i < submodel_count; ++i) {
        Rng rng(derive_seed(base_seed, "subset", static_cast<std::uint64_t>(level_index),
                            static_cast<std::uint64_t>(i)));
        const std::vector<std::size_t> picks =
            rng.sample_without_replacement(unlabeled_ids.size(), subset_size);
        assignment.per_submodel[i].reserve(subset_size);
        for (std::size_t p : picks) assignment.per_submodel[i].push_back(unlabeled_ids[p]);
    }
    return assignment;
}

}  // namespace eseg
