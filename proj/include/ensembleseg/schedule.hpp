#pragma once
// Level planning for the iterative ensemble. Sub-model counts halve per
// level, S_n = max(floor(S_1 / 2^(n-1)), 1), until a single model remains;
// the per-sub-model unlabeled subset size follows N_n = floor(N_0/S_n + 0.5).

#include <cstdint>
#include <string>
#include <vector>

#include "ensembleseg/rng.hpp"

namespace eseg {

struct LevelSpec {
    int level_index = 0;    // n, starting at 1
    int submodel_count = 0; // S_n
    int subset_size = 0;    // N_n
};

struct LevelPlan {
    std::vector<LevelSpec> levels;
    int n0 = 0;  // total unlabeled count

    int final_level() const { return levels.empty() ? 0 : levels.back().level_index; }
};

struct SubsetAssignment {
    int level_index = 0;
    // One id list per sub-model, each of length N_n; lists may overlap
    // between sub-models but ids within a list are distinct.
    std::vector<std::vector<std::string>> per_submodel;
};

// Enumerates levels n = 1, 2, ... until S_n == 1 (inclusive). S_1 must be a
// power of two; other values are rejected because the halving rule would
// produce duplicate counts the experiments never exercised.
LevelPlan plan_levels(int s1, int n0);

// Draws next_count distinct parent indices uniformly without replacement
// from [0, prev_count).
std::vector<int> select_parents(int prev_count, int next_count, Rng& rng);

// Each sub-model receives an independent uniform without-replacement sample
// of subset_size ids from the pool. Sub-model draws use seeds derived from
// (base_seed, level_index, submodel_index) so a parallel executor cannot
// change the result.
SubsetAssignment assign_subsets(const std::vector<std::string>& unlabeled_ids, int subset_size,
                                int submodel_count, int level_index, std::uint64_t base_seed);

}  // namespace eseg
