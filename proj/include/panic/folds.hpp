//
// Stratified k-fold assignment over (class, sex, age-quartile) cells:
// within each cell, subjects are dealt round-robin to folds; the non-test
// portion of each fold then splits cell-wise into train and validation
// (one quarter of the non-test subjects validate, i.e. train:val:test is
// 64:16:20 of the total).
//

#pragma once

#include <panic/rng.hpp>
#include <panic/types.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace panic::data {

enum class Role { Train, Val, Test };

struct FoldAssignment {
    int k = 5;
    std::vector<int> fold_of;                 // test fold per subject
    std::vector<std::vector<Role>> roles;     // [fold][subject]

    std::vector<std::size_t> ids_with_role(int fold, Role r) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < roles[static_cast<std::size_t>(fold)].size(); ++i)
            if (roles[static_cast<std::size_t>(fold)][i] == r) out.push_back(i);
        return out;
    }
};

// Quartile bin (0..3) of x in the sorted population values.
inline int quartile_bin(double x, const std::vector<double>& sorted) {
    auto q = [&](double p) {
        const double pos = p * static_cast<double>(sorted.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] * (1.0 - (pos - static_cast<double>(lo))) +
               sorted[hi] * (pos - static_cast<double>(lo));
    };
    if (x <= q(0.25)) return 0;
    if (x <= q(0.5)) return 1;
    if (x <= q(0.75)) return 2;
    return 3;
}

inline FoldAssignment stratified_folds(const std::vector<int>& labels,
                                       const std::vector<int>& sexes,
                                       const std::vector<double>& ages, int k,
                                       std::uint64_t seed) {
    const std::size_t n = labels.size();
    if (sexes.size() != n || ages.size() != n)
        throw InvalidInput("stratification inputs must have equal length");
    if (k < 2) throw ConfigError("need at least 2 folds");

    std::vector<double> sorted_ages = ages;
    std::sort(sorted_ages.begin(), sorted_ages.end());

    // deterministic cell order: (label, sex, age quartile)
    std::map<std::tuple<int, int, int>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < n; ++i)
        cells[{labels[i], sexes[i], quartile_bin(ages[i], sorted_ages)}].push_back(i);

    FoldAssignment fa;
    fa.k = k;
    fa.fold_of.assign(n, 0);
    fa.roles.assign(static_cast<std::size_t>(k), std::vector<Role>(n, Role::Train));

    int rotate = 0;  // rotates fold offsets across cells to balance fold sizes
    for (auto& [key, members] : cells) {
        Rng cell_rng(substream_seed(seed, "fold-cell",
                                    static_cast<std::uint64_t>(std::get<0>(key)),
                                    static_cast<std::uint64_t>(std::get<1>(key)),
                                    static_cast<std::uint64_t>(std::get<2>(key))));
        cell_rng.shuffle(members);
        for (std::size_t pos = 0; pos < members.size(); ++pos)
            fa.fold_of[members[pos]] = static_cast<int>((pos + static_cast<std::size_t>(rotate)) %
                                                        static_cast<std::size_t>(k));
        rotate = (rotate + static_cast<int>(members.size())) % k;
    }

    // roles per fold: cell-wise, one fifth of the non-test subjects validate
    // (16% of the total against 64% training)
    for (int f = 0; f < k; ++f) {
        auto& roles = fa.roles[static_cast<std::size_t>(f)];
        for (auto& [key, members] : cells) {
            long nontest_pos = 0;
            for (std::size_t m : members) {
                if (fa.fold_of[m] == f) {
                    roles[m] = Role::Test;
                } else {
                    roles[m] = ((nontest_pos + f) % k == 0) ? Role::Val : Role::Train;
                    ++nontest_pos;
                }
            }
        }
    }
    return fa;
}

}  // namespace panic::data
