// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "moesched/core.hpp"

namespace moesched {

/// One selected, non-resident expert and the number of tokens it serves.
struct BalanceItem {
    std::uint32_t uid = 0;
    std::uint32_t batch = 1; // B_i >= 1
};

struct BalanceInput {
    std::vector<BalanceItem> items; // distinct by uid
    TimeUnits t_cpu_token = 30;
    TimeUnits t_load = 100;
};

struct BalanceResult {
    std::vector<std::uint32_t> load_list; // experts to load over PCIe, in assignment order
    std::vector<std::uint32_t> cpu_list;  // experts to compute on CPU, in assignment order
    TimeUnits c_load = 0;                 // |load_list| * t_load
    TimeUnits c_cpu = 0;                  // sum of B_i * t_cpu_token over cpu_list

    TimeUnits makespan() const { return c_load > c_cpu ? c_load : c_cpu; }
};

/// Two-pointer split of the demand set between PCIe and CPU so that the
/// slower of the two streams finishes as early as possible. Items are
/// sorted by batch descending (ties by ascending uid); while any remain,
/// the head goes to the load list whenever cumulative load time has not
/// passed cumulative CPU time, otherwise the tail goes to the CPU list.
/// Loading favours large batches: PCIe cost is per expert while CPU cost
/// scales with the batch.
BalanceResult balance(const BalanceInput& input);

/// Exhaustive 2^n search for the optimal makespan. Test oracle only;
/// throws ConfigError for more than 20 items.
TimeUnits brute_force_balance(const BalanceInput& input);

} // namespace moesched
