// SPDX-License-Identifier: Apache-2.0
#include "moesched/balancer.hpp"

#include <algorithm>

namespace moesched {

BalanceResult balance(const BalanceInput& input) {
    std::vector<BalanceItem> items = input.items;
    std::sort(items.begin(), items.end(), [](const BalanceItem& a, const BalanceItem& b) {
        if (a.batch != b.batch) {
            return a.batch > b.batch;
        }
        return a.uid < b.uid;
    });

    BalanceResult result;
    if (items.empty()) {
        return result;
    }
    std::size_t l = 0;
    std::size_t r = items.size() - 1;
    while (l <= r) {
        if (result.c_load <= result.c_cpu) {
            result.c_load += input.t_load;
            result.load_list.push_back(items[l].uid);
            ++l;
        } else {
            result.c_cpu += static_cast<TimeUnits>(items[r].batch) * input.t_cpu_token;
            result.cpu_list.push_back(items[r].uid);
            if (r == 0) {
                break; // l == r == 0 was just consumed
            }
            --r;
        }
    }
    return result;
}

TimeUnits brute_force_balance(const BalanceInput& input) {
    const std::size_t n = input.items.size();
    if (n > 20) {
        throw ConfigError("brute_force_balance: too many items (max 20)");
    }
    TimeUnits best = ~TimeUnits{0};
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        TimeUnits c_load = 0;
        TimeUnits c_cpu = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1u << i)) {
                c_load += input.t_load;
            } else {
                c_cpu += static_cast<TimeUnits>(input.items[i].batch) * input.t_cpu_token;
            }
        }
        best = std::min(best, std::max(c_load, c_cpu));
    }
    return n == 0 ? 0 : best;
}

} // namespace moesched
