#pragma once

#include <vector>

namespace latsched::sched {

struct SchedulerConfig {
    int lookahead = 10; // H_s, slots per scheduling horizon
    int kappa = 3;      // consecutive samples per scheduled transmission
    int tau = 1;        // leading slots of each horizon excluded from scheduling
    double power_budget_w = 1e-4;
    int64_t bits_per_frame = 84 * 84 * 8;

    void validate() const;
};

// Minimum-power slot choice over one horizon. Slots are 1-indexed; the first
// tau slots are excluded and the block of kappa samples must fit before the
// horizon ends. If no eligible slot meets the budget the decision carries an
// outage flag and falls back to the cheapest eligible slot.
struct ScheduleDecision {
    int slot = 1; // t*
    bool outage = false;
    std::vector<double> predicted_powers; // rho_hat per slot, 1-indexed at [t-1]
    std::vector<bool> feasible;           // eligibility AND budget per slot
    std::vector<double> actual_powers;    // filled during transmission
};

ScheduleDecision select_slot(const std::vector<double>& predicted_powers_w,
                             const SchedulerConfig& cfg);

} // namespace latsched::sched
