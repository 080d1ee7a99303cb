#include "latsched/sched/select.hpp"

#include <cmath>
#include <stdexcept>

namespace latsched::sched {

void SchedulerConfig::validate() const {
    if (lookahead < 1) throw std::invalid_argument("scheduler: lookahead must be >= 1");
    if (tau < 0 || tau >= lookahead) throw std::invalid_argument("scheduler: need 0 <= tau < lookahead");
    if (kappa < 1 || kappa > lookahead) throw std::invalid_argument("scheduler: need 1 <= kappa <= lookahead");
    if (power_budget_w <= 0.0) throw std::invalid_argument("scheduler: power budget must be positive");
}

ScheduleDecision select_slot(const std::vector<double>& predicted_powers_w,
                             const SchedulerConfig& cfg) {
    cfg.validate();
    const int H = cfg.lookahead;
    if (static_cast<int>(predicted_powers_w.size()) != H)
        throw std::invalid_argument("select_slot: expected one predicted power per horizon slot");
    for (double p : predicted_powers_w)
        if (!std::isfinite(p)) throw std::invalid_argument("select_slot: non-finite predicted power");

    ScheduleDecision d;
    d.predicted_powers = predicted_powers_w;
    d.feasible.assign(static_cast<size_t>(H), false);

    int first = cfg.tau + 1;            // 1-indexed earliest eligible start
    int last = H - cfg.kappa + 1;       // latest start such that kappa samples fit
    auto rho = [&](int t) { return predicted_powers_w[static_cast<size_t>(t - 1)]; };

    int best = -1;
    for (int t = first; t <= last; ++t) {
        bool ok = rho(t) <= cfg.power_budget_w;
        d.feasible[static_cast<size_t>(t - 1)] = ok;
        if (ok && (best < 0 || rho(t) < rho(best))) best = t; // earliest wins ties
    }
    if (best >= 0) {
        d.slot = best;
        return d;
    }

    // outage: cheapest eligible start (kappa-fitting when possible)
    d.outage = true;
    int lo = first, hi = last >= first ? last : H;
    best = lo;
    for (int t = lo; t <= hi; ++t)
        if (rho(t) < rho(best)) best = t;
    d.slot = best;
    return d;
}

} // namespace latsched::sched
