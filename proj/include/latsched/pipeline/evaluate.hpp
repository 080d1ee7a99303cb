#pragma once

#include "latsched/pipeline/config.hpp"
#include "latsched/sched/closed_loop.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace latsched::pipeline {

struct SweepResult {
    std::string method;
    int lookahead = 0, kappa = 0, tau = 0;
    uint64_t seed = 0;
    sched::EpisodeMetrics metrics;
};

// methods x lookaheads x seeds episode grid; kappa and tau are clamped per
// lookahead so every cell is well-formed.
std::vector<SweepResult> run_sweep(const sched::SchedulerStack& stack, const RunConfig& cfg,
                                   const chansim::ScattererField& field,
                                   const std::vector<std::string>& methods,
                                   const std::vector<int>& lookaheads, int seeds);

// One record per episode: method, H_s, kappa, tau, seed, return, power (W and
// dB), overhead bits, outages, slots.
void write_results(const std::vector<SweepResult>& rows, std::ostream& out);
// mean +- std per (method, lookahead) cell
void write_summary(const std::vector<SweepResult>& rows, std::ostream& out);

} // namespace latsched::pipeline
