#include "latsched/pipeline/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace latsched::pipeline {

std::vector<SweepResult> run_sweep(const sched::SchedulerStack& stack, const RunConfig& cfg,
                                   const chansim::ScattererField& field,
                                   const std::vector<std::string>& methods,
                                   const std::vector<int>& lookaheads, int seeds) {
    std::vector<SweepResult> out;
    envsim::CarTrackEnv env(cfg.env);
    for (const std::string& method : methods)
        for (int hs : lookaheads)
            for (int s = 0; s < seeds; ++s) {
                sched::SchedulerConfig sc = cfg.sched;
                sc.lookahead = hs;
                sc.kappa = std::min(sc.kappa, hs);
                sc.tau = std::min(sc.tau, hs - 1);
                uint64_t seed = 10'000 + static_cast<uint64_t>(s);
                SweepResult row;
                row.method = method;
                row.lookahead = hs;
                row.kappa = sc.kappa;
                row.tau = sc.tau;
                row.seed = seed;
                row.metrics = sched::run_method(method, stack, env, field, cfg.radio, sc, seed);
                out.push_back(std::move(row));
            }
    return out;
}

void write_results(const std::vector<SweepResult>& rows, std::ostream& out) {
    out << "# method hs kappa tau seed return avg_power_w avg_power_db overhead_bits outages slots\n";
    char buf[256];
    for (const auto& r : rows) {
        double db = r.metrics.avg_power_w > 0 ? 10.0 * std::log10(r.metrics.avg_power_w) : -300.0;
        std::snprintf(buf, sizeof(buf), "%s %d %d %d %llu %.17g %.17g %.17g %lld %d %d\n",
                      r.method.c_str(), r.lookahead, r.kappa, r.tau,
                      static_cast<unsigned long long>(r.seed), r.metrics.normalized_return,
                      r.metrics.avg_power_w, db, static_cast<long long>(r.metrics.overhead_bits),
                      r.metrics.outages, r.metrics.slots);
        out << buf;
    }
}

void write_summary(const std::vector<SweepResult>& rows, std::ostream& out) {
    struct Cell {
        std::vector<double> ret, power, bits;
    };
    std::map<std::pair<std::string, int>, Cell> cells;
    for (const auto& r : rows) {
        Cell& c = cells[{r.method, r.lookahead}];
        c.ret.push_back(r.metrics.normalized_return);
        c.power.push_back(r.metrics.avg_power_w);
        c.bits.push_back(static_cast<double>(r.metrics.overhead_bits));
    }
    auto stat = [](const std::vector<double>& v) {
        double mean = 0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        return std::make_pair(mean, std::sqrt(var));
    };
    out << "# method hs return_mean return_std power_mean_w power_std_w bits_mean bits_std\n";
    char buf[256];
    for (const auto& [key, cell] : cells) {
        auto [rm, rs] = stat(cell.ret);
        auto [pm, ps] = stat(cell.power);
        auto [bm, bs] = stat(cell.bits);
        std::snprintf(buf, sizeof(buf), "%s %d %.6g %.6g %.6g %.6g %.6g %.6g\n", key.first.c_str(),
                      key.second, rm, rs, pm, ps, bm, bs);
        out << buf;
    }
}

} // namespace latsched::pipeline
