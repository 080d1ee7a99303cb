#include "latsched/substrate/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace latsched::substrate {

GradCheckReport grad_check(const std::function<Value(Graph&)>& loss_fn, ParameterSet& params,
                           double epsilon, double tolerance, int max_elems, Precision prec) {
    auto eval = [&]() {
        Graph g(prec);
        Value loss = loss_fn(g);
        return loss.scalar();
    };

    double base = eval();
    double again = eval();
    if (base != again)
        throw std::runtime_error("grad_check: loss is not deterministic under a fixed seed");

    params.zero_grads();
    {
        Graph g(prec);
        Value loss = loss_fn(g);
        g.backward(loss);
    }
    std::vector<std::vector<double>> analytic(params.size());
    for (size_t i = 0; i < params.size(); ++i) analytic[i] = params[i].g;

    GradCheckReport report;
    report.tolerance = tolerance;
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        GradCheckReport::Entry entry;
        entry.name = p.name;
        size_t n = p.v.size();
        size_t probes = std::min<size_t>(n, static_cast<size_t>(max_elems));
        for (size_t k = 0; k < probes; ++k) {
            size_t idx = probes == 1 ? 0 : (k * (n - 1)) / (probes - 1);
            double saved = p.v[idx];
            p.v[idx] = saved + epsilon;
            double lp = eval();
            p.v[idx] = saved - epsilon;
            double lm = eval();
            p.v[idx] = saved;
            double fd = (lp - lm) / (2.0 * epsilon);
            double an = analytic[i][idx];
            double rel = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.per_param.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err <= tolerance;
    params.zero_grads();
    return report;
}

} // namespace latsched::substrate
