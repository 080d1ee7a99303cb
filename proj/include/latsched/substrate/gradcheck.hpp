#pragma once

#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace latsched::substrate {

struct GradCheckReport {
    struct Entry {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<Entry> per_param;
    double tolerance = 0.0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central finite differences against reverse-mode gradients.
//
// loss_fn builds a scalar loss graph from the current parameter values and
// must be deterministic across calls (reseed any sampling streams inside).
// Up to max_elems elements per parameter are probed, spread evenly across
// the tensor. Relative error uses max(1, |fd|, |an|) as denominator.
GradCheckReport grad_check(const std::function<Value(Graph&)>& loss_fn, ParameterSet& params,
                           double epsilon = 1e-5, double tolerance = 1e-3, int max_elems = 12,
                           Precision prec = Precision::f64);

} // namespace latsched::substrate
