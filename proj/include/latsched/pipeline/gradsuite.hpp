#pragma once

#include <ostream>

namespace latsched::pipeline {

// Finite-difference verification of every training loss on small instances
// (world model, KL-balance split, wireless, critic, actor, power). Prints one
// line per check; returns true when all pass at the stated tolerances.
bool run_gradient_suite(std::ostream& out);

// Exact-zero gradient contracts: EMA target weights, stop-gradient target
// paths, frozen control weights under the wireless loss, frozen wireless
// weights under the power loss.
bool run_freeze_suite(std::ostream& out);

} // namespace latsched::pipeline
