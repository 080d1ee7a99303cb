#pragma once

#include <vector>

namespace latsched::agent {

// Backward recursion for the exponentially weighted bootstrap target:
//   ret[t] = rewards[t] + discounts[t] * ((1-lambda) * values[t+1] + lambda * ret[t+1])
//   ret[H-1] = values[H-1]
// All inputs share length H >= 1. rewards[H-1] never enters the result.
std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& discounts,
                                   const std::vector<double>& values, double lambda);

} // namespace latsched::agent
