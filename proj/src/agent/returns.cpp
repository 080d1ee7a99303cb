#include "latsched/agent/returns.hpp"

#include <stdexcept>

namespace latsched::agent {

std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& discounts,
                                   const std::vector<double>& values, double lambda) {
    size_t n = values.size();
    if (n == 0) throw std::invalid_argument("lambda_returns: empty sequence");
    if (rewards.size() != n || discounts.size() != n)
        throw std::invalid_argument("lambda_returns: length mismatch");
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda_returns: lambda outside [0,1]");
    std::vector<double> ret(n);
    ret[n - 1] = values[n - 1];
    for (size_t i = n - 1; i-- > 0;)
        ret[i] = rewards[i] + discounts[i] * ((1.0 - lambda) * values[i + 1] + lambda * ret[i + 1]);
    return ret;
}

} // namespace latsched::agent
