#pragma once

#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/nn.hpp"
#include "latsched/wjepa/wireless_model.hpp"

#include <vector>

namespace latsched::sched {

namespace sb = latsched::substrate;

struct PowerPredictorConfig {
    int embedding = 16;
    int hidden = 100;
    double learning_rate = 1e-3;
    // Softplus head output is expressed in units of power_scale watts, which
    // keeps the regression near unit magnitude; the budget is the natural
    // scale for it.
    double power_scale = 1e-4;
};

// Three-layer ReLU MLP regressing the transmit power that meets the SNR
// threshold from a latent CSI embedding. Output is positive by construction.
class PowerPredictor {
public:
    PowerPredictor(const PowerPredictorConfig& cfg, uint64_t seed);

    const PowerPredictorConfig& config() const { return cfg_; }
    sb::ParameterSet& params() { return params_; }

    // [B, embedding] -> [B, 1] in watts
    sb::Value predict(sb::Graph& g, sb::Value embeddings) const;
    double predict_power(const wjepa::CsiEmbedding& c) const;

    // Mean squared error against required-power targets, computed in
    // power_scale units. Gradients reach only this predictor's parameters.
    sb::Value build_loss(sb::Graph& g, const std::vector<std::vector<double>>& embeddings,
                         const std::vector<double>& target_powers_w) const;

private:
    sb::Value head(sb::Graph& g, sb::Value x) const; // softplus output in scale units

    PowerPredictorConfig cfg_;
    sb::ParameterSet params_;
    sb::Dense fc_[3], out_;
};

} // namespace latsched::sched
