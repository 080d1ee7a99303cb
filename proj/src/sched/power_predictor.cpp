#include "latsched/sched/power_predictor.hpp"

#include <stdexcept>

namespace latsched::sched {

using sb::Graph;
using sb::RngStream;
using sb::Tensor;
using sb::Value;

PowerPredictor::PowerPredictor(const PowerPredictorConfig& cfg, uint64_t seed) : cfg_(cfg) {
    if (cfg_.power_scale <= 0.0) throw std::invalid_argument("power predictor: scale must be positive");
    RngStream rng = sb::derive_stream(seed, "power.init");
    for (int i = 0; i < 3; ++i) {
        int in = i == 0 ? cfg_.embedding : cfg_.hidden;
        fc_[i] = sb::Dense(params_, "power.fc" + std::to_string(i + 1), in, cfg_.hidden, rng);
    }
    out_ = sb::Dense(params_, "power.out", cfg_.hidden, 1, rng);
}

Value PowerPredictor::head(Graph& g, Value x) const {
    Value h = x;
    for (int i = 0; i < 3; ++i) h = g.relu(fc_[i](g, h));
    return g.softplus(out_(g, h));
}

Value PowerPredictor::predict(Graph& g, Value embeddings) const {
    return g.affine(head(g, embeddings), cfg_.power_scale, 0.0);
}

double PowerPredictor::predict_power(const wjepa::CsiEmbedding& c) const {
    Graph g;
    Tensor t(1, cfg_.embedding);
    if (static_cast<int>(c.c.size()) != cfg_.embedding)
        throw std::invalid_argument("predict_power: embedding width mismatch");
    t.v = c.c;
    return predict(g, g.constant(t)).data()[0];
}

Value PowerPredictor::build_loss(Graph& g, const std::vector<std::vector<double>>& embeddings,
                                 const std::vector<double>& target_powers_w) const {
    if (embeddings.empty() || embeddings.size() != target_powers_w.size())
        throw std::invalid_argument("power loss: misaligned embeddings and targets");
    int n = static_cast<int>(embeddings.size());
    Tensor emb(n, cfg_.embedding);
    Tensor target(n, 1);
    for (int i = 0; i < n; ++i) {
        if (static_cast<int>(embeddings[static_cast<size_t>(i)].size()) != cfg_.embedding)
            throw std::invalid_argument("power loss: embedding width mismatch");
        std::copy(embeddings[static_cast<size_t>(i)].begin(), embeddings[static_cast<size_t>(i)].end(),
                  emb.v.begin() + static_cast<size_t>(i) * cfg_.embedding);
        target.v[static_cast<size_t>(i)] = target_powers_w[static_cast<size_t>(i)] / cfg_.power_scale;
    }
    Value pred = head(g, g.constant(emb)); // scale units
    return g.mean_all(g.square(g.sub(pred, g.constant(target))));
}

} // namespace latsched::sched
