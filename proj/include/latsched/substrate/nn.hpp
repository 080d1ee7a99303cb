#pragma once

#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/rng.hpp"
#include "latsched/substrate/tensor.hpp"

#include <string>

namespace latsched::substrate {

// Truncated-normal fan-in init for weight matrices, zeros for biases.
inline void init_dense(Parameter& w, RngStream& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(w.rows));
    for (double& x : w.v) x = rng.truncated_normal(std);
}

inline void init_conv(Parameter& w, int fan_in, RngStream& rng) {
    double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : w.v) x = rng.truncated_normal(std);
}

// Linear layer: y = x W + b, with W [in, out].
struct Dense {
    Parameter* w = nullptr;
    Parameter* b = nullptr;

    Dense() = default;
    Dense(ParameterSet& ps, const std::string& prefix, int in, int out, RngStream& rng) {
        w = &ps.add(prefix + ".w", in, out);
        b = &ps.add(prefix + ".b", 1, out);
        init_dense(*w, rng);
    }

    Value operator()(Graph& g, Value x) const { return g.add_row(g.matmul(x, g.param(*w)), g.param(*b)); }
};

struct LayerNorm {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;

    LayerNorm() = default;
    LayerNorm(ParameterSet& ps, const std::string& prefix, int width) {
        gain = &ps.add(prefix + ".ln_gain", 1, width);
        bias = &ps.add(prefix + ".ln_bias", 1, width);
        for (double& x : gain->v) x = 1.0;
    }

    Value operator()(Graph& g, Value x) const { return g.layer_norm(x, g.param(*gain), g.param(*bias)); }
};

struct BatchNorm {
    Parameter* gain = nullptr;
    Parameter* bias = nullptr;
    Tensor* run_mean = nullptr;
    Tensor* run_var = nullptr;

    BatchNorm() = default;
    BatchNorm(ParameterSet& ps, BufferSet& bufs, const std::string& prefix, int width) {
        gain = &ps.add(prefix + ".bn_gain", 1, width);
        bias = &ps.add(prefix + ".bn_bias", 1, width);
        run_mean = &bufs.add(prefix + ".bn_mean", 1, width);
        run_var = &bufs.add(prefix + ".bn_var", 1, width);
        for (double& x : gain->v) x = 1.0;
        for (double& x : run_var->v) x = 1.0;
    }

    Value operator()(Graph& g, Value x, bool train) const {
        return g.batch_norm(x, g.param(*gain), g.param(*bias), *run_mean, *run_var, train);
    }
};

struct Conv2d {
    Parameter* w = nullptr;
    Parameter* b = nullptr;
    ConvMeta meta;

    Conv2d() = default;
    Conv2d(ParameterSet& ps, const std::string& prefix, const ConvMeta& m, RngStream& rng) : meta(m) {
        int ck = m.in_channels * m.kernel * m.kernel;
        w = &ps.add(prefix + ".w", m.out_channels, ck);
        b = &ps.add(prefix + ".b", 1, m.out_channels);
        init_conv(*w, ck, rng);
    }

    Value operator()(Graph& g, Value x) const { return g.conv2d(x, g.param(*w), g.param(*b), meta); }
};

// Gated recurrent cell. Gate layout along columns: reset | update | candidate.
//   r = sigmoid(x Wx_r + h Wh_r + b_r)
//   u = sigmoid(x Wx_u + h Wh_u + b_u)
//   n = tanh(x Wx_n + r * (h Wh_n) + b_n)
//   h' = u * h + (1 - u) * n
struct GruCell {
    Parameter* wx = nullptr; // [in, 3*hidden]
    Parameter* wh = nullptr; // [hidden, 3*hidden]
    Parameter* b = nullptr;  // [1, 3*hidden]
    int hidden = 0;

    GruCell() = default;
    GruCell(ParameterSet& ps, const std::string& prefix, int in, int h, RngStream& rng) : hidden(h) {
        wx = &ps.add(prefix + ".wx", in, 3 * h);
        wh = &ps.add(prefix + ".wh", h, 3 * h);
        b = &ps.add(prefix + ".b", 1, 3 * h);
        init_dense(*wx, rng);
        init_dense(*wh, rng);
    }

    Value step(Graph& g, Value x, Value h) const {
        Value xg = g.matmul(x, g.param(*wx));
        Value hg = g.matmul(h, g.param(*wh));
        Value bv = g.param(*b);
        Value r = g.sigmoid(g.add_row(g.add(g.slice_cols(xg, 0, hidden), g.slice_cols(hg, 0, hidden)),
                                      g.slice_cols(bv, 0, hidden)));
        Value u = g.sigmoid(g.add_row(g.add(g.slice_cols(xg, hidden, hidden), g.slice_cols(hg, hidden, hidden)),
                                      g.slice_cols(bv, hidden, hidden)));
        Value cand = g.tanh_fn(g.add_row(
            g.add(g.slice_cols(xg, 2 * hidden, hidden), g.mul(r, g.slice_cols(hg, 2 * hidden, hidden))),
            g.slice_cols(bv, 2 * hidden, hidden)));
        Value keep = g.mul(u, h);
        Value blend = g.mul(g.affine(u, -1.0, 1.0), cand);
        return g.add(keep, blend);
    }
};

// Stable Bernoulli negative log-likelihood from logits with a (possibly soft)
// target: softplus(logit) - y * logit.
inline Value bernoulli_nll(Graph& g, Value logit, Value target) {
    return g.sub(g.softplus(logit), g.mul(target, logit));
}

// Unit-variance Gaussian negative log-likelihood: 0.5 (x - mean)^2 + 0.5 ln(2 pi).
inline Value gaussian_nll(Graph& g, Value mean, Value target) {
    constexpr double half_ln_2pi = 0.9189385332046727;
    return g.affine(g.square(g.sub(target, mean)), 0.5, half_ln_2pi);
}

} // namespace latsched::substrate
