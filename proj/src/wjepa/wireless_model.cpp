#include "latsched/wjepa/wireless_model.hpp"

#include <stdexcept>

namespace latsched::wjepa {

using sb::Graph;
using sb::RngStream;
using sb::Tensor;
using sb::Value;

void WirelessJepaConfig::validate() const {
    if (embedding < 2) throw std::invalid_argument("wjepa: embedding size must be >= 2");
    if (ema_decay < 0.0 || ema_decay > 1.0) throw std::invalid_argument("wjepa: EMA decay outside [0,1]");
    if (antennas < 1 || subcarriers < 1) throw std::invalid_argument("wjepa: bad channel dimensions");
}

std::vector<double> flatten_channel(const chansim::ChannelSnapshot& snap) {
    std::vector<double> out;
    out.reserve(snap.g.size() * 2);
    for (const auto& c : snap.g) {
        out.push_back(c.real());
        out.push_back(c.imag());
    }
    return out;
}

namespace {
constexpr int kWidths[5] = {1024, 512, 256, 128, 64};
}

WirelessModel::WirelessModel(const WirelessJepaConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng = sb::derive_stream(seed, "wjepa.init");
    int in = cfg_.channel_width();
    for (int i = 0; i < kLayers; ++i) {
        enc_fc_[i] = sb::Dense(online_, "wenc.fc" + std::to_string(i + 1), in, kWidths[i], rng);
        enc_bn_[i] = sb::BatchNorm(online_, online_bufs_, "wenc.fc" + std::to_string(i + 1), kWidths[i]);
        in = kWidths[i];
    }
    enc_out_ = sb::Dense(online_, "wenc.out", kWidths[kLayers - 1], cfg_.embedding, rng);

    int pin = cfg_.embedding + cfg_.control_recurrent + cfg_.control_z;
    pred_gru_ = sb::GruCell(online_, "wpred.gru", pin, cfg_.predictor_recurrent, rng);
    pred_fc_ = sb::Dense(online_, "wpred.fc", cfg_.predictor_recurrent, 64, rng);
    pred_out_ = sb::Dense(online_, "wpred.out", 64, cfg_.embedding, rng);

    // target copy of the encoder only (the predictor has no target twin)
    RngStream dummy = sb::derive_stream(seed, "wjepa.init.target");
    in = cfg_.channel_width();
    for (int i = 0; i < kLayers; ++i) {
        tgt_fc_[i] = sb::Dense(target_, "wenc.fc" + std::to_string(i + 1), in, kWidths[i], dummy);
        tgt_bn_[i] = sb::BatchNorm(target_, target_bufs_, "wenc.fc" + std::to_string(i + 1), kWidths[i]);
        in = kWidths[i];
    }
    tgt_out_ = sb::Dense(target_, "wenc.out", kWidths[kLayers - 1], cfg_.embedding, dummy);
    sync_target();
}

std::vector<bool> WirelessModel::decay_mask() const {
    std::vector<bool> mask(online_.size());
    for (size_t i = 0; i < online_.size(); ++i) {
        const std::string& n = online_[i].name;
        mask[i] = n.find(".bn_") == std::string::npos && n.find(".ln_") == std::string::npos;
    }
    return mask;
}

Value WirelessModel::encode_with(Graph& g, Value flat, bool train, bool target_net) const {
    if (flat.cols != cfg_.channel_width())
        throw std::invalid_argument("encode_csi: channel dimension mismatch");
    Value h = flat;
    for (int i = 0; i < kLayers; ++i) {
        if (target_net) {
            // constants: the EMA network never joins the gradient tape
            h = g.add_row(g.matmul(h, g.constant(*tgt_fc_[i].w)), g.constant(*tgt_fc_[i].b));
            h = g.batch_norm(h, g.constant(*tgt_bn_[i].gain), g.constant(*tgt_bn_[i].bias),
                             *tgt_bn_[i].run_mean, *tgt_bn_[i].run_var, train);
        } else {
            h = enc_fc_[i](g, h);
            h = enc_bn_[i](g, h, train);
        }
        h = g.relu(h);
    }
    if (target_net)
        return g.add_row(g.matmul(h, g.constant(*tgt_out_.w)), g.constant(*tgt_out_.b));
    return enc_out_(g, h);
}

Value WirelessModel::encode(Graph& g, Value flat, bool train) const {
    return encode_with(g, flat, train, false);
}

Value WirelessModel::target_encode(Graph& g, Value flat, bool train) const {
    return encode_with(g, flat, train, true);
}

Value WirelessModel::predict_step(Graph& g, Value c_prev, Value q, Value h, Value z,
                                  Value* q_next) const {
    Value in = g.concat_cols(c_prev, g.concat_cols(h, z));
    Value q2 = pred_gru_.step(g, in, q);
    if (q_next) *q_next = q2;
    Value mid = g.relu(pred_fc_(g, q2));
    return g.add(c_prev, pred_out_(g, mid));
}

Value WirelessModel::build_loss(Graph& g, const WirelessBatch& batch, bool train_mode) const {
    const int B = batch.batch;
    const int T = batch.length;
    const int W = cfg_.channel_width();
    if (B < 1 || T < 1) throw std::invalid_argument("wireless loss: empty batch");
    if (batch.channels.size() != static_cast<size_t>(B) * (T + 1) * W ||
        batch.cond_h.size() != static_cast<size_t>(B) * T * cfg_.control_recurrent ||
        batch.cond_z.size() != static_cast<size_t>(B) * T * cfg_.control_z)
        throw std::invalid_argument("wireless loss: misaligned sequence lengths");

    auto channel_rows = [&](int t) {
        Tensor rows(B, W);
        for (int b = 0; b < B; ++b) {
            size_t src = (static_cast<size_t>(b) * (T + 1) + t) * W;
            std::copy(batch.channels.begin() + src, batch.channels.begin() + src + W,
                      rows.v.begin() + static_cast<size_t>(b) * W);
        }
        return rows;
    };
    auto cond_rows = [&](int t, const std::vector<double>& src, int width) {
        Tensor rows(B, width);
        for (int b = 0; b < B; ++b) {
            size_t off = (static_cast<size_t>(b) * T + t) * width;
            std::copy(src.begin() + off, src.begin() + off + width,
                      rows.v.begin() + static_cast<size_t>(b) * width);
        }
        return rows;
    };

    Value c = encode(g, g.constant(channel_rows(0)), train_mode);
    Value q = g.zeros(B, cfg_.predictor_recurrent);
    Value acc;
    for (int t = 1; t <= T; ++t) {
        Value h = g.constant(cond_rows(t - 1, batch.cond_h, cfg_.control_recurrent));
        Value z = g.constant(cond_rows(t - 1, batch.cond_z, cfg_.control_z));
        Value q_next;
        Value pred = predict_step(g, c, q, h, z, &q_next);
        q = q_next;
        Value target = target_encode(g, g.constant(channel_rows(t)), train_mode);
        Value err = g.sum_cols(g.square(g.sub(pred, target)));
        acc = t == 1 ? err : g.add(acc, err);
        // teacher forcing: next input is the online embedding of the
        // measured channel, matching the training-time availability
        c = encode(g, g.constant(channel_rows(t)), train_mode);
    }
    return g.mean_all(acc);
}

void WirelessModel::ema_with(double decay) {
    // the target twin covers the encoder only; its params sit first in the
    // online set in the same order
    for (size_t i = 0; i < target_.size(); ++i) {
        sb::Parameter& t = target_[i];
        const sb::Parameter& o = online_[i];
        if (t.name != o.name || t.rows != o.rows || t.cols != o.cols)
            throw std::logic_error("wireless EMA: encoder layout mismatch at " + t.name);
        for (size_t k = 0; k < t.v.size(); ++k) t.v[k] = decay * t.v[k] + (1.0 - decay) * o.v[k];
    }
    target_.bump_version();
    for (size_t i = 0; i < target_bufs_.size(); ++i) {
        Tensor& t = target_bufs_[i];
        const Tensor& o = online_bufs_[i];
        for (size_t k = 0; k < t.v.size(); ++k) t.v[k] = decay * t.v[k] + (1.0 - decay) * o.v[k];
    }
}

void WirelessModel::ema_step() { ema_with(cfg_.ema_decay); }

void WirelessModel::sync_target() { ema_with(0.0); }

CsiEmbedding WirelessModel::encode_csi(const chansim::ChannelSnapshot& snap) const {
    Graph g;
    Tensor flat(1, cfg_.channel_width());
    std::vector<double> values = flatten_channel(snap);
    if (values.size() != flat.v.size())
        throw std::invalid_argument("encode_csi: channel dimension mismatch");
    flat.v = std::move(values);
    Value c = encode(g, g.constant(flat), /*train=*/false);
    return {c.data(), CsiEmbedding::Source::encoder};
}

CsiEmbedding WirelessModel::target_encode_csi(const chansim::ChannelSnapshot& snap) const {
    Graph g;
    Tensor flat(1, cfg_.channel_width());
    std::vector<double> values = flatten_channel(snap);
    if (values.size() != flat.v.size())
        throw std::invalid_argument("target_encode_csi: channel dimension mismatch");
    flat.v = std::move(values);
    Value c = target_encode(g, g.constant(flat), /*train=*/false);
    return {c.data(), CsiEmbedding::Source::ema_target};
}

std::pair<CsiEmbedding, PredictorState> WirelessModel::predict_next(
    const CsiEmbedding& c_prev, const PredictorState& state, const cjepa::LatentState& latent) const {
    Graph g;
    Tensor c(1, cfg_.embedding), q(1, cfg_.predictor_recurrent);
    c.v = c_prev.c;
    if (!state.q.empty()) q.v = state.q;
    Tensor h(1, cfg_.control_recurrent), z(1, cfg_.control_z);
    h.v = latent.h;
    z.v = latent.z;
    Value q_next;
    Value pred = predict_step(g, g.constant(c), g.constant(q), g.constant(h), g.constant(z), &q_next);
    return {{pred.data(), CsiEmbedding::Source::predicted}, {q_next.data()}};
}

std::vector<CsiEmbedding> WirelessModel::rollout(
    const CsiEmbedding& c0, const std::vector<const cjepa::LatentState*>& latents) const {
    std::vector<CsiEmbedding> out;
    out.reserve(latents.size());
    CsiEmbedding cur = c0;
    PredictorState state; // fresh q at every anchoring
    for (const cjepa::LatentState* ls : latents) {
        auto [next, q] = predict_next(cur, state, *ls);
        state = std::move(q);
        cur = next;
        out.push_back(cur);
    }
    return out;
}

} // namespace latsched::wjepa
