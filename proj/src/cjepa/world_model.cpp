#include "latsched/cjepa/world_model.hpp"

#include <cmath>
#include <stdexcept>

namespace latsched::cjepa {

using sb::Graph;
using sb::RngStream;
using sb::Tensor;
using sb::Value;

void ControlJepaConfig::validate() const {
    if (kl_balance < 0.0 || kl_balance > 1.0) throw std::invalid_argument("cjepa: mu must lie in [0,1]");
    if (kl_scale < 0.0) throw std::invalid_argument("cjepa: beta must be >= 0");
    if (groups < 2 || classes < 2) throw std::invalid_argument("cjepa: M and K must be >= 2");
    int o1 = (frame_size - 8) / 4 + 1;
    if (frame_size < 28 || o1 < 4) throw std::invalid_argument("cjepa: frame too small for the conv stack");
    if (batch_size < 1 || horizon < 1) throw std::invalid_argument("cjepa: batch and horizon must be >= 1");
}

Value kl_balanced(Graph& g, Value q_logits, Value p_logits, double mu, int groups, int classes) {
    Value fixed_q = g.kl_groups(g.stop_gradient(q_logits), p_logits, groups, classes);
    Value fixed_p = g.kl_groups(q_logits, g.stop_gradient(p_logits), groups, classes);
    return g.add(g.affine(fixed_q, mu, 0.0), g.affine(fixed_p, 1.0 - mu, 0.0));
}

WorldModel::WorldModel(const ControlJepaConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    RngStream rng = sb::derive_stream(seed, "cjepa.init");

    sb::ConvMeta m1{1, cfg_.frame_size, cfg_.frame_size, 16, 8, 4};
    sb::ConvMeta m2{16, m1.out_h(), m1.out_w(), 32, 4, 2};
    sb::ConvMeta m3{32, m2.out_h(), m2.out_w(), 64, 2, 2};
    conv1_ = sb::Conv2d(params_, "enc.conv1", m1, rng);
    conv2_ = sb::Conv2d(params_, "enc.conv2", m2, rng);
    conv3_ = sb::Conv2d(params_, "enc.conv3", m3, rng);
    int c1 = 16 * m1.out_h() * m1.out_w();
    int c2 = 32 * m2.out_h() * m2.out_w();
    int c3 = 64 * m3.out_h() * m3.out_w();
    conv1_ln_ = sb::LayerNorm(params_, "enc.conv1", c1);
    conv2_ln_ = sb::LayerNorm(params_, "enc.conv2", c2);
    conv3_ln_ = sb::LayerNorm(params_, "enc.conv3", c3);
    enc_fc1_ = sb::Dense(params_, "enc.fc1", c3, 1024, rng);
    enc_ln1_ = sb::LayerNorm(params_, "enc.fc1", 1024);
    enc_fc2_ = sb::Dense(params_, "enc.fc2", 1024, 256, rng);
    enc_ln2_ = sb::LayerNorm(params_, "enc.fc2", 256);
    enc_fc3_ = sb::Dense(params_, "enc.fc3", 256, cfg_.image_feature, rng);
    enc_ln3_ = sb::LayerNorm(params_, "enc.fc3", cfg_.image_feature);

    gru_in_ = sb::Dense(params_, "rssm.gru_in", cfg_.action_count + cfg_.z_size(), cfg_.gru_embed, rng);
    gru_in_ln_ = sb::LayerNorm(params_, "rssm.gru_in", cfg_.gru_embed);
    gru_ = sb::GruCell(params_, "rssm.gru", cfg_.gru_embed, cfg_.recurrent, rng);

    post_fc_ = sb::Dense(params_, "rssm.post_fc", cfg_.image_feature + cfg_.recurrent, cfg_.hidden, rng);
    post_bn_ = sb::BatchNorm(params_, buffers_, "rssm.post_fc", cfg_.hidden);
    post_out_ = sb::Dense(params_, "rssm.post_out", cfg_.hidden, cfg_.z_size(), rng);
    prior_fc_ = sb::Dense(params_, "rssm.prior_fc", cfg_.recurrent, cfg_.hidden, rng);
    prior_ln_ = sb::LayerNorm(params_, "rssm.prior_fc", cfg_.hidden);
    prior_out_ = sb::Dense(params_, "rssm.prior_out", cfg_.hidden, cfg_.z_size(), rng);

    int latent = cfg_.latent_size();
    for (int i = 0; i < 3; ++i) {
        int in = i == 0 ? latent : cfg_.head_hidden;
        rew_fc_[i] = sb::Dense(params_, "head.reward.fc" + std::to_string(i + 1), in, cfg_.head_hidden, rng);
        rew_ln_[i] = sb::LayerNorm(params_, "head.reward.fc" + std::to_string(i + 1), cfg_.head_hidden);
        term_fc_[i] = sb::Dense(params_, "head.term.fc" + std::to_string(i + 1), in, cfg_.head_hidden, rng);
        term_ln_[i] = sb::LayerNorm(params_, "head.term.fc" + std::to_string(i + 1), cfg_.head_hidden);
    }
    rew_out_ = sb::Dense(params_, "head.reward.out", cfg_.head_hidden, 1, rng);
    term_out_ = sb::Dense(params_, "head.term.out", cfg_.head_hidden, 1, rng);
}

Value WorldModel::encode(Graph& g, Value frames) const {
    if (frames.cols != cfg_.frame_size * cfg_.frame_size)
        throw std::invalid_argument("encode: frame size mismatch with configured architecture");
    ++encoder_calls_;
    Value h = g.elu(conv1_ln_(g, conv1_(g, frames)));
    h = g.elu(conv2_ln_(g, conv2_(g, h)));
    h = g.elu(conv3_ln_(g, conv3_(g, h)));
    h = g.elu(enc_ln1_(g, enc_fc1_(g, h)));
    h = g.elu(enc_ln2_(g, enc_fc2_(g, h)));
    h = g.elu(enc_ln3_(g, enc_fc3_(g, h)));
    return h;
}

Value WorldModel::recurrent_step(Graph& g, Value h, Value z, Value action_onehot) const {
    Value in = g.concat_cols(action_onehot, z);
    Value embed = g.elu(gru_in_ln_(g, gru_in_(g, in)));
    return gru_.step(g, embed, h);
}

Value WorldModel::posterior_logits(Graph& g, Value h, Value x, bool train) const {
    Value in = g.concat_cols(x, h);
    Value mid = g.elu(post_bn_(g, post_fc_(g, in), train));
    return post_out_(g, mid);
}

Value WorldModel::prior_logits(Graph& g, Value h) const {
    Value mid = g.elu(prior_ln_(g, prior_fc_(g, h)));
    return prior_out_(g, mid);
}

std::pair<Value, Value> WorldModel::head_logits(Graph& g, Value h, Value z) const {
    Value latent = g.concat_cols(h, z);
    Value r = latent;
    Value t = latent;
    for (int i = 0; i < 3; ++i) {
        r = g.elu(rew_ln_[i](g, rew_fc_[i](g, r)));
        t = g.elu(term_ln_[i](g, term_fc_[i](g, t)));
    }
    return {rew_out_(g, r), term_out_(g, t)};
}

Value WorldModel::realize_z(Graph& g, Value logits, LatentMode mode, RngStream* rng) const {
    switch (mode) {
        case LatentMode::sampled:
            if (!rng) throw std::invalid_argument("sampled latent mode needs an rng stream");
            return g.straight_through_sample(logits, cfg_.groups, cfg_.classes, *rng);
        case LatentMode::soft:
            return g.softmax_groups(logits, cfg_.groups, cfg_.classes);
        case LatentMode::mode: {
            // argmax one-hot, built as data (no gradient path by construction)
            Tensor onehot(logits.rows, logits.cols);
            const auto& lv = logits.data();
            for (int r = 0; r < logits.rows; ++r)
                for (int grp = 0; grp < cfg_.groups; ++grp) {
                    size_t off = static_cast<size_t>(r) * logits.cols +
                                 static_cast<size_t>(grp) * cfg_.classes;
                    int best = 0;
                    for (int k = 1; k < cfg_.classes; ++k)
                        if (lv[off + k] > lv[off + best]) best = k;
                    onehot.v[off + best] = 1.0;
                }
            return g.constant(onehot);
        }
    }
    throw std::logic_error("unreachable");
}

Value WorldModel::onehot_actions(Graph& g, const int* actions, int count) const {
    Tensor t(count, cfg_.action_count);
    for (int i = 0; i < count; ++i) {
        int a = actions[i];
        if (a < 0 || a >= cfg_.action_count) throw std::invalid_argument("action index out of range");
        t.at(i, a) = 1.0;
    }
    return g.constant(t);
}

WorldModelLossParts WorldModel::build_loss(Graph& g, const ExperienceBatch& batch, RngStream& rng,
                                           LatentMode z_mode,
                                           std::vector<LatentState>* posterior_out,
                                           bool plain_kl) const {
    if (batch.batch < 1 || batch.length < 1) throw std::invalid_argument("world model loss: empty batch");
    if (batch.frames.size() != static_cast<size_t>(batch.batch) * batch.length * batch.frame_pixels() ||
        batch.prev_actions.size() != static_cast<size_t>(batch.batch) * batch.length ||
        batch.rewards.size() != batch.prev_actions.size() ||
        batch.discounts.size() != batch.prev_actions.size())
        throw std::invalid_argument("world model loss: misaligned sequence lengths");
    if (batch.frame_size != cfg_.frame_size)
        throw std::invalid_argument("world model loss: frame size mismatch");

    const int B = batch.batch;
    const int T = batch.length;
    const size_t px = batch.frame_pixels();

    if (posterior_out) {
        posterior_out->clear();
        posterior_out->resize(static_cast<size_t>(B) * T);
    }

    Value h = g.zeros(B, cfg_.recurrent);
    Value z = realize_z(g, prior_logits(g, h), z_mode, &rng);

    Value kl_acc, r_acc, t_acc;
    for (int t = 0; t < T; ++t) {
        // gather the batch column for step t
        Tensor frames(B, static_cast<int>(px));
        std::vector<int> acts(static_cast<size_t>(B));
        Tensor rewards(B, 1), discounts(B, 1);
        for (int b = 0; b < B; ++b) {
            size_t row = static_cast<size_t>(b) * T + t;
            const float* src = batch.frames.data() + row * px;
            for (size_t i = 0; i < px; ++i) frames.v[static_cast<size_t>(b) * px + i] = src[i];
            acts[static_cast<size_t>(b)] = batch.prev_actions[row];
            rewards.v[static_cast<size_t>(b)] = batch.rewards[row];
            discounts.v[static_cast<size_t>(b)] = batch.discounts[row];
        }

        h = recurrent_step(g, h, z, onehot_actions(g, acts.data(), B));
        Value x = encode(g, g.constant(frames));
        Value q = posterior_logits(g, h, x, /*train=*/true);
        Value p = prior_logits(g, h);
        z = realize_z(g, q, z_mode, &rng);

        Value kl = plain_kl ? g.kl_groups(q, p, cfg_.groups, cfg_.classes)
                            : kl_balanced(g, q, p, cfg_.kl_balance, cfg_.groups, cfg_.classes);
        auto [rmean, tlogit] = head_logits(g, h, z);
        Value rnll = sb::gaussian_nll(g, rmean, g.constant(rewards));
        Value tnll = sb::bernoulli_nll(g, tlogit, g.constant(discounts));

        kl_acc = t == 0 ? kl : g.add(kl_acc, kl);
        r_acc = t == 0 ? rnll : g.add(r_acc, rnll);
        t_acc = t == 0 ? tnll : g.add(t_acc, tnll);

        if (posterior_out) {
            const auto& hv = h.data();
            const auto& zv = z.data();
            const auto& qv = q.data();
            for (int b = 0; b < B; ++b) {
                LatentState& ls = (*posterior_out)[static_cast<size_t>(b) * T + t];
                ls.h.assign(hv.begin() + static_cast<size_t>(b) * cfg_.recurrent,
                            hv.begin() + static_cast<size_t>(b + 1) * cfg_.recurrent);
                ls.z.assign(zv.begin() + static_cast<size_t>(b) * cfg_.z_size(),
                            zv.begin() + static_cast<size_t>(b + 1) * cfg_.z_size());
                ls.z_logits.assign(qv.begin() + static_cast<size_t>(b) * cfg_.z_size(),
                                   qv.begin() + static_cast<size_t>(b + 1) * cfg_.z_size());
            }
        }
    }

    Value per_seq = g.add(g.affine(kl_acc, cfg_.kl_scale, 0.0), g.add(r_acc, t_acc));
    WorldModelLossParts parts;
    parts.total = g.mean_all(per_seq);
    double denom = static_cast<double>(B) * T;
    double ksum = 0.0, rsum = 0.0, tsum = 0.0;
    for (double v : kl_acc.data()) ksum += v;
    for (double v : r_acc.data()) rsum += v;
    for (double v : t_acc.data()) tsum += v;
    parts.kl = ksum / denom;
    parts.reward_nll = rsum / denom;
    parts.termination_nll = tsum / denom;
    return parts;
}

LatentState WorldModel::initial_latent(LatentMode mode, RngStream* rng) const {
    Graph g;
    Value h = g.zeros(1, cfg_.recurrent);
    Value z = realize_z(g, prior_logits(g, h), mode, rng);
    LatentState ls;
    ls.h.assign(static_cast<size_t>(cfg_.recurrent), 0.0);
    ls.z = z.data();
    return ls;
}

LatentState WorldModel::observe_step(const LatentState& prev, int prev_action, const float* frame,
                                     LatentMode mode, RngStream* rng) const {
    Graph g;
    Tensor hprev(1, cfg_.recurrent), zprev(1, cfg_.z_size());
    hprev.v = prev.h;
    zprev.v = prev.z;
    Tensor fr(1, cfg_.frame_size * cfg_.frame_size);
    for (size_t i = 0; i < fr.v.size(); ++i) fr.v[i] = frame[i];
    Value h = recurrent_step(g, g.constant(hprev), g.constant(zprev),
                             onehot_actions(g, &prev_action, 1));
    Value x = encode(g, g.constant(fr));
    Value q = posterior_logits(g, h, x, /*train=*/false);
    Value z = realize_z(g, q, mode, rng);
    LatentState out;
    out.h = h.data();
    out.z = z.data();
    out.z_logits = q.data();
    return out;
}

std::vector<LatentState> WorldModel::observe_sequence(const std::vector<const float*>& frames,
                                                      const std::vector<int>& prev_actions,
                                                      const LatentState& initial, LatentMode mode,
                                                      RngStream* rng) const {
    if (frames.size() != prev_actions.size())
        throw std::invalid_argument("observe_sequence: length mismatch");
    std::vector<LatentState> out;
    out.reserve(frames.size());
    const LatentState* cur = &initial;
    for (size_t i = 0; i < frames.size(); ++i) {
        out.push_back(observe_step(*cur, prev_actions[i], frames[i], mode, rng));
        cur = &out.back();
    }
    return out;
}

LatentState WorldModel::imagine_step(const LatentState& prev, int action, LatentMode mode,
                                     RngStream* rng) const {
    Graph g;
    Tensor hprev(1, cfg_.recurrent), zprev(1, cfg_.z_size());
    hprev.v = prev.h;
    zprev.v = prev.z;
    Value h = recurrent_step(g, g.constant(hprev), g.constant(zprev), onehot_actions(g, &action, 1));
    Value p = prior_logits(g, h);
    Value z = realize_z(g, p, mode, rng);
    LatentState out;
    out.h = h.data();
    out.z = z.data();
    out.z_logits = p.data();
    return out;
}

HeadOutputs WorldModel::predict_heads(const LatentState& latent) const {
    Graph g;
    Tensor h(1, cfg_.recurrent), z(1, cfg_.z_size());
    h.v = latent.h;
    z.v = latent.z;
    auto [rmean, tlogit] = head_logits(g, g.constant(h), g.constant(z));
    Value prob = g.sigmoid(tlogit);
    return {rmean.data()[0], prob.data()[0]};
}

std::vector<ImaginedTrajectory> WorldModel::imagine(const std::vector<LatentState>& starts,
                                                    const BatchPolicy& policy, int horizon,
                                                    RngStream& rng) const {
    if (horizon < 1) throw std::invalid_argument("imagine: horizon must be >= 1");
    const int S = static_cast<int>(starts.size());
    std::vector<ImaginedTrajectory> out(static_cast<size_t>(S));
    if (S == 0) return out;

    std::vector<PolicySample> samples = policy(starts);
    std::vector<LatentState> cur = starts;
    for (int s = 0; s < S; ++s) {
        out[static_cast<size_t>(s)].start = starts[static_cast<size_t>(s)];
        out[static_cast<size_t>(s)].start_action = samples[static_cast<size_t>(s)].action;
    }

    for (int t = 0; t < horizon; ++t) {
        Graph g;
        Tensor hprev(S, cfg_.recurrent), zprev(S, cfg_.z_size());
        std::vector<int> acts(static_cast<size_t>(S));
        for (int s = 0; s < S; ++s) {
            std::copy(cur[static_cast<size_t>(s)].h.begin(), cur[static_cast<size_t>(s)].h.end(),
                      hprev.v.begin() + static_cast<size_t>(s) * cfg_.recurrent);
            std::copy(cur[static_cast<size_t>(s)].z.begin(), cur[static_cast<size_t>(s)].z.end(),
                      zprev.v.begin() + static_cast<size_t>(s) * cfg_.z_size());
            acts[static_cast<size_t>(s)] = samples[static_cast<size_t>(s)].action;
        }
        Value h = recurrent_step(g, g.constant(hprev), g.constant(zprev),
                                 onehot_actions(g, acts.data(), S));
        Value p = prior_logits(g, h);
        Value z = realize_z(g, p, LatentMode::sampled, &rng);
        auto [rmean, tlogit] = head_logits(g, h, z);
        Value tprob = g.sigmoid(tlogit);

        std::vector<LatentState> next(static_cast<size_t>(S));
        const auto& hv = h.data();
        const auto& zv = z.data();
        for (int s = 0; s < S; ++s) {
            next[static_cast<size_t>(s)].h.assign(hv.begin() + static_cast<size_t>(s) * cfg_.recurrent,
                                                  hv.begin() + static_cast<size_t>(s + 1) * cfg_.recurrent);
            next[static_cast<size_t>(s)].z.assign(zv.begin() + static_cast<size_t>(s) * cfg_.z_size(),
                                                  zv.begin() + static_cast<size_t>(s + 1) * cfg_.z_size());
        }
        std::vector<PolicySample> next_samples = policy(next);
        for (int s = 0; s < S; ++s) {
            ImaginedStep step;
            step.latent = next[static_cast<size_t>(s)];
            step.action = next_samples[static_cast<size_t>(s)].action;
            step.log_prob = next_samples[static_cast<size_t>(s)].log_prob;
            step.entropy = next_samples[static_cast<size_t>(s)].entropy;
            step.reward_mean = rmean.data()[static_cast<size_t>(s)];
            step.discount = tprob.data()[static_cast<size_t>(s)];
            out[static_cast<size_t>(s)].steps.push_back(std::move(step));
        }
        cur = std::move(next);
        samples = std::move(next_samples);
    }
    return out;
}

} // namespace latsched::cjepa
