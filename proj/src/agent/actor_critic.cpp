#include "latsched/agent/actor_critic.hpp"

#include "latsched/agent/returns.hpp"

#include <cmath>
#include <stdexcept>

namespace latsched::agent {

using cjepa::ImaginedTrajectory;
using cjepa::LatentState;
using cjepa::PolicySample;
using sb::Graph;
using sb::RngStream;
using sb::Tensor;
using sb::Value;

void AgentConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("agent: lambda outside [0,1]");
    if (entropy_scale < 0.0) throw std::invalid_argument("agent: entropy scale must be >= 0");
    if (slow_target_interval < 1) throw std::invalid_argument("agent: slow target interval must be >= 1");
    if (horizon < 1) throw std::invalid_argument("agent: horizon must be >= 1");
}

ActorCritic::Head ActorCritic::make_head(sb::ParameterSet& ps, const std::string& prefix,
                                         int out_width, RngStream& rng) const {
    Head h;
    for (int i = 0; i < 3; ++i) {
        int in = i == 0 ? latent_size_ : cfg_.hidden;
        h.fc[i] = sb::Dense(ps, prefix + ".fc" + std::to_string(i + 1), in, cfg_.hidden, rng);
        h.ln[i] = sb::LayerNorm(ps, prefix + ".fc" + std::to_string(i + 1), cfg_.hidden);
    }
    h.out = sb::Dense(ps, prefix + ".out", cfg_.hidden, out_width, rng);
    return h;
}

Value ActorCritic::run_head(const Head& head, Graph& g, Value x) const {
    Value h = x;
    for (int i = 0; i < 3; ++i) h = g.elu(head.ln[i](g, head.fc[i](g, h)));
    return head.out(g, h);
}

ActorCritic::ActorCritic(const AgentConfig& cfg, int latent_size, int action_count, uint64_t seed)
    : cfg_(cfg),
      latent_size_(latent_size),
      action_count_(action_count),
      actor_opt_(cfg.actor_lr),
      critic_opt_(cfg.critic_lr) {
    cfg_.validate();
    RngStream rng = sb::derive_stream(seed, "agent.init");
    actor_ = make_head(actor_params_, "actor", action_count_, rng);
    critic_ = make_head(critic_params_, "critic", 1, rng);
    RngStream slow_rng = sb::derive_stream(seed, "agent.init"); // same layout, values overwritten
    slow_ = make_head(slow_params_, "critic", 1, slow_rng);
    sync_slow_target();
}

void ActorCritic::sync_slow_target() {
    // hard copy: decay 0 moves the target fully onto the online weights
    sb::ema_update(slow_params_, critic_params_, 0.0);
}

Value ActorCritic::latent_matrix(Graph& g, const std::vector<const LatentState*>& latents) const {
    Tensor t(static_cast<int>(latents.size()), latent_size_);
    for (size_t i = 0; i < latents.size(); ++i) {
        const LatentState& ls = *latents[i];
        std::copy(ls.h.begin(), ls.h.end(), t.v.begin() + i * static_cast<size_t>(latent_size_));
        std::copy(ls.z.begin(), ls.z.end(),
                  t.v.begin() + i * static_cast<size_t>(latent_size_) + ls.h.size());
    }
    return g.constant(t);
}

Value ActorCritic::policy_logits(Graph& g, Value latents) const { return run_head(actor_, g, latents); }
Value ActorCritic::critic_values(Graph& g, Value latents) const { return run_head(critic_, g, latents); }
Value ActorCritic::slow_values(Graph& g, Value latents) const { return run_head(slow_, g, latents); }

PolicyOutput ActorCritic::act(const LatentState& latent, ActMode mode, RngStream* rng) const {
    Graph g;
    Value logits = policy_logits(g, latent_matrix(g, {&latent}));
    Value lsm = g.log_softmax_groups(logits, 1, action_count_);
    const auto& lv = logits.data();
    const auto& lp = lsm.data();

    PolicyOutput out;
    out.logits.assign(lv.begin(), lv.end());
    double entropy = 0.0;
    for (int k = 0; k < action_count_; ++k) entropy -= std::exp(lp[static_cast<size_t>(k)]) * lp[static_cast<size_t>(k)];
    out.entropy = entropy;

    if (mode == ActMode::greedy) {
        int best = 0;
        for (int k = 1; k < action_count_; ++k)
            if (lv[static_cast<size_t>(k)] > lv[static_cast<size_t>(best)]) best = k;
        out.action = best;
    } else {
        if (!rng) throw std::invalid_argument("act: sample mode needs an rng stream");
        double u = rng->uniform();
        double cum = 0.0;
        int pick = action_count_ - 1;
        for (int k = 0; k < action_count_; ++k) {
            cum += std::exp(lp[static_cast<size_t>(k)]);
            if (u < cum) {
                pick = k;
                break;
            }
        }
        out.action = pick;
    }
    out.log_prob = lp[static_cast<size_t>(out.action)];
    return out;
}

double ActorCritic::critic_value(const LatentState& latent) const {
    Graph g;
    return critic_values(g, latent_matrix(g, {&latent})).data()[0];
}

double ActorCritic::slow_critic_value(const LatentState& latent) const {
    Graph g;
    return slow_values(g, latent_matrix(g, {&latent})).data()[0];
}

cjepa::BatchPolicy ActorCritic::sampling_policy(RngStream& rng) const {
    return [this, &rng](const std::vector<LatentState>& latents) {
        std::vector<PolicySample> out(latents.size());
        if (latents.empty()) return out;
        Graph g;
        std::vector<const LatentState*> ptrs(latents.size());
        for (size_t i = 0; i < latents.size(); ++i) ptrs[i] = &latents[i];
        Value lsm = g.log_softmax_groups(policy_logits(g, latent_matrix(g, ptrs)), 1, action_count_);
        const auto& lp = lsm.data();
        for (size_t i = 0; i < latents.size(); ++i) {
            const double* row = lp.data() + i * static_cast<size_t>(action_count_);
            double u = rng.uniform();
            double cum = 0.0;
            int pick = action_count_ - 1;
            double entropy = 0.0;
            for (int k = 0; k < action_count_; ++k) entropy -= std::exp(row[k]) * row[k];
            for (int k = 0; k < action_count_; ++k) {
                cum += std::exp(row[k]);
                if (u < cum) {
                    pick = k;
                    break;
                }
            }
            out[i] = {pick, row[pick], entropy};
        }
        return out;
    };
}

cjepa::BatchPolicy ActorCritic::greedy_policy() const {
    return [this](const std::vector<LatentState>& latents) {
        std::vector<PolicySample> out(latents.size());
        if (latents.empty()) return out;
        Graph g;
        std::vector<const LatentState*> ptrs(latents.size());
        for (size_t i = 0; i < latents.size(); ++i) ptrs[i] = &latents[i];
        Value lsm = g.log_softmax_groups(policy_logits(g, latent_matrix(g, ptrs)), 1, action_count_);
        const auto& lp = lsm.data();
        for (size_t i = 0; i < latents.size(); ++i) {
            const double* row = lp.data() + i * static_cast<size_t>(action_count_);
            int pick = 0;
            double entropy = 0.0;
            for (int k = 0; k < action_count_; ++k) {
                entropy -= std::exp(row[k]) * row[k];
                if (row[k] > row[pick]) pick = k;
            }
            out[i] = {pick, row[pick], entropy};
        }
        return out;
    };
}

namespace {

struct TrajectoryTensors {
    std::vector<const LatentState*> latents; // S*H, trajectory-major
    std::vector<int> actions;
    std::vector<double> returns;    // lambda returns per (s,t)
    std::vector<double> advantages; // returns - online baseline
    double mean_value = 0.0;
    double mean_return = 0.0;
};

} // namespace

AgentLosses ActorCritic::accumulate_gradients(const std::vector<ImaginedTrajectory>& trajectories,
                                              sb::Precision prec) {
    if (trajectories.empty()) throw std::invalid_argument("agent update: no trajectories");
    const int S = static_cast<int>(trajectories.size());
    const int H = static_cast<int>(trajectories.front().steps.size());
    if (H < 2) throw std::invalid_argument("agent update: horizon must be >= 2");
    for (const auto& tr : trajectories)
        if (static_cast<int>(tr.steps.size()) != H)
            throw std::invalid_argument("agent update: ragged trajectory batch");

    TrajectoryTensors tt;
    tt.latents.reserve(static_cast<size_t>(S) * H);
    tt.actions.reserve(tt.latents.capacity());
    for (const auto& tr : trajectories)
        for (const auto& step : tr.steps) {
            tt.latents.push_back(&step.latent);
            tt.actions.push_back(step.action);
        }

    // forward pass for online baselines and slow-target bootstraps
    std::vector<double> online(static_cast<size_t>(S) * H), slow(static_cast<size_t>(S) * H);
    {
        Graph g(prec);
        Value lm = latent_matrix(g, tt.latents);
        online = critic_values(g, lm).data();
        slow = slow_values(g, lm).data();
    }

    tt.returns.resize(static_cast<size_t>(S) * H);
    tt.advantages.resize(static_cast<size_t>(S) * H);
    for (int s = 0; s < S; ++s) {
        std::vector<double> r(static_cast<size_t>(H)), d(static_cast<size_t>(H)), v(static_cast<size_t>(H));
        for (int t = 0; t < H; ++t) {
            const auto& step = trajectories[static_cast<size_t>(s)].steps[static_cast<size_t>(t)];
            r[static_cast<size_t>(t)] = step.reward_mean;
            d[static_cast<size_t>(t)] = step.discount;
            v[static_cast<size_t>(t)] = slow[static_cast<size_t>(s) * H + t];
        }
        std::vector<double> vl = lambda_returns(r, d, v, cfg_.lambda);
        for (int t = 0; t < H; ++t) {
            size_t idx = static_cast<size_t>(s) * H + t;
            tt.returns[idx] = vl[static_cast<size_t>(t)];
            tt.advantages[idx] = vl[static_cast<size_t>(t)] - online[idx];
            tt.mean_value += online[idx];
            tt.mean_return += vl[static_cast<size_t>(t)];
        }
    }
    tt.mean_value /= static_cast<double>(S * H);
    tt.mean_return /= static_cast<double>(S * H);

    AgentLosses losses;
    losses.mean_value = tt.mean_value;
    losses.mean_return = tt.mean_return;

    // critic regression over t = 1..H-1 (drop the pure-bootstrap last step)
    {
        Graph g(prec);
        std::vector<const LatentState*> rows;
        Tensor targets(S * (H - 1), 1);
        int k = 0;
        for (int s = 0; s < S; ++s)
            for (int t = 0; t < H - 1; ++t, ++k) {
                rows.push_back(tt.latents[static_cast<size_t>(s) * H + t]);
                targets.v[static_cast<size_t>(k)] = tt.returns[static_cast<size_t>(s) * H + t];
            }
        Value pred = critic_values(g, latent_matrix(g, rows));
        Value err = g.sub(pred, g.constant(targets));
        Value loss = g.affine(g.sum_all(g.square(err)), 0.5 / S, 0.0);
        losses.critic_loss = loss.scalar();
        g.backward(loss);
    }

    // reinforce + entropy actor loss over t = 1..H
    {
        Graph g(prec);
        Value logits = policy_logits(g, latent_matrix(g, tt.latents));
        Value lsm = g.log_softmax_groups(logits, 1, action_count_);
        Value sm = g.softmax_groups(logits, 1, action_count_);
        Tensor pick(S * H, action_count_), adv(S * H, 1);
        for (int i = 0; i < S * H; ++i) {
            pick.at(i, tt.actions[static_cast<size_t>(i)]) = 1.0;
            adv.v[static_cast<size_t>(i)] = tt.advantages[static_cast<size_t>(i)];
        }
        Value chosen_lp = g.sum_cols(g.mul(lsm, g.constant(pick)));
        Value entropy = g.affine(g.sum_cols(g.mul(sm, lsm)), -1.0, 0.0);
        Value reinforce = g.affine(g.mul(chosen_lp, g.constant(adv)), -1.0, 0.0);
        Value per_row = g.sub(reinforce, g.affine(entropy, cfg_.entropy_scale, 0.0));
        Value loss = g.affine(g.sum_all(per_row), 1.0 / S, 0.0);
        losses.actor_loss = loss.scalar();
        double esum = 0.0;
        for (double e : entropy.data()) esum += e;
        losses.mean_entropy = esum / static_cast<double>(S * H);
        g.backward(loss);
    }
    return losses;
}

void ActorCritic::optimizer_step(sb::Precision prec) {
    actor_opt_.step(actor_params_, prec);
    critic_opt_.step(critic_params_, prec);
    ++gradient_steps_;
    if (gradient_steps_ % cfg_.slow_target_interval == 0) sync_slow_target();
}

Value ActorCritic::build_critic_loss(Graph& g, const ImaginedTrajectory& traj) const {
    const int H = static_cast<int>(traj.steps.size());
    if (H < 2) throw std::invalid_argument("critic loss: horizon must be >= 2");
    std::vector<double> r(static_cast<size_t>(H)), d(static_cast<size_t>(H)), v(static_cast<size_t>(H));
    for (int t = 0; t < H; ++t) {
        r[static_cast<size_t>(t)] = traj.steps[static_cast<size_t>(t)].reward_mean;
        d[static_cast<size_t>(t)] = traj.steps[static_cast<size_t>(t)].discount;
        v[static_cast<size_t>(t)] = slow_critic_value(traj.steps[static_cast<size_t>(t)].latent);
    }
    std::vector<double> vl = lambda_returns(r, d, v, cfg_.lambda);
    std::vector<const LatentState*> rows;
    Tensor targets(H - 1, 1);
    for (int t = 0; t < H - 1; ++t) {
        rows.push_back(&traj.steps[static_cast<size_t>(t)].latent);
        targets.v[static_cast<size_t>(t)] = vl[static_cast<size_t>(t)];
    }
    Value pred = critic_values(g, latent_matrix(g, rows));
    Value err = g.sub(pred, g.stop_gradient(g.constant(targets)));
    return g.affine(g.sum_all(g.square(err)), 0.5, 0.0);
}

Value ActorCritic::build_actor_loss(Graph& g, const ImaginedTrajectory& traj) const {
    const int H = static_cast<int>(traj.steps.size());
    std::vector<double> r(static_cast<size_t>(H)), d(static_cast<size_t>(H)), v(static_cast<size_t>(H));
    std::vector<const LatentState*> rows;
    for (int t = 0; t < H; ++t) {
        r[static_cast<size_t>(t)] = traj.steps[static_cast<size_t>(t)].reward_mean;
        d[static_cast<size_t>(t)] = traj.steps[static_cast<size_t>(t)].discount;
        v[static_cast<size_t>(t)] = slow_critic_value(traj.steps[static_cast<size_t>(t)].latent);
        rows.push_back(&traj.steps[static_cast<size_t>(t)].latent);
    }
    std::vector<double> vl = lambda_returns(r, d, v, cfg_.lambda);
    Tensor pick(H, action_count_), adv(H, 1);
    for (int t = 0; t < H; ++t) {
        pick.at(t, traj.steps[static_cast<size_t>(t)].action) = 1.0;
        adv.v[static_cast<size_t>(t)] = vl[static_cast<size_t>(t)] - critic_value(traj.steps[static_cast<size_t>(t)].latent);
    }
    Value logits = policy_logits(g, latent_matrix(g, rows));
    Value lsm = g.log_softmax_groups(logits, 1, action_count_);
    Value sm = g.softmax_groups(logits, 1, action_count_);
    Value chosen_lp = g.sum_cols(g.mul(lsm, g.constant(pick)));
    Value entropy = g.affine(g.sum_cols(g.mul(sm, lsm)), -1.0, 0.0);
    Value reinforce = g.affine(g.mul(chosen_lp, g.stop_gradient(g.constant(adv))), -1.0, 0.0);
    Value per_row = g.sub(reinforce, g.affine(entropy, cfg_.entropy_scale, 0.0));
    return g.sum_all(per_row);
}

} // namespace latsched::agent
