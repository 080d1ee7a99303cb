#include "latsched/sched/closed_loop.hpp"

#include <cstdio>
#include <stdexcept>

namespace latsched::sched {

using cjepa::LatentMode;
using cjepa::LatentState;

namespace {

struct Accounting {
    std::vector<double> rewards;
    double total_power = 0.0;
    int64_t bits = 0;
    int transmissions = 0, receptions = 0, outages = 0, slots = 0;
};

struct TxResult {
    bool received = false;
    chansim::ChannelSnapshot g;
};

TxResult transmit(const envsim::CarTrackEnv& env, const chansim::ScattererField& field,
                  const chansim::RadioSpec& radio, const SchedulerConfig& cfg, Accounting& acc) {
    TxResult tx;
    tx.g = chansim::channel_at(env.state().x, env.state().y, env.state().step_index, field, radio);
    double rho_req = chansim::required_power(tx.g, radio.snr_threshold, radio.noise_power_w);
    tx.received = rho_req <= cfg.power_budget_w;
    double rho = tx.received ? rho_req : cfg.power_budget_w; // clipped at the budget
    acc.total_power += rho;
    acc.bits += cfg.bits_per_frame;
    acc.transmissions += 1;
    if (tx.received)
        acc.receptions += 1;
    else
        acc.outages += 1;
    return tx;
}

EpisodeMetrics finish(const envsim::CarTrackEnv& env, const Accounting& acc) {
    EpisodeMetrics m;
    m.normalized_return = env.normalized_return(acc.rewards);
    m.total_power_w = acc.total_power;
    m.avg_power_w = acc.slots > 0 ? acc.total_power / acc.slots : 0.0;
    m.overhead_bits = acc.bits;
    m.slots = acc.slots;
    m.transmissions = acc.transmissions;
    m.receptions = acc.receptions;
    m.outages = acc.outages;
    return m;
}

void trace_slot(std::ostream* trace, const envsim::CarTrackEnv& env, int action, double reward,
                bool terminated, bool scheduled, bool received) {
    if (!trace) return;
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%d %d %.17g %d %.17g %.17g alpha=%d received=%d\n",
                  env.state().step_index, action, reward, terminated ? 1 : 0, env.state().x,
                  env.state().y, scheduled ? 1 : 0, received ? 1 : 0);
    *trace << buf;
}

enum class SlotRule { min_power, end_of_horizon };

EpisodeMetrics predictive_episode(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                  const chansim::ScattererField& field,
                                  const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                  uint64_t seed, SlotRule rule, std::ostream* trace) {
    cfg.validate();
    env.reset(seed);
    Accounting acc;
    sb::RngStream imag_rng = sb::derive_stream(seed, "eval.imagine");

    LatentState latent = stack.wm->initial_latent(LatentMode::mode, nullptr);
    wjepa::CsiEmbedding c_anchor;
    bool have_anchor = false;
    bool done = false;

    // mandatory initial anchor: kappa scheduled slots
    for (int k = 0; k < cfg.kappa && !done; ++k) {
        int a = stack.agent->act(latent, agent::ActMode::greedy, nullptr).action;
        auto r = env.step(a);
        acc.slots += 1;
        acc.rewards.push_back(r.reward);
        TxResult tx = transmit(env, field, radio, cfg, acc);
        if (tx.received) {
            latent = stack.wm->observe_step(latent, a, r.observation.frame.data(), LatentMode::mode,
                                            nullptr);
            c_anchor = stack.wjepa->encode_csi(tx.g);
            have_anchor = true;
        } else {
            latent = stack.wm->imagine_step(latent, a, LatentMode::mode, nullptr);
        }
        done = r.terminated;
        trace_slot(trace, env, a, r.reward, r.terminated, true, tx.received);
    }

    while (!done) {
        auto trajs = stack.wm->imagine({latent}, stack.agent->greedy_policy(), cfg.lookahead, imag_rng);
        const cjepa::ImaginedTrajectory& traj = trajs.front();

        int tstar;
        if (rule == SlotRule::end_of_horizon) {
            tstar = cfg.lookahead - cfg.kappa + 1;
        } else {
            std::vector<double> rho_hat(static_cast<size_t>(cfg.lookahead), 0.0);
            if (have_anchor) {
                std::vector<const LatentState*> lat;
                lat.reserve(traj.steps.size());
                for (const auto& step : traj.steps) lat.push_back(&step.latent);
                auto chat = stack.wjepa->rollout(c_anchor, lat);
                for (int t = 0; t < cfg.lookahead; ++t)
                    rho_hat[static_cast<size_t>(t)] = stack.power->predict_power(chat[static_cast<size_t>(t)]);
            }
            ScheduleDecision d = select_slot(rho_hat, cfg);
            tstar = d.slot;
            if (trace) *trace << "# horizon tstar=" << tstar << (d.outage ? " predicted-outage" : "") << "\n";
        }

        for (int s = 1; s <= cfg.lookahead && !done; ++s) {
            int a = traj.action_at(s - 1);
            auto r = env.step(a);
            acc.slots += 1;
            acc.rewards.push_back(r.reward);
            bool scheduled = s >= tstar && s < tstar + cfg.kappa;
            bool received = false;
            if (scheduled) {
                TxResult tx = transmit(env, field, radio, cfg, acc);
                received = tx.received;
                if (tx.received) {
                    latent = stack.wm->observe_step(latent, a, r.observation.frame.data(),
                                                    LatentMode::mode, nullptr);
                    c_anchor = stack.wjepa->encode_csi(tx.g);
                    have_anchor = true;
                } else {
                    latent = stack.wm->imagine_step(latent, a, LatentMode::mode, nullptr);
                }
            } else {
                latent = stack.wm->imagine_step(latent, a, LatentMode::mode, nullptr);
            }
            done = r.terminated;
            trace_slot(trace, env, a, r.reward, r.terminated, scheduled, received);
        }
    }
    return finish(env, acc);
}

} // namespace

EpisodeMetrics closed_loop_episode(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                   const chansim::ScattererField& field,
                                   const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                   uint64_t seed, std::ostream* trace) {
    return predictive_episode(stack, env, field, radio, cfg, seed, SlotRule::min_power, trace);
}

EpisodeMetrics baseline_power_agnostic(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                       const chansim::ScattererField& field,
                                       const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                       uint64_t seed) {
    return predictive_episode(stack, env, field, radio, cfg, seed, SlotRule::end_of_horizon, nullptr);
}

EpisodeMetrics baseline_no_prediction(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                      const chansim::ScattererField& field,
                                      const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                      uint64_t seed) {
    cfg.validate();
    env.reset(seed);
    Accounting acc;
    LatentState latent = stack.wm->initial_latent(LatentMode::mode, nullptr);
    bool done = false;
    while (!done) {
        int a = stack.agent->act(latent, agent::ActMode::greedy, nullptr).action;
        auto r = env.step(a);
        acc.slots += 1;
        acc.rewards.push_back(r.reward);
        TxResult tx = transmit(env, field, radio, cfg, acc);
        if (tx.received)
            latent = stack.wm->observe_step(latent, a, r.observation.frame.data(), LatentMode::mode,
                                            nullptr);
        else
            latent = stack.wm->imagine_step(latent, a, LatentMode::mode, nullptr);
        done = r.terminated;
    }
    return finish(env, acc);
}

EpisodeMetrics baseline_action_repeat(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                      const chansim::ScattererField& field,
                                      const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                      uint64_t seed) {
    cfg.validate();
    env.reset(seed);
    Accounting acc;
    LatentState latent = stack.wm->initial_latent(LatentMode::mode, nullptr);
    bool done = false;
    while (!done) {
        int a = stack.agent->act(latent, agent::ActMode::greedy, nullptr).action;
        for (int s = 1; s <= cfg.lookahead && !done; ++s) {
            auto r = env.step(a);
            acc.slots += 1;
            acc.rewards.push_back(r.reward);
            if (s == 1) {
                TxResult tx = transmit(env, field, radio, cfg, acc);
                if (tx.received)
                    latent = stack.wm->observe_step(latent, a, r.observation.frame.data(),
                                                    LatentMode::mode, nullptr);
            }
            done = r.terminated;
        }
    }
    return finish(env, acc);
}

EpisodeMetrics run_method(const std::string& method, const SchedulerStack& stack,
                          envsim::CarTrackEnv& env, const chansim::ScattererField& field,
                          const chansim::RadioSpec& radio, const SchedulerConfig& cfg, uint64_t seed) {
    if (method == "closed-loop") return closed_loop_episode(stack, env, field, radio, cfg, seed);
    if (method == "power-agnostic") return baseline_power_agnostic(stack, env, field, radio, cfg, seed);
    if (method == "no-prediction") return baseline_no_prediction(stack, env, field, radio, cfg, seed);
    if (method == "action-repeat") return baseline_action_repeat(stack, env, field, radio, cfg, seed);
    throw std::invalid_argument("unknown scheduling method " + method);
}

} // namespace latsched::sched
