#include "latsched/pipeline/gradsuite.hpp"

#include "latsched/agent/actor_critic.hpp"
#include "latsched/chansim/channel.hpp"
#include "latsched/cjepa/world_model.hpp"
#include "latsched/envsim/env.hpp"
#include "latsched/sched/power_predictor.hpp"
#include "latsched/substrate/gradcheck.hpp"
#include "latsched/wjepa/wireless_model.hpp"

#include <cmath>
#include <cstdio>

namespace latsched::pipeline {

namespace sb = latsched::substrate;
using sb::Graph;
using sb::RngStream;
using sb::Tensor;
using sb::Value;

namespace {

cjepa::ControlJepaConfig small_wm_config() {
    cjepa::ControlJepaConfig c;
    c.frame_size = 32;
    c.image_feature = 48;
    c.recurrent = 32;
    c.gru_embed = 32;
    c.groups = 4;
    c.classes = 5;
    c.hidden = 48;
    c.head_hidden = 24;
    return c;
}

cjepa::ExperienceBatch env_batch(int batch, int length, uint64_t seed) {
    envsim::EnvSpec spec;
    spec.frame_size = 32;
    spec.max_episode_len = 60;
    envsim::CarTrackEnv env(spec);
    cjepa::ExperienceBatch out;
    out.batch = batch;
    out.length = length;
    out.frame_size = 32;
    size_t px = out.frame_pixels();
    out.frames.resize(static_cast<size_t>(batch) * length * px);
    out.prev_actions.assign(static_cast<size_t>(batch) * length, 0);
    out.rewards.assign(static_cast<size_t>(batch) * length, 0.0);
    out.discounts.assign(static_cast<size_t>(batch) * length, spec.discount);
    RngStream rng(seed, 1);
    for (int b = 0; b < batch; ++b) {
        auto [obs, st] = env.reset(seed + static_cast<uint64_t>(b));
        int prev = 0;
        double reward = 0.0;
        for (int t = 0; t < length; ++t) {
            size_t row = static_cast<size_t>(b) * length + t;
            std::copy(obs.frame.begin(), obs.frame.end(), out.frames.begin() + row * px);
            out.prev_actions[row] = prev;
            out.rewards[row] = reward;
            int a = static_cast<int>(rng.below(5));
            auto r = env.step(a);
            obs = r.observation;
            prev = a;
            reward = r.reward;
        }
    }
    return out;
}

struct WirelessFixture {
    wjepa::WirelessJepaConfig cfg;
    chansim::RadioSpec radio;
    chansim::ScattererField field;
    std::unique_ptr<wjepa::WirelessModel> model;

    WirelessFixture() {
        cfg.embedding = 6;
        cfg.predictor_recurrent = 16;
        cfg.antennas = 2;
        cfg.subcarriers = 2;
        cfg.control_recurrent = 8;
        cfg.control_z = 6;
        cfg.horizon = 3;
        radio.antennas = 2;
        radio.subcarriers = 2;
        radio.carrier_hz = 1.5e8;
        radio.array_positions = {{0.0, 40.0, 10.0}};
        field = chansim::ScattererField::make(5, 6, 30.0, 60.0, -300, 300, -300, 300);
        model = std::make_unique<wjepa::WirelessModel>(cfg, 23);
    }

    wjepa::WirelessBatch batch(int B, int T, uint64_t seed) const {
        wjepa::WirelessBatch b;
        b.batch = B;
        b.length = T;
        int W = cfg.channel_width();
        b.channels.resize(static_cast<size_t>(B) * (T + 1) * W);
        b.cond_h.resize(static_cast<size_t>(B) * T * cfg.control_recurrent);
        b.cond_z.resize(static_cast<size_t>(B) * T * cfg.control_z);
        RngStream rng(seed, 2);
        for (int e = 0; e < B; ++e) {
            double x0 = rng.uniform(-40.0, 20.0), vx = rng.uniform(0.5, 1.0);
            for (int t = 0; t <= T; ++t) {
                auto flat = wjepa::flatten_channel(
                    chansim::channel_at(x0 + vx * t, -20.0, t, field, radio));
                std::copy(flat.begin(), flat.end(),
                          b.channels.begin() + (static_cast<size_t>(e) * (T + 1) + t) * W);
            }
            for (int t = 1; t <= T; ++t) {
                double x = x0 + vx * t;
                std::vector<double> h = {x / 50.0, vx, x / 50.0 + vx, 1.0, 0.5 * vx, x / 25.0, 0.1, -0.3};
                std::copy(h.begin(), h.end(),
                          b.cond_h.begin() + (static_cast<size_t>(e) * T + (t - 1)) * cfg.control_recurrent);
                size_t zoff = (static_cast<size_t>(e) * T + (t - 1)) * cfg.control_z;
                b.cond_z[zoff + (vx > 0.75 ? 0 : 1)] = 1.0;
            }
        }
        return b;
    }
};

cjepa::ImaginedTrajectory synthetic_trajectory(const agent::ActorCritic& ac, int h_size, int z_size,
                                               int H, RngStream& rng) {
    cjepa::ImaginedTrajectory tr;
    auto mk = [&]() {
        cjepa::LatentState ls;
        ls.h.resize(static_cast<size_t>(h_size));
        ls.z.assign(static_cast<size_t>(z_size), 0.0);
        for (double& v : ls.h) v = rng.normal();
        ls.z[rng.below(static_cast<uint32_t>(z_size))] = 1.0;
        return ls;
    };
    tr.start = mk();
    tr.start_action = 0;
    for (int t = 0; t < H; ++t) {
        cjepa::ImaginedStep step;
        step.latent = mk();
        auto pol = ac.act(step.latent, agent::ActMode::sample, &rng);
        step.action = pol.action;
        step.log_prob = pol.log_prob;
        step.entropy = pol.entropy;
        step.reward_mean = rng.normal();
        step.discount = 0.5 + 0.5 * rng.uniform();
        tr.steps.push_back(std::move(step));
    }
    return tr;
}

bool report(std::ostream& out, const char* name, bool pass, double value, const char* what) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[%s] %-28s %s = %.3e\n", pass ? "ok" : "FAIL", name, what, value);
    out << buf;
    return pass;
}

} // namespace

bool run_gradient_suite(std::ostream& out) {
    bool all = true;

    // world-model loss (smooth verification path: soft latents, plain KL)
    {
        cjepa::WorldModel wm(small_wm_config(), 33);
        cjepa::ExperienceBatch batch = env_batch(2, 2, 9);
        auto loss = [&](Graph& g) {
            RngStream rng = sb::derive_stream(13, "gradsuite.wm");
            return wm.build_loss(g, batch, rng, cjepa::LatentMode::soft, nullptr, true).total;
        };
        auto rep = sb::grad_check(loss, wm.params(), 1e-6, 1e-3, 6);
        all &= report(out, "world-model loss", rep.pass, rep.max_rel_err, "max_rel_err");
    }

    // KL-balance split: balanced gradients equal (1-mu)/mu times the plain
    // gradients, and the plain KL itself passes finite differences
    {
        RngStream rng(12, 3);
        Tensor q(3, 8), p(3, 8);
        for (double& v : q.v) v = rng.normal();
        for (double& v : p.v) v = rng.normal();
        auto grads = [&](double mu) {
            Graph g;
            Value qv = g.input_grad(q);
            Value pv = g.input_grad(p);
            Value kl = mu < 0.0 ? g.kl_groups(qv, pv, 2, 4) : cjepa::kl_balanced(g, qv, pv, mu, 2, 4);
            g.backward(g.sum_all(kl));
            return std::make_pair(g.grad_of(qv), g.grad_of(pv));
        };
        auto [dq_plain, dp_plain] = grads(-1.0);
        auto [dq, dp] = grads(0.8);
        double worst = 0.0;
        for (size_t i = 0; i < dq.size(); ++i) {
            worst = std::max(worst, std::fabs(dq[i] - 0.2 * dq_plain[i]));
            worst = std::max(worst, std::fabs(dp[i] - 0.8 * dp_plain[i]));
        }
        all &= report(out, "KL-balance split (mu=0.8)", worst <= 1e-9, worst, "max_abs_dev");

        sb::ParameterSet ps;
        sb::Parameter& qp = ps.add("q", 3, 8);
        sb::Parameter& pp = ps.add("p", 3, 8);
        qp.v = q.v;
        pp.v = p.v;
        auto loss = [&](Graph& g) { return g.sum_all(g.kl_groups(g.param(qp), g.param(pp), 2, 4)); };
        auto rep = sb::grad_check(loss, ps, 1e-6, 1e-3, 12);
        all &= report(out, "plain KL", rep.pass, rep.max_rel_err, "max_rel_err");
    }

    // wireless loss on a 3-step instance
    {
        WirelessFixture fx;
        wjepa::WirelessBatch batch = fx.batch(2, 3, 13);
        auto loss = [&](Graph& g) { return fx.model->build_loss(g, batch, true); };
        auto rep = sb::grad_check(loss, fx.model->online_params(), 1e-6, 1e-3, 5);
        all &= report(out, "wireless loss", rep.pass, rep.max_rel_err, "max_rel_err");
    }

    // critic and actor losses on a frozen synthetic trajectory
    {
        agent::AgentConfig cfg;
        cfg.hidden = 24;
        cfg.horizon = 4;
        agent::ActorCritic ac(cfg, 10, 3, 5);
        RngStream rng(6, 6);
        cjepa::ImaginedTrajectory tr = synthetic_trajectory(ac, 5, 5, 4, rng);
        auto closs = [&](Graph& g) { return ac.build_critic_loss(g, tr); };
        auto crep = sb::grad_check(closs, ac.critic_params(), 1e-6, 1e-3, 8);
        all &= report(out, "critic loss", crep.pass, crep.max_rel_err, "max_rel_err");
        auto aloss = [&](Graph& g) { return ac.build_actor_loss(g, tr); };
        auto arep = sb::grad_check(aloss, ac.actor_params(), 1e-6, 1e-3, 8);
        all &= report(out, "actor loss", arep.pass, arep.max_rel_err, "max_rel_err");
    }

    // power loss on 4 samples
    {
        sched::PowerPredictorConfig cfg;
        cfg.embedding = 4;
        cfg.hidden = 10;
        sched::PowerPredictor pp(cfg, 9);
        RngStream rng(5, 5);
        std::vector<std::vector<double>> embs;
        std::vector<double> targets;
        for (int i = 0; i < 4; ++i) {
            std::vector<double> e(4);
            for (double& v : e) v = rng.normal();
            embs.push_back(e);
            targets.push_back(rng.uniform(0.2e-4, 1.5e-4));
        }
        auto loss = [&](Graph& g) { return pp.build_loss(g, embs, targets); };
        auto rep = sb::grad_check(loss, pp.params(), 1e-6, 1e-3, 8);
        all &= report(out, "power loss", rep.pass, rep.max_rel_err, "max_rel_err");
    }
    return all;
}

bool run_freeze_suite(std::ostream& out) {
    bool all = true;

    // EMA target weights receive exactly zero gradient from the wireless loss
    {
        WirelessFixture fx;
        wjepa::WirelessBatch batch = fx.batch(3, 2, 7);
        fx.model->online_params().zero_grads();
        fx.model->target_params().zero_grads();
        Graph g;
        g.backward(fx.model->build_loss(g, batch, true));
        double target_norm = 0.0, online_norm = 0.0;
        for (size_t i = 0; i < fx.model->target_params().size(); ++i)
            for (double v : fx.model->target_params()[i].g) target_norm += std::fabs(v);
        for (size_t i = 0; i < fx.model->online_params().size(); ++i)
            for (double v : fx.model->online_params()[i].g) online_norm += std::fabs(v);
        all &= report(out, "EMA target zero-grad", target_norm == 0.0 && online_norm > 0.0,
                      target_norm, "abs_grad_sum");
    }

    // stop-gradient target path: parameters feeding only sg(...) stay at zero
    {
        RngStream rng(8, 1);
        sb::ParameterSet online, target_path;
        sb::Dense pred(online, "pred", 6, 1, rng);
        sb::Dense tgt(target_path, "tgt", 6, 1, rng);
        Tensor x(5, 6);
        for (double& v : x.v) v = rng.normal();
        online.zero_grads();
        target_path.zero_grads();
        Graph g;
        Value xp = g.constant(x);
        Value err = g.sub(pred(g, xp), g.stop_gradient(tgt(g, xp)));
        g.backward(g.mean_all(g.square(err)));
        double tnorm = 0.0, pnorm = 0.0;
        for (size_t i = 0; i < target_path.size(); ++i)
            for (double v : target_path[i].g) tnorm += std::fabs(v);
        for (size_t i = 0; i < online.size(); ++i)
            for (double v : online[i].g) pnorm += std::fabs(v);
        all &= report(out, "sg(target) zero-grad", tnorm == 0.0 && pnorm > 0.0, tnorm, "abs_grad_sum");
    }

    // frozen control weights under the wireless loss: conditioning latents
    // enter as data, so the control parameter set never accumulates anything
    {
        cjepa::WorldModel wm(small_wm_config(), 3);
        wm.params().zero_grads();
        WirelessFixture fx;
        wjepa::WirelessBatch batch = fx.batch(2, 2, 5);
        Graph g;
        g.backward(fx.model->build_loss(g, batch, true));
        double norm = 0.0;
        for (size_t i = 0; i < wm.params().size(); ++i)
            for (double v : wm.params()[i].g) norm += std::fabs(v);
        all &= report(out, "frozen control weights", norm == 0.0, norm, "abs_grad_sum");
    }

    // frozen wireless weights under the power loss
    {
        WirelessFixture fx;
        fx.model->online_params().zero_grads();
        sched::PowerPredictorConfig pcfg;
        pcfg.embedding = fx.cfg.embedding;
        pcfg.hidden = 10;
        sched::PowerPredictor pp(pcfg, 4);
        RngStream rng(2, 2);
        std::vector<std::vector<double>> embs;
        std::vector<double> targets;
        for (int i = 0; i < 4; ++i) {
            auto snap = chansim::channel_at(rng.uniform(-30, 30), -20.0, i, fx.field, fx.radio);
            embs.push_back(fx.model->encode_csi(snap).c); // eval forward, no tape
            targets.push_back(chansim::required_power(snap, fx.radio.snr_threshold, fx.radio.noise_power_w));
        }
        pp.params().zero_grads();
        Graph g;
        g.backward(pp.build_loss(g, embs, targets));
        double wnorm = 0.0, pnorm = 0.0;
        for (size_t i = 0; i < fx.model->online_params().size(); ++i)
            for (double v : fx.model->online_params()[i].g) wnorm += std::fabs(v);
        for (size_t i = 0; i < pp.params().size(); ++i)
            for (double v : pp.params()[i].g) pnorm += std::fabs(v);
        all &= report(out, "frozen wireless weights", wnorm == 0.0 && pnorm > 0.0, wnorm, "abs_grad_sum");
    }
    return all;
}

} // namespace latsched::pipeline
