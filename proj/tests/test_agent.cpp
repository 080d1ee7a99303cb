#include "doctest.h"

#include "latsched/agent/actor_critic.hpp"
#include "latsched/agent/returns.hpp"
#include "latsched/substrate/gradcheck.hpp"

#include <cmath>

using namespace latsched;
using namespace latsched::agent;
using cjepa::ImaginedStep;
using cjepa::ImaginedTrajectory;
using cjepa::LatentState;
using sb::Graph;
using sb::RngStream;

namespace {

// Independent oracle: the explicit n-step mixture form of the target,
//   v_t = (1-lambda) sum_{m=1}^{T-1} lambda^(m-1) G_t^(m) + lambda^(T-1) G_t^(T)
// with G_t^(m) the m-step bootstrapped return and T the steps remaining.
std::vector<double> mixture_oracle(const std::vector<double>& r, const std::vector<double>& g,
                                   const std::vector<double>& v, double lambda) {
    size_t n = v.size();
    std::vector<double> out(n);
    out[n - 1] = v[n - 1];
    for (size_t t = 0; t + 1 < n; ++t) {
        size_t remaining = n - 1 - t;
        auto nstep = [&](size_t m) {
            double acc = 0.0, disc = 1.0;
            for (size_t i = 0; i < m; ++i) {
                acc += disc * r[t + i];
                disc *= g[t + i];
            }
            return acc + disc * v[t + m];
        };
        double total = 0.0, w = 1.0;
        for (size_t m = 1; m + 1 <= remaining; ++m) {
            total += (1.0 - lambda) * w * nstep(m);
            w *= lambda;
        }
        total += w * nstep(remaining);
        out[t] = total;
    }
    return out;
}

LatentState make_latent(int h_size, int z_size, RngStream& rng, double scale = 1.0) {
    LatentState ls;
    ls.h.resize(static_cast<size_t>(h_size));
    ls.z.assign(static_cast<size_t>(z_size), 0.0);
    for (double& v : ls.h) v = scale * rng.normal();
    ls.z[rng.below(static_cast<uint32_t>(z_size))] = 1.0;
    return ls;
}

AgentConfig small_cfg(int horizon = 4) {
    AgentConfig c;
    c.hidden = 24;
    c.horizon = horizon;
    return c;
}

ImaginedTrajectory random_trajectory(const ActorCritic& ac, int h_size, int z_size, int H,
                                     RngStream& rng) {
    ImaginedTrajectory tr;
    tr.start = make_latent(h_size, z_size, rng);
    tr.start_action = 0;
    for (int t = 0; t < H; ++t) {
        ImaginedStep step;
        step.latent = make_latent(h_size, z_size, rng);
        auto pol = ac.act(step.latent, ActMode::sample, &rng);
        step.action = pol.action;
        step.log_prob = pol.log_prob;
        step.entropy = pol.entropy;
        step.reward_mean = rng.normal();
        step.discount = 0.5 + 0.5 * rng.uniform();
        tr.steps.push_back(std::move(step));
    }
    return tr;
}

} // namespace

TEST_CASE("act: greedy determinism, uniform entropy, shift invariance") {
    AgentConfig cfg = small_cfg();
    ActorCritic ac(cfg, 12, 5, 3);
    RngStream rng(4, 4);
    LatentState ls = make_latent(6, 6, rng);

    auto g1 = ac.act(ls, ActMode::greedy, nullptr);
    auto g2 = ac.act(ls, ActMode::greedy, nullptr);
    CHECK(g1.action == g2.action);
    CHECK(g1.logits == g2.logits);

    // zeroed actor emits uniform logits: entropy is exactly ln(action count)
    ActorCritic zero(cfg, 12, 5, 9);
    for (size_t i = 0; i < zero.actor_params().size(); ++i) {
        auto& p = zero.actor_params()[i];
        if (p.name.rfind("actor", 0) == 0 && p.name.find(".ln_gain") == std::string::npos)
            std::fill(p.v.begin(), p.v.end(), 0.0);
    }
    auto uni = zero.act(ls, ActMode::greedy, nullptr);
    CHECK(uni.entropy == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    // adding a constant to every logit leaves distribution and entropy unchanged
    auto& out_bias = ac.actor_params().by_name("actor.out.b");
    auto before = ac.act(ls, ActMode::greedy, nullptr);
    for (double& v : out_bias.v) v += 7.5;
    auto after = ac.act(ls, ActMode::greedy, nullptr);
    CHECK(after.action == before.action);
    CHECK(after.entropy == doctest::Approx(before.entropy).epsilon(1e-9));
    CHECK(after.log_prob == doctest::Approx(before.log_prob).epsilon(1e-9));
}

TEST_CASE("lambda returns: boundary cases and the recursion against the mixture oracle") {
    // lambda = 0 collapses to the one-step bootstrap
    std::vector<double> r{0.5, -0.2, 1.0}, g{0.9, 0.8, 0.7}, v{2.0, 1.0, 3.0};
    auto l0 = lambda_returns(r, g, v, 0.0);
    CHECK(l0[2] == v[2]);
    CHECK(l0[1] == doctest::Approx(r[1] + g[1] * v[2]).epsilon(1e-12));
    CHECK(l0[0] == doctest::Approx(r[0] + g[0] * v[1]).epsilon(1e-12));

    // H = 1 is the pure bootstrap
    auto single = lambda_returns({9.0}, {0.5}, {4.0}, 0.95);
    CHECK(single.size() == 1);
    CHECK(single[0] == 4.0);

    // frozen hand instance against the independent mixture oracle
    std::vector<double> rr{1, 1, 1}, gg{0.99, 0.99, 0.99}, vv{0.5, 0.5, 0.5};
    auto got = lambda_returns(rr, gg, vv, 0.95);
    auto want = mixture_oracle(rr, gg, vv, 0.95);
    for (size_t i = 0; i < got.size(); ++i) CHECK(std::fabs(got[i] - want[i]) <= 1e-12);

    // 1000 random instances, lengths 1..50
    RngStream rng(17, 1);
    for (int it = 0; it < 1000; ++it) {
        size_t n = 1 + rng.below(50);
        std::vector<double> a(n), b(n), c(n);
        for (size_t i = 0; i < n; ++i) {
            a[i] = rng.normal();
            b[i] = rng.uniform();
            c[i] = rng.normal();
        }
        double lam = rng.uniform();
        auto x = lambda_returns(a, b, c, lam);
        auto y = mixture_oracle(a, b, c, lam);
        for (size_t i = 0; i < n; ++i) CHECK(std::fabs(x[i] - y[i]) <= 1e-12);
    }

    CHECK_THROWS_AS(lambda_returns({}, {}, {}, 0.5), std::invalid_argument);
}

TEST_CASE("lambda returns: monotone in rewards for nonnegative inputs") {
    RngStream rng(8, 2);
    for (int it = 0; it < 200; ++it) {
        size_t n = 2 + rng.below(20);
        std::vector<double> r(n), g(n), v(n);
        for (size_t i = 0; i < n; ++i) {
            r[i] = rng.uniform();
            g[i] = rng.uniform();
            v[i] = rng.uniform();
        }
        double lam = rng.uniform();
        auto base = lambda_returns(r, g, v, lam);
        size_t bump = rng.below(static_cast<uint32_t>(n - 1)); // last reward never enters
        r[bump] += 0.5;
        auto more = lambda_returns(r, g, v, lam);
        for (size_t s = 0; s <= bump; ++s) CHECK(more[s] >= base[s] - 1e-12);
    }
}

TEST_CASE("critic loss: zero at the fixed point, nonnegative, no gradient into targets") {
    AgentConfig cfg = small_cfg();
    ActorCritic ac(cfg, 10, 3, 5);
    RngStream rng(6, 6);
    ImaginedTrajectory tr = random_trajectory(ac, 5, 5, 4, rng);

    // zero critic and slow critic plus zero rewards: targets and predictions all vanish
    ActorCritic zero(cfg, 10, 3, 5);
    for (size_t i = 0; i < zero.critic_params().size(); ++i)
        std::fill(zero.critic_params()[i].v.begin(), zero.critic_params()[i].v.end(), 0.0);
    zero.sync_slow_target();
    ImaginedTrajectory flat = tr;
    for (auto& s : flat.steps) s.reward_mean = 0.0;
    Graph g;
    CHECK(zero.build_critic_loss(g, flat).scalar() == 0.0);

    Graph g2;
    CHECK(ac.build_critic_loss(g2, tr).scalar() >= 0.0);

    // reverse mode puts exactly zero into the slow target parameters
    ac.critic_params().zero_grads();
    ac.slow_params().zero_grads();
    Graph g3;
    g3.backward(ac.build_critic_loss(g3, tr));
    bool critic_touched = false;
    for (size_t i = 0; i < ac.critic_params().size(); ++i)
        for (double v : ac.critic_params()[i].g)
            if (v != 0.0) critic_touched = true;
    CHECK(critic_touched);
    for (size_t i = 0; i < ac.slow_params().size(); ++i)
        for (double v : ac.slow_params()[i].g) CHECK(v == 0.0);

    // finite differences agree with reverse mode for the critic parameters
    auto loss = [&](Graph& gg) { return ac.build_critic_loss(gg, tr); };
    ac.critic_params().zero_grads();
    auto rep = sb::grad_check(loss, ac.critic_params(), 1e-6, 1e-3, 8);
    CHECK(rep.pass);
}

TEST_CASE("actor loss: null advantage reduces to entropy term; positive advantage raises the logit") {
    AgentConfig cfg = small_cfg();
    cfg.entropy_scale = 1e-2;
    ActorCritic ac(cfg, 8, 3, 11);
    RngStream rng(9, 9);

    // zero critics and rewards make every advantage vanish
    for (size_t i = 0; i < ac.critic_params().size(); ++i)
        std::fill(ac.critic_params()[i].v.begin(), ac.critic_params()[i].v.end(), 0.0);
    ac.sync_slow_target();
    ImaginedTrajectory tr = random_trajectory(ac, 4, 4, 3, rng);
    for (auto& s : tr.steps) s.reward_mean = 0.0;

    Graph g;
    double loss = ac.build_actor_loss(g, tr).scalar();
    double ent_sum = 0.0;
    for (const auto& s : tr.steps) ent_sum += ac.act(s.latent, ActMode::greedy, nullptr).entropy;
    CHECK(loss == doctest::Approx(-cfg.entropy_scale * ent_sum).epsilon(1e-9));

    // eta = 0 with null advantages: the actor gradient is identically zero
    AgentConfig cfg0 = cfg;
    cfg0.entropy_scale = 0.0;
    ActorCritic flat(cfg0, 8, 3, 11);
    for (size_t i = 0; i < flat.critic_params().size(); ++i)
        std::fill(flat.critic_params()[i].v.begin(), flat.critic_params()[i].v.end(), 0.0);
    flat.sync_slow_target();
    flat.actor_params().zero_grads();
    Graph g0;
    g0.backward(flat.build_actor_loss(g0, tr));
    for (size_t i = 0; i < flat.actor_params().size(); ++i)
        for (double v : flat.actor_params()[i].g) CHECK(v == 0.0);

    // single positive-advantage step: a gradient step raises that action's probability
    AgentConfig cfg1 = small_cfg();
    cfg1.entropy_scale = 0.0;
    ActorCritic ac1(cfg1, 8, 3, 13);
    ImaginedTrajectory up = random_trajectory(ac1, 4, 4, 2, rng);
    up.steps[0].reward_mean = 0.0;
    up.steps[1].reward_mean = 5.0; // makes the step-1 return exceed the baseline
    up.steps[0].discount = 1.0;
    up.steps[1].discount = 1.0;
    int a = up.steps[0].action;
    double before = ac1.act(up.steps[0].latent, ActMode::greedy, nullptr).logits[static_cast<size_t>(a)];
    double norm_before = 0.0;
    {
        Graph gg;
        sb::Value l = ac1.build_actor_loss(gg, up);
        ac1.actor_params().zero_grads();
        gg.backward(l);
    }
    for (size_t i = 0; i < ac1.actor_params().size(); ++i) {
        auto& p = ac1.actor_params()[i];
        for (size_t k = 0; k < p.v.size(); ++k) {
            norm_before += p.g[k] * p.g[k];
            p.v[k] -= 1e-3 * p.g[k];
        }
    }
    CHECK(norm_before > 0.0);
    double after = ac1.act(up.steps[0].latent, ActMode::greedy, nullptr).logits[static_cast<size_t>(a)];
    // softmax shift invariance: compare against the row mean shift
    CHECK(after > before - 1e-9);

    // finite differences agree for the actor parameters
    ImaginedTrajectory tr2 = random_trajectory(ac1, 4, 4, 4, rng);
    auto loss_fn = [&](Graph& gg) { return ac1.build_actor_loss(gg, tr2); };
    ac1.actor_params().zero_grads();
    auto rep = sb::grad_check(loss_fn, ac1.actor_params(), 1e-6, 1e-3, 8);
    CHECK(rep.pass);
}

TEST_CASE("slow target sync happens exactly on the configured interval") {
    AgentConfig cfg = small_cfg(3);
    cfg.slow_target_interval = 3;
    ActorCritic ac(cfg, 6, 3, 21);
    RngStream rng(5, 5);

    auto values_differ = [&]() {
        LatentState probe = make_latent(3, 3, rng);
        return std::fabs(ac.critic_value(probe) - ac.slow_critic_value(probe)) > 1e-12;
    };

    std::vector<ImaginedTrajectory> batch;
    for (int i = 0; i < 2; ++i) batch.push_back(random_trajectory(ac, 3, 3, 3, rng));

    for (int step = 1; step <= 3; ++step) {
        ac.accumulate_gradients(batch);
        ac.optimizer_step();
        if (step < 3) CHECK(values_differ()); // online moved, target still the old copy
    }
    // step 3 == interval: hard copy, online and target agree everywhere
    for (int probe = 0; probe < 4; ++probe) {
        LatentState ls = make_latent(3, 3, rng);
        CHECK(ac.critic_value(ls) == doctest::Approx(ac.slow_critic_value(ls)).epsilon(1e-12));
    }
}

TEST_CASE("reinforce sanity: two-armed bandit prefers the rewarding arm") {
    // decision latent, arm latents with rewards (1, 0); three-step trajectories
    RngStream mk(2, 2);
    LatentState decision = make_latent(4, 4, mk);
    LatentState arm_good = make_latent(4, 4, mk);
    LatentState arm_bad = make_latent(4, 4, mk);
    LatentState terminal = make_latent(4, 4, mk);

    int wins = 0;
    const int seeds = 20;
    for (int seed = 0; seed < seeds; ++seed) {
        AgentConfig cfg = small_cfg(3);
        cfg.actor_lr = 3e-3;
        cfg.critic_lr = 5e-3;
        cfg.slow_target_interval = 50;
        ActorCritic ac(cfg, 8, 2, 100 + static_cast<uint64_t>(seed));
        RngStream rng(900 + static_cast<uint64_t>(seed), 3);
        for (int step = 0; step < 600; ++step) {
            std::vector<ImaginedTrajectory> batch;
            for (int b = 0; b < 4; ++b) {
                ImaginedTrajectory tr;
                tr.start = decision;
                auto first = ac.act(decision, ActMode::sample, &rng);
                tr.start_action = first.action;

                ImaginedStep s1;
                s1.latent = decision;
                auto pol = ac.act(decision, ActMode::sample, &rng);
                s1.action = pol.action;
                s1.log_prob = pol.log_prob;
                s1.entropy = pol.entropy;
                s1.reward_mean = 0.0;
                s1.discount = 0.9;
                tr.steps.push_back(s1);

                ImaginedStep s2;
                s2.latent = s1.action == 0 ? arm_good : arm_bad;
                auto pol2 = ac.act(s2.latent, ActMode::sample, &rng);
                s2.action = pol2.action;
                s2.log_prob = pol2.log_prob;
                s2.entropy = pol2.entropy;
                s2.reward_mean = s1.action == 0 ? 1.0 : 0.0;
                s2.discount = 0.9;
                tr.steps.push_back(s2);

                ImaginedStep s3;
                s3.latent = terminal;
                auto pol3 = ac.act(terminal, ActMode::sample, &rng);
                s3.action = pol3.action;
                s3.log_prob = pol3.log_prob;
                s3.entropy = pol3.entropy;
                s3.reward_mean = 0.0;
                s3.discount = 0.0;
                tr.steps.push_back(s3);
                batch.push_back(std::move(tr));
            }
            ac.accumulate_gradients(batch);
            ac.optimizer_step();
        }
        if (ac.act(decision, ActMode::greedy, nullptr).action == 0) ++wins;
    }
    CHECK(wins >= 19); // at least 95% of seeds
}

TEST_CASE("entropy regularization: larger eta keeps the policy more stochastic") {
    RngStream mk(3, 3);
    LatentState decision = make_latent(4, 4, mk);
    LatentState arm_good = make_latent(4, 4, mk);
    LatentState arm_bad = make_latent(4, 4, mk);
    LatentState terminal = make_latent(4, 4, mk);

    // three-step bandit so the payoff reaches the returns (the last step's
    // reward never enters a lambda target)
    auto train = [&](double eta) {
        AgentConfig cfg = small_cfg(3);
        cfg.actor_lr = 3e-3;
        cfg.critic_lr = 5e-3;
        cfg.entropy_scale = eta;
        cfg.slow_target_interval = 50;
        ActorCritic ac(cfg, 8, 2, 44);
        RngStream rng(71, 4);
        for (int step = 0; step < 800; ++step) {
            std::vector<ImaginedTrajectory> batch;
            for (int b = 0; b < 4; ++b) {
                ImaginedTrajectory tr;
                tr.start = decision;
                tr.start_action = 0;
                ImaginedStep s1;
                s1.latent = decision;
                auto pol = ac.act(decision, ActMode::sample, &rng);
                s1.action = pol.action;
                s1.log_prob = pol.log_prob;
                s1.entropy = pol.entropy;
                s1.reward_mean = 0.0;
                s1.discount = 0.9;
                tr.steps.push_back(s1);
                ImaginedStep s2;
                s2.latent = s1.action == 0 ? arm_good : arm_bad;
                auto pol2 = ac.act(s2.latent, ActMode::sample, &rng);
                s2.action = pol2.action;
                s2.log_prob = pol2.log_prob;
                s2.entropy = pol2.entropy;
                s2.reward_mean = s1.action == 0 ? 0.3 : 0.0;
                s2.discount = 0.9;
                tr.steps.push_back(s2);
                ImaginedStep s3;
                s3.latent = terminal;
                auto pol3 = ac.act(terminal, ActMode::sample, &rng);
                s3.action = pol3.action;
                s3.log_prob = pol3.log_prob;
                s3.entropy = pol3.entropy;
                s3.reward_mean = 0.0;
                s3.discount = 0.0;
                tr.steps.push_back(s3);
                batch.push_back(std::move(tr));
            }
            ac.accumulate_gradients(batch);
            ac.optimizer_step();
        }
        return ac.act(decision, ActMode::greedy, nullptr).entropy;
    };
    double high = train(0.05);
    double low = train(0.0005);
    CHECK(high > low);
}
