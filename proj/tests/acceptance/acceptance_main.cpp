// Acceptance suite: one pass/fail line per criterion, exit code zero only
// when every criterion holds. Criteria 7-10 share two full smoke training
// runs (the determinism pair); the remaining criteria run on small fixtures.
//
// Invocation:
//   acceptance            all criteria (runs smoke training twice)
//   acceptance --fast     criteria 1-6 only

#include "latsched/agent/actor_critic.hpp"
#include "latsched/agent/returns.hpp"
#include "latsched/chansim/channel.hpp"
#include "latsched/cjepa/world_model.hpp"
#include "latsched/envsim/env.hpp"
#include "latsched/pipeline/evaluate.hpp"
#include "latsched/pipeline/gradsuite.hpp"
#include "latsched/pipeline/metrics.hpp"
#include "latsched/pipeline/trainer.hpp"
#include "latsched/sched/closed_loop.hpp"
#include "latsched/sched/select.hpp"
#include "latsched/substrate/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace latsched;
namespace sb = latsched::substrate;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double elapsed_s(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

// ---- criterion 1: lambda-return oracle equivalence -------------------------

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
        out[t] = total + w * nstep(remaining);
    }
    return out;
}

void criterion1() {
    auto t0 = Clock::now();
    sb::RngStream rng(2026, 1);
    double worst = 0.0;
    for (int it = 0; it < 1000; ++it) {
        size_t n = 1 + rng.below(50);
        std::vector<double> r(n), g(n), v(n);
        for (size_t i = 0; i < n; ++i) {
            r[i] = rng.normal();
            g[i] = rng.uniform();
            v[i] = rng.normal();
        }
        double lambda = rng.uniform();
        auto got = agent::lambda_returns(r, g, v, lambda);
        auto want = mixture_oracle(r, g, v, lambda);
        for (size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
    }
    double secs = elapsed_s(t0);
    verdict(1, worst <= 1e-12 && secs < 5.0,
            fmt("lambda-return vs mixture oracle, 1000 instances: max_abs_err %.2e (tol 1e-12), %.1f s",
                worst, secs));
}

// ---- criteria 2 and 3: gradient and freeze suites ---------------------------

void criterion2() {
    auto t0 = Clock::now();
    std::ostringstream log;
    bool ok = pipeline::run_gradient_suite(log);
    double secs = elapsed_s(t0);
    if (!ok) std::fputs(log.str().c_str(), stdout);
    verdict(2, ok && secs < 120.0,
            fmt("finite-difference suite (world model, KL split, wireless, critic, actor, power): %s, %.1f s",
                ok ? "all within 1e-3" : "failures", secs));
}

void criterion3() {
    auto t0 = Clock::now();
    std::ostringstream log;
    bool ok = pipeline::run_freeze_suite(log);
    double secs = elapsed_s(t0);
    if (!ok) std::fputs(log.str().c_str(), stdout);
    verdict(3, ok && secs < 60.0,
            fmt("stop-gradient/freeze contracts: %s, %.1f s", ok ? "exact zeros" : "violations", secs));
}

// ---- criterion 4: scheduler equivalence -------------------------------------

void criterion4() {
    auto t0 = Clock::now();
    sb::RngStream rng(2027, 2);
    int checked = 0, mismatches = 0;
    while (checked < 100000) {
        sched::SchedulerConfig cfg;
        cfg.lookahead = 2 + static_cast<int>(rng.below(13));
        cfg.kappa = 1 + static_cast<int>(rng.below(static_cast<uint32_t>(cfg.lookahead)));
        cfg.tau = static_cast<int>(rng.below(static_cast<uint32_t>(cfg.lookahead)));
        cfg.power_budget_w = rng.uniform(0.2, 1.2);
        std::vector<double> rho(static_cast<size_t>(cfg.lookahead));
        for (double& x : rho) x = rng.uniform(0.0, 1.5);
        if (rng.uniform() < 0.1) rho[rng.below(static_cast<uint32_t>(cfg.lookahead))] = rho[0];

        sched::ScheduleDecision got = sched::select_slot(rho, cfg);
        // exhaustive feasible-set search
        int first = cfg.tau + 1, last = cfg.lookahead - cfg.kappa + 1;
        int best = -1;
        for (int t = first; t <= last; ++t) {
            if (rho[static_cast<size_t>(t - 1)] > cfg.power_budget_w) continue;
            if (best < 0 || rho[static_cast<size_t>(t - 1)] < rho[static_cast<size_t>(best - 1)]) best = t;
        }
        bool outage = best < 0;
        if (outage) {
            int lo = first, hi = last >= first ? last : cfg.lookahead;
            best = lo;
            for (int t = lo; t <= hi; ++t)
                if (rho[static_cast<size_t>(t - 1)] < rho[static_cast<size_t>(best - 1)]) best = t;
        }
        if (got.slot != best || got.outage != outage) ++mismatches;
        ++checked;
    }
    double secs = elapsed_s(t0);
    verdict(4, mismatches == 0 && secs < 10.0,
            fmt("select_slot vs exhaustive search on 100000 instances: %d mismatches, %.1f s",
                mismatches, secs));
}

// ---- criterion 5: channel identities ----------------------------------------

void criterion5() {
    auto t0 = Clock::now();
    chansim::RadioSpec spec; // paper defaults: 40 antennas, 16 subcarriers, 2.14 GHz
    chansim::ScattererField field = chansim::ScattererField::make(77, 8, 35.0, 60.0, -300, 300, -300, 300);
    sb::RngStream rng(5, 5);
    double worst_rel = 0.0;
    for (int i = 0; i < 10000; ++i) {
        auto g = chansim::channel_at(rng.uniform(-40, 40), rng.uniform(-40, 40), i, field, spec);
        double rho = chansim::required_power(g, spec.snr_threshold, spec.noise_power_w);
        double achieved = chansim::snr(g, rho, spec.noise_power_w);
        worst_rel = std::max(worst_rel, std::fabs(achieved - spec.snr_threshold) / spec.snr_threshold);
    }

    double lambda = spec.wavelength();
    int wins = 0;
    for (int t = 0; t < 100; ++t) {
        chansim::ScattererField f = chansim::ScattererField::make(100 + static_cast<uint64_t>(t), 8,
                                                                  35.0, 60.0, -300, 300, -300, 300);
        sb::RngStream r2(55 + static_cast<uint64_t>(t), 3);
        double bx = r2.uniform(-20.0, 20.0), by = r2.uniform(-20.0, 20.0);
        double a1 = r2.uniform(0.0, 2 * M_PI), a2 = r2.uniform(0.0, 2 * M_PI);
        auto corr = [&](const chansim::ChannelSnapshot& a, const chansim::ChannelSnapshot& b) {
            std::complex<double> dot{0, 0};
            double na = 0, nb = 0;
            for (size_t i = 0; i < a.g.size(); ++i) {
                dot += a.g[i] * std::conj(b.g[i]);
                na += std::norm(a.g[i]);
                nb += std::norm(b.g[i]);
            }
            return std::abs(dot) / std::sqrt(na * nb);
        };
        auto base = chansim::channel_at(bx, by, 0, f, spec);
        double dn = lambda / 10.0, dfar = 12.0 * lambda;
        auto near = chansim::channel_at(bx + dn * std::cos(a1), by + dn * std::sin(a1), 0, f, spec);
        auto far = chansim::channel_at(bx + dfar * std::cos(a2), by + dfar * std::sin(a2), 0, f, spec);
        if (corr(base, near) > corr(base, far)) ++wins;
    }
    double secs = elapsed_s(t0);
    verdict(5, worst_rel <= 1e-9 && wins >= 95 && secs < 30.0,
            fmt("snr round trip worst rel %.2e (tol 1e-9); correlation decay %d/100 (need 95); %.1f s",
                worst_rel, wins, secs));
}

// ---- criterion 6: KL-balance value invariance --------------------------------

void criterion6() {
    auto t0 = Clock::now();
    sb::RngStream rng(2028, 4);
    sb::Tensor q(4, 32 * 8), p(4, 32 * 8);
    for (double& v : q.v) v = rng.normal();
    for (double& v : p.v) v = rng.normal();
    double base = -1.0, worst = 0.0;
    for (double mu : {0.0, 0.5, 0.8, 1.0}) {
        sb::Graph g;
        sb::Value kl = cjepa::kl_balanced(g, g.constant(q), g.constant(p), mu, 8, 32);
        double v = g.sum_all(kl).scalar();
        if (base < 0)
            base = v;
        else
            worst = std::max(worst, std::fabs(v - base) / std::max(1.0, std::fabs(base)));
    }
    double secs = elapsed_s(t0);
    verdict(6, worst <= 1e-9 && secs < 5.0,
            fmt("KL-balance forward value over mu in {0, 0.5, 0.8, 1}: max rel dev %.2e (tol 1e-9), %.1f s",
                worst, secs));
}

// ---- criteria 7-10: smoke training, wireless rollouts, scheduling, determinism

struct SmokeRun {
    std::unique_ptr<pipeline::Trainer> trainer;
    double train_seconds = 0.0;
};

SmokeRun run_smoke(const std::string& out_dir) {
    pipeline::RunConfig cfg = pipeline::preset_smoke();
    cfg.seed = 7;
    cfg.out_dir = out_dir;
    auto t0 = Clock::now();
    SmokeRun run;
    run.trainer = std::make_unique<pipeline::Trainer>(cfg);
    run.trainer->train_all();
    run.train_seconds = elapsed_s(t0);
    return run;
}

double mean_return_random(const pipeline::RunConfig& cfg, int episodes) {
    envsim::CarTrackEnv env(cfg.env);
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        sb::RngStream rng(5000 + static_cast<uint64_t>(e), 9);
        env.reset(20'000 + static_cast<uint64_t>(e));
        std::vector<double> rewards;
        while (!env.terminated())
            rewards.push_back(env.step(static_cast<int>(rng.below(static_cast<uint32_t>(cfg.env.action_count)))).reward);
        total += env.normalized_return(rewards);
    }
    return total / episodes;
}

double mean_return_trained(pipeline::Trainer& trainer, int episodes) {
    const pipeline::RunConfig& cfg = trainer.config();
    envsim::CarTrackEnv env(cfg.env);
    sched::SchedulerConfig sc = cfg.sched;
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        auto m = sched::baseline_no_prediction(trainer.stack(), env, trainer.field(), cfg.radio, sc,
                                               20'000 + static_cast<uint64_t>(e));
        total += m.normalized_return;
    }
    return total / episodes;
}

void criterion7(SmokeRun& run) {
    const auto rows = pipeline::read_metrics(run.trainer->train_metrics_path());
    // fields: step env_steps wm_loss ...
    // Baseline: mean loss over the first 1000 environment steps of stage 2.
    // The loss carries an irreducible floor of H*(0.5 ln 2pi) from the
    // unit-variance reward likelihood, so the early transient is the honest
    // reference for the 50% decrease.
    double seed_steps = static_cast<double>(run.trainer->config().seed_steps);
    double early = 0.0, late = 0.0;
    int early_n = 0, late_n = 0;
    double max_step = rows.empty() ? 0.0 : rows.back()[0];
    for (const auto& r : rows) {
        if (r[1] - seed_steps <= 1000.0) {
            early += r[2];
            ++early_n;
        }
        if (r[0] > 0.9 * max_step) {
            late += r[2];
            ++late_n;
        }
    }
    early /= std::max(1, early_n);
    late /= std::max(1, late_n);
    bool loss_ok = late <= 0.5 * early;

    double rnd = mean_return_random(run.trainer->config(), 20);
    double trained = mean_return_trained(*run.trainer, 20);
    bool return_ok = trained > 3.0 * rnd;

    bool time_ok = run.train_seconds <= 3600.0;
    verdict(7, loss_ok && return_ok && time_ok,
            fmt("smoke trend: wm loss 1k-avg %.3f -> final %.3f (need <= 50%%); return trained %.4f vs random %.4f (need > 3x); train %.0f s (cap 3600)",
                early, late, trained, rnd, run.train_seconds));
}

void criterion8(SmokeRun& run) {
    auto t0 = Clock::now();
    pipeline::Trainer& tr = *run.trainer;
    const pipeline::RunConfig& cfg = tr.config();
    envsim::CarTrackEnv env(cfg.env);
    int wins = 0, total = 0;
    uint64_t ep_seed = 31'000;
    while (total < 100) {
        // held-out greedy episode with full observations
        env.reset(ep_seed++);
        cjepa::LatentState latent = tr.world().initial_latent(cjepa::LatentMode::mode, nullptr);
        std::vector<cjepa::LatentState> latents;
        std::vector<chansim::ChannelSnapshot> snaps;
        bool done = false;
        while (!done) {
            int a = tr.actor_critic().act(latent, agent::ActMode::greedy, nullptr).action;
            auto r = env.step(a);
            const auto& st = env.state();
            snaps.push_back(chansim::channel_at(st.x, st.y, st.step_index, tr.field(), cfg.radio));
            latent = tr.world().observe_step(latent, a, r.observation.frame.data(),
                                             cjepa::LatentMode::mode, nullptr);
            latents.push_back(latent);
            done = r.terminated;
        }
        if (snaps.size() < 30) continue;
        // several disjoint 5-step windows per episode
        for (size_t start = 5; start + 5 < snaps.size() && total < 100; start += 29) {
            wjepa::CsiEmbedding c0 = tr.wireless().encode_csi(snaps[start]);
            std::vector<const cjepa::LatentState*> cond;
            for (int t = 1; t <= 5; ++t) cond.push_back(&latents[start + static_cast<size_t>(t)]);
            auto rolled = tr.wireless().rollout(c0, cond);
            wjepa::CsiEmbedding truth = tr.wireless().encode_csi(snaps[start + 5]);
            double em = 0.0, ep = 0.0;
            for (size_t k = 0; k < truth.c.size(); ++k) {
                double dm = rolled.back().c[k] - truth.c[k];
                double dp = c0.c[k] - truth.c[k];
                em += dm * dm;
                ep += dp * dp;
            }
            if (em < ep) ++wins;
            ++total;
        }
    }
    double secs = elapsed_s(t0);
    verdict(8, wins >= 80 && secs < 300.0,
            fmt("wireless 5-step rollout beats persistence on %d/100 held-out windows (need 80), %.0f s",
                wins, secs));
}

void criterion9(SmokeRun& run) {
    auto t0 = Clock::now();
    pipeline::Trainer& tr = *run.trainer;
    const pipeline::RunConfig& cfg = tr.config();
    envsim::CarTrackEnv env(cfg.env);
    sched::SchedulerConfig sc = cfg.sched;
    sc.lookahead = 6;
    sc.kappa = 3;

    int power_wins = 0;
    double cl_ret = 0.0, np_ret = 0.0, cl_bits = 0.0, np_bits = 0.0, cl_pow = 0.0, pa_pow = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        uint64_t seed = 40'000 + static_cast<uint64_t>(s);
        auto cl = sched::closed_loop_episode(tr.stack(), env, tr.field(), cfg.radio, sc, seed);
        auto pa = sched::baseline_power_agnostic(tr.stack(), env, tr.field(), cfg.radio, sc, seed);
        auto np = sched::baseline_no_prediction(tr.stack(), env, tr.field(), cfg.radio, sc, seed);
        if (cl.avg_power_w < pa.avg_power_w) ++power_wins;
        cl_ret += cl.normalized_return / seeds;
        np_ret += np.normalized_return / seeds;
        cl_bits += static_cast<double>(cl.overhead_bits) / seeds;
        np_bits += static_cast<double>(np.overhead_bits) / seeds;
        cl_pow += cl.avg_power_w / seeds;
        pa_pow += pa.avg_power_w / seeds;
    }
    double overhead_ratio = cl_bits / np_bits;
    bool ok = power_wins >= 16 && std::fabs(cl_ret - np_ret) <= 0.15 && overhead_ratio <= 0.5;
    double secs = elapsed_s(t0);
    verdict(9, ok && secs < 900.0,
            fmt("H_s=6 kappa=3: power wins %d/20 (need 16), mean P %.3e vs agnostic %.3e W; return %.3f vs no-prediction %.3f (|d|<=0.15); overhead ratio %.3f (<=0.5); %.0f s",
                power_wins, cl_pow, pa_pow, cl_ret, np_ret, overhead_ratio, secs));
}

void criterion10(SmokeRun& run_a) {
    auto t0 = Clock::now();
    SmokeRun run_b = run_smoke("acceptance_run_b");
    bool all_equal = true;
    std::string first_diff;
    for (const char* f :
         {"train_metrics.txt", "wireless_metrics.txt", "power_metrics.txt", "config_echo.cfg",
          "wm.ckpt", "wm.ckpt.bin", "agent.ckpt", "agent.ckpt.bin", "wjepa.ckpt", "wjepa.ckpt.bin",
          "power.ckpt", "power.ckpt.bin"}) {
        std::ifstream a(run_a.trainer->config().out_dir + "/" + f, std::ios::binary);
        std::ifstream b(run_b.trainer->config().out_dir + "/" + f, std::ios::binary);
        std::ostringstream sa, sb2;
        sa << a.rdbuf();
        sb2 << b.rdbuf();
        if (sa.str() != sb2.str() || sa.str().empty()) {
            all_equal = false;
            if (first_diff.empty()) first_diff = f;
        }
    }
    double secs = elapsed_s(t0);
    verdict(10, all_equal,
            all_equal ? fmt("two seed-7 smoke runs bit-identical across metrics and checkpoints (second run %.0f s)", secs)
                      : fmt("runs differ at %s", first_diff.c_str()));
}

} // namespace

int main(int argc, char** argv) {
    bool fast = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--fast") == 0) fast = true;

    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();

    if (!fast) {
        std::printf("-- smoke training run A (seed 7, f64) --\n");
        std::fflush(stdout);
        SmokeRun run = run_smoke("acceptance_run_a");
        std::printf("-- run A finished in %.0f s --\n", run.train_seconds);
        criterion7(run);
        criterion8(run);
        criterion9(run);
        criterion10(run);
        std::filesystem::remove_all("acceptance_run_a");
        std::filesystem::remove_all("acceptance_run_b");
    } else {
        std::printf("[SKIP] criteria 7-10 (--fast)\n");
    }

    if (failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criterion(s) failed\n", failures);
    return 1;
}
