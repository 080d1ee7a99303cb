// Command-line entry point: staged training, closed-loop rollouts, the
// evaluation sweep, gradient verification and embedding dumps.

#include "CLI11.hpp"

#include "latsched/pipeline/evaluate.hpp"
#include "latsched/pipeline/gradsuite.hpp"
#include "latsched/pipeline/trainer.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

using namespace latsched;
using pipeline::RunConfig;
using pipeline::Trainer;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string preset = "paper";
    std::string out_dir;
    int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value overrides applied after the preset");
    cmd->add_option("--preset", args.preset, "smoke or paper")->check(CLI::IsMember({"smoke", "paper"}));
    cmd->add_option("--seed", args.seed, "root seed (fans out to named sub-streams)");
    cmd->add_option("--out", args.out_dir, "output directory");
}

RunConfig build_config(const CommonArgs& args) {
    RunConfig cfg = pipeline::preset_by_name(args.preset);
    if (!args.config_path.empty()) pipeline::apply_config_file(cfg, args.config_path);
    if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

void dump_embeddings(Trainer& trainer, const std::string& path) {
    const RunConfig& cfg = trainer.config();
    envsim::CarTrackEnv env(cfg.env);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "# slot x y";
    for (int i = 1; i <= cfg.wjepa.embedding; ++i) out << " c" << i;
    out << " source\n";

    auto emit = [&](int slot, double x, double y, const std::vector<double>& c, const char* tag) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%d %.6g %.6g", slot, x, y);
        out << buf;
        for (double v : c) {
            std::snprintf(buf, sizeof(buf), " %.8g", v);
            out << buf;
        }
        out << " " << tag << "\n";
    };

    // drive one fully observed episode, recording embeddings and latents
    env.reset(424242);
    cjepa::LatentState latent = trainer.world().initial_latent(cjepa::LatentMode::mode, nullptr);
    std::vector<cjepa::LatentState> latents;
    std::vector<wjepa::CsiEmbedding> encoded;
    std::vector<std::pair<double, double>> positions;
    bool done = false;
    while (!done) {
        int a = trainer.actor_critic().act(latent, agent::ActMode::greedy, nullptr).action;
        auto r = env.step(a);
        const auto& st = env.state();
        auto snap = chansim::channel_at(st.x, st.y, st.step_index, trainer.field(), cfg.radio);
        latent = trainer.world().observe_step(latent, a, r.observation.frame.data(),
                                              cjepa::LatentMode::mode, nullptr);
        latents.push_back(latent);
        encoded.push_back(trainer.wireless().encode_csi(snap));
        positions.emplace_back(st.x, st.y);
        emit(st.step_index, st.x, st.y, encoded.back().c, "encoder");
        done = r.terminated;
    }
    // predicted chains anchored every lookahead slots, conditioned on the
    // posterior latents of the slots they cover
    int hs = cfg.sched.lookahead;
    for (size_t k = 0; k + hs < latents.size(); k += static_cast<size_t>(hs)) {
        std::vector<const cjepa::LatentState*> cond;
        for (int t = 1; t <= hs; ++t) cond.push_back(&latents[k + static_cast<size_t>(t)]);
        auto chain = trainer.wireless().rollout(encoded[k], cond);
        for (int t = 1; t <= hs; ++t) {
            auto [x, y] = positions[k + static_cast<size_t>(t)];
            emit(static_cast<int>(k) + t + 1, x, y, chain[static_cast<size_t>(t - 1)].c, "predicted");
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-dynamics link scheduling toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    auto* train = app.add_subcommand("train", "all stages: collect+world-model+agent, wireless, power");
    auto* train_wm = app.add_subcommand("train-wm", "stages 1-2 only; saves wm/agent checkpoints and replay");
    auto* train_wjepa = app.add_subcommand("train-wjepa", "stage 3 from saved replay and checkpoints");
    auto* train_agent = app.add_subcommand("train-agent", "extra imagination-only agent training from saved replay");
    auto* train_power = app.add_subcommand("train-power", "stage 4 from saved replay and checkpoints");
    auto* rollout = app.add_subcommand("rollout", "one closed-loop episode with a verbose trace");
    auto* evaluate = app.add_subcommand("evaluate", "methods x lookahead x seeds sweep");
    auto* gradcheck = app.add_subcommand("grad-check", "finite-difference and freeze-contract suites");
    auto* dump = app.add_subcommand("dump-embeddings", "latent CSI embedding chart data");
    for (CLI::App* cmd : {train, train_wm, train_wjepa, train_agent, train_power, rollout, evaluate,
                          gradcheck, dump})
        add_common(cmd, args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gradcheck->parsed()) {
            bool ok = pipeline::run_gradient_suite(std::cout);
            ok &= pipeline::run_freeze_suite(std::cout);
            std::cout << (ok ? "gradient suite: all checks passed\n" : "gradient suite: FAILURES\n");
            return ok ? 0 : 1;
        }

        RunConfig cfg = build_config(args);

        if (train->parsed()) {
            Trainer trainer(cfg);
            trainer.train_all();
            std::cout << "training complete; artifacts in " << cfg.out_dir << "\n";
            return 0;
        }
        if (train_wm->parsed()) {
            cfg.save_replay = true;
            Trainer trainer(cfg);
            {
                std::ofstream echo(cfg.out_dir + "/config_echo.cfg");
                pipeline::echo_config(trainer.config(), echo);
            }
            trainer.stage_collect_train();
            trainer.save_world();
            trainer.save_agent();
            trainer.save_replay_file();
            std::cout << "world model + agent trained; replay saved\n";
            return 0;
        }
        if (train_wjepa->parsed()) {
            Trainer trainer(cfg);
            trainer.load_world();
            trainer.load_agent();
            trainer.load_replay_file();
            trainer.annotate_replay();
            trainer.stage_wireless();
            trainer.save_wireless();
            std::cout << "wireless model trained\n";
            return 0;
        }
        if (train_agent->parsed()) {
            Trainer trainer(cfg);
            trainer.load_world();
            trainer.load_agent();
            trainer.load_replay_file();
            int steps = static_cast<int>((cfg.env_steps - cfg.seed_steps) / cfg.train_ratio);
            trainer.stage_agent_offline(steps);
            trainer.save_agent();
            std::cout << "agent refined for " << steps << " imagination steps\n";
            return 0;
        }
        if (train_power->parsed()) {
            Trainer trainer(cfg);
            trainer.load_world();
            trainer.load_wireless();
            trainer.load_replay_file();
            trainer.stage_power();
            trainer.save_power();
            std::cout << "power predictor trained\n";
            return 0;
        }
        if (rollout->parsed()) {
            Trainer trainer(cfg);
            trainer.load_stack();
            envsim::CarTrackEnv env(cfg.env);
            std::ofstream trace(cfg.out_dir + "/trace.txt");
            auto m = sched::closed_loop_episode(trainer.stack(), env, trainer.field(), cfg.radio,
                                                cfg.sched, cfg.seed, &trace);
            std::printf("return %.4f avg_power %.3e W overhead %lld bits outages %d slots %d\n",
                        m.normalized_return, m.avg_power_w, static_cast<long long>(m.overhead_bits),
                        m.outages, m.slots);
            std::cout << "trace written to " << cfg.out_dir << "/trace.txt\n";
            return 0;
        }
        if (evaluate->parsed()) {
            Trainer trainer(cfg);
            trainer.load_stack();
            std::vector<int> lookaheads;
            for (int h = cfg.eval_hs_lo; h <= cfg.eval_hs_hi; ++h) lookaheads.push_back(h);
            std::vector<std::string> methods = {"closed-loop", "power-agnostic", "no-prediction",
                                                "action-repeat"};
            auto rows = pipeline::run_sweep(trainer.stack(), trainer.config(), trainer.field(),
                                            methods, lookaheads, cfg.eval_seeds);
            std::ofstream results(cfg.out_dir + "/results.txt");
            pipeline::write_results(rows, results);
            std::ofstream summary(cfg.out_dir + "/summary.txt");
            pipeline::write_summary(rows, summary);
            std::cout << rows.size() << " episodes; results in " << cfg.out_dir << "/results.txt\n";
            return 0;
        }
        if (dump->parsed()) {
            Trainer trainer(cfg);
            trainer.load_stack();
            dump_embeddings(trainer, cfg.out_dir + "/embeddings.txt");
            std::cout << "embeddings written to " << cfg.out_dir << "/embeddings.txt\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
