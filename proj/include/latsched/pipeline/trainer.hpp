#pragma once

#include "latsched/pipeline/config.hpp"
#include "latsched/pipeline/metrics.hpp"
#include "latsched/pipeline/replay.hpp"
#include "latsched/sched/closed_loop.hpp"
#include "latsched/substrate/adam.hpp"

#include <memory>
#include <string>

namespace latsched::pipeline {

// Staged training orchestration:
//   1. seed the replay with random-policy steps
//   2. interleave collection with world-model + agent updates at the
//      configured train ratio
//   3. train the wireless model on stored channel/latent sequences with the
//      control weights frozen
//   4. train the power predictor on frozen wireless embeddings
// Checkpoints are emitted per stage; all sampling flows from named
// sub-streams of the root seed, so identical configs reproduce bit-identical
// artifacts in f64 mode.
class Trainer {
public:
    explicit Trainer(RunConfig cfg);

    void train_all();

    void stage_collect_train(); // stages 1 + 2
    void annotate_replay();     // posterior latents for every stored step
    void stage_wireless();      // stage 3
    void stage_agent_offline(int gradient_steps); // extra imagination-only agent training
    void stage_power();         // stage 4

    // artifact I/O (paths under cfg.out_dir)
    void save_world() const;
    void save_agent() const;
    void save_wireless() const;
    void save_power() const;
    void load_world();
    void load_agent();
    void load_wireless();
    void load_power();
    void load_stack(); // all four
    void save_replay_file() const;
    void load_replay_file();

    const RunConfig& config() const { return cfg_; }
    cjepa::WorldModel& world() { return *wm_; }
    agent::ActorCritic& actor_critic() { return *agent_; }
    wjepa::WirelessModel& wireless() { return *wjepa_; }
    sched::PowerPredictor& power() { return *power_; }
    ReplayBuffer& replay() { return replay_; }
    const chansim::ScattererField& field() const { return field_; }
    sched::SchedulerStack stack() const;

    int64_t gradient_steps() const { return gradient_steps_; }
    std::string train_metrics_path() const { return cfg_.out_dir + "/train_metrics.txt"; }
    std::string wireless_metrics_path() const { return cfg_.out_dir + "/wireless_metrics.txt"; }
    std::string power_metrics_path() const { return cfg_.out_dir + "/power_metrics.txt"; }

private:
    void begin_collect_episode();
    void gradient_update();
    std::vector<cjepa::LatentState> pick_starts(const std::vector<cjepa::LatentState>& posts);
    wjepa::WirelessBatch sample_wireless_batch(int batch, int length);
    void annotate_embeddings();

    RunConfig cfg_;
    chansim::ScattererField field_;
    std::unique_ptr<envsim::CarTrackEnv> env_;
    ReplayBuffer replay_;

    std::unique_ptr<cjepa::WorldModel> wm_;
    std::unique_ptr<agent::ActorCritic> agent_;
    std::unique_ptr<wjepa::WirelessModel> wjepa_;
    std::unique_ptr<sched::PowerPredictor> power_;

    sb::Adam wm_opt_;
    sb::Adam wjepa_opt_;
    sb::Adam power_opt_;

    sb::RngStream episode_seeds_;
    sb::RngStream action_rng_;
    sb::RngStream wm_sample_rng_;
    sb::RngStream wm_latent_rng_;
    sb::RngStream imag_pick_rng_;
    sb::RngStream imag_policy_rng_;
    sb::RngStream imag_prior_rng_;
    sb::RngStream wjepa_sample_rng_;
    sb::RngStream power_sample_rng_;

    cjepa::LatentState collect_latent_;
    int64_t env_steps_done_ = 0;
    int64_t gradient_steps_ = 0;

    std::unique_ptr<MetricsWriter> train_metrics_;
};

} // namespace latsched::pipeline
