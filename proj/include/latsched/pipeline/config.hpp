#pragma once

#include "latsched/agent/actor_critic.hpp"
#include "latsched/chansim/channel.hpp"
#include "latsched/cjepa/world_model.hpp"
#include "latsched/envsim/env.hpp"
#include "latsched/sched/power_predictor.hpp"
#include "latsched/sched/select.hpp"
#include "latsched/substrate/tensor.hpp"
#include "latsched/wjepa/wireless_model.hpp"

#include <ostream>
#include <string>

namespace latsched::pipeline {

namespace sb = latsched::substrate;

// Full run configuration. Every field has a default; presets override groups
// of them and a flat key/value config file overrides individual keys. The
// effective configuration is echoed into the output directory.
struct RunConfig {
    uint64_t seed = 7;
    sb::Precision precision = sb::Precision::f32;
    std::string out_dir = "out";

    int64_t env_steps = 2'000'000; // stage-2 collection budget
    int64_t seed_steps = 50'000;   // random-policy prefill
    int train_ratio = 20;          // environment steps per gradient step
    int64_t replay_capacity = 1'000'000;
    int imagination_starts = 0; // 0 = imagine from every posterior latent
    int agent_extra_steps = 0;  // imagination-only refinement after stage 2
    int metrics_every = 10;
    bool save_replay = false;

    int wireless_steps = 2000;
    int wireless_epoch_steps = 200; // learning-rate decay boundary
    int wireless_batch = 100;
    int power_steps = 3000;
    int power_batch = 512;

    uint64_t field_seed = 11;
    int field_scatterers = 8;
    double field_radius_lo = 35.0;
    double field_radius_hi = 60.0;

    int eval_seeds = 5;
    int eval_hs_lo = 2;
    int eval_hs_hi = 14;

    envsim::EnvSpec env;
    chansim::RadioSpec radio;
    cjepa::ControlJepaConfig cjepa;
    wjepa::WirelessJepaConfig wjepa;
    agent::AgentConfig agent;
    sched::PowerPredictorConfig power;
    sched::SchedulerConfig sched;

    std::string track_file; // optional waypoint file; empty = built-in circle

    void validate() const;
    // derived couplings (wireless widths from the control model, radio dims)
    void finalize();
};

// Appendix-scale defaults for desk runs.
RunConfig preset_paper();
// CI-scale preset: 32x32 frames, horizon 10, 8 antennas, 4 subcarriers,
// reduced latent sizes and a 50k-step budget, 64-bit numerics.
RunConfig preset_smoke();

RunConfig preset_by_name(const std::string& name);

// key = value lines with '#' comments; keys use section.name dotted paths.
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Echo of every key in config-file syntax.
void echo_config(const RunConfig& cfg, std::ostream& out);

} // namespace latsched::pipeline
