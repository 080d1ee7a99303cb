#pragma once

#include "latsched/agent/actor_critic.hpp"
#include "latsched/chansim/channel.hpp"
#include "latsched/cjepa/world_model.hpp"
#include "latsched/envsim/env.hpp"
#include "latsched/sched/power_predictor.hpp"
#include "latsched/sched/select.hpp"
#include "latsched/wjepa/wireless_model.hpp"

#include <ostream>
#include <string>

namespace latsched::sched {

struct EpisodeMetrics {
    double normalized_return = 0.0;
    double avg_power_w = 0.0; // mean over all slots of alpha_t * rho_t
    double total_power_w = 0.0;
    int64_t overhead_bits = 0; // scheduled slots * bits per frame
    int slots = 0;
    int transmissions = 0; // alpha_t = 1 slots, including failed decodes
    int receptions = 0;    // successfully decoded frames
    int outages = 0;       // transmissions clipped at the budget (sample lost)
};

struct SchedulerStack {
    const cjepa::WorldModel* wm = nullptr;
    const agent::ActorCritic* agent = nullptr;
    const wjepa::WirelessModel* wjepa = nullptr;
    const PowerPredictor* power = nullptr;
};

// Horizon-aligned closed loop. Each cycle spans exactly lookahead slots:
// imagine the horizon from the current latent, pick the kappa-slot
// transmission block, drive the env with the imagined actions, re-anchor the
// latents from the frames received inside the block. The episode opens with
// a mandatory kappa-slot anchor block (counted in overhead). Transmissions
// above the power budget are clipped and the sample is lost.
EpisodeMetrics closed_loop_episode(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                   const chansim::ScattererField& field,
                                   const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                   uint64_t seed, std::ostream* trace = nullptr);

// Same protocol with the block forced to the end of every horizon.
EpisodeMetrics baseline_power_agnostic(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                       const chansim::ScattererField& field,
                                       const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                       uint64_t seed);

// Transmit every slot; actions from posterior latents.
EpisodeMetrics baseline_no_prediction(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                      const chansim::ScattererField& field,
                                      const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                      uint64_t seed);

// One frame per horizon; the action computed at the anchor repeats for the
// remaining slots; no latent rollout in between.
EpisodeMetrics baseline_action_repeat(const SchedulerStack& stack, envsim::CarTrackEnv& env,
                                      const chansim::ScattererField& field,
                                      const chansim::RadioSpec& radio, const SchedulerConfig& cfg,
                                      uint64_t seed);

EpisodeMetrics run_method(const std::string& method, const SchedulerStack& stack,
                          envsim::CarTrackEnv& env, const chansim::ScattererField& field,
                          const chansim::RadioSpec& radio, const SchedulerConfig& cfg, uint64_t seed);

} // namespace latsched::sched
