#pragma once

#include "latsched/cjepa/world_model.hpp"
#include "latsched/substrate/adam.hpp"
#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/nn.hpp"

#include <vector>

namespace latsched::agent {

namespace sb = latsched::substrate;

struct AgentConfig {
    double actor_lr = 4e-5;
    double critic_lr = 1e-4;
    double lambda = 0.95;
    double entropy_scale = 1e-3; // eta
    int slow_target_interval = 1500;
    int horizon = 50; // imagination horizon H
    int hidden = 100;

    void validate() const;
};

enum class ActMode { sample, greedy };

struct PolicyOutput {
    std::vector<double> logits;
    int action = 0;
    double log_prob = 0.0;
    double entropy = 0.0;
};

struct AgentLosses {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double mean_entropy = 0.0;
    double mean_value = 0.0;
    double mean_return = 0.0;
};

// Imagination-trained actor and critic over the full model state (h, z),
// with a slow target critic supplying the bootstrap values inside the
// lambda-return targets.
class ActorCritic {
public:
    ActorCritic(const AgentConfig& cfg, int latent_size, int action_count, uint64_t seed);

    const AgentConfig& config() const { return cfg_; }
    sb::ParameterSet& actor_params() { return actor_params_; }
    sb::ParameterSet& critic_params() { return critic_params_; }
    sb::ParameterSet& slow_params() { return slow_params_; }

    PolicyOutput act(const cjepa::LatentState& latent, ActMode mode, sb::RngStream* rng) const;
    double critic_value(const cjepa::LatentState& latent) const;
    double slow_critic_value(const cjepa::LatentState& latent) const;

    // Policy callback for latent imagination.
    cjepa::BatchPolicy sampling_policy(sb::RngStream& rng) const;
    cjepa::BatchPolicy greedy_policy() const;

    // graph builders
    sb::Value policy_logits(sb::Graph& g, sb::Value latents) const;
    sb::Value critic_values(sb::Graph& g, sb::Value latents) const;
    sb::Value slow_values(sb::Graph& g, sb::Value latents) const;

    // Builds the reinforce + entropy actor loss and the lambda-return critic
    // regression from imagined trajectories, accumulating gradients into the
    // actor and critic parameter sets. Targets and advantages enter as
    // constants: nothing propagates into the world model or the return path.
    AgentLosses accumulate_gradients(const std::vector<cjepa::ImaginedTrajectory>& trajectories,
                                     sb::Precision prec = sb::Precision::f64);

    // Adam updates plus the hard slow-target sync every
    // slow_target_interval critic steps.
    void optimizer_step(sb::Precision prec = sb::Precision::f64);
    int64_t gradient_steps() const { return gradient_steps_; }
    void sync_slow_target();

    // Losses for a single trajectory without touching optimizer state (used
    // by gradient checks; trajectory data stays frozen).
    sb::Value build_critic_loss(sb::Graph& g, const cjepa::ImaginedTrajectory& traj) const;
    sb::Value build_actor_loss(sb::Graph& g, const cjepa::ImaginedTrajectory& traj) const;

private:
    struct Head {
        sb::Dense fc[3];
        sb::LayerNorm ln[3];
        sb::Dense out;
    };
    Head make_head(sb::ParameterSet& ps, const std::string& prefix, int out_width, sb::RngStream& rng) const;
    sb::Value run_head(const Head& head, sb::Graph& g, sb::Value x) const;
    sb::Value latent_matrix(sb::Graph& g, const std::vector<const cjepa::LatentState*>& latents) const;

    AgentConfig cfg_;
    int latent_size_ = 0;
    int action_count_ = 0;
    sb::ParameterSet actor_params_, critic_params_, slow_params_;
    Head actor_, critic_, slow_;
    sb::Adam actor_opt_, critic_opt_;
    int64_t gradient_steps_ = 0;
};

} // namespace latsched::agent
