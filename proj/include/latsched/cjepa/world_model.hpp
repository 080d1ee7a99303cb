#pragma once

#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/nn.hpp"
#include "latsched/substrate/rng.hpp"
#include "latsched/substrate/tensor.hpp"

#include <functional>
#include <vector>

namespace latsched::cjepa {

namespace sb = latsched::substrate;

struct ControlJepaConfig {
    int frame_size = 84;
    int action_count = 5;
    int image_feature = 400; // encoder output width
    int recurrent = 300;     // |h|
    int gru_embed = 300;     // width of the dense layer feeding the GRU
    int groups = 32;         // categoricals
    int classes = 32;        // classes per categorical
    int hidden = 400;        // posterior/prior hidden width
    int head_hidden = 100;   // reward/termination MLP width
    double kl_scale = 0.5;   // beta
    double kl_balance = 0.8; // mu
    double learning_rate = 2e-4;
    int batch_size = 32;
    int horizon = 50; // H, shared sequence/prediction horizon
    double clip_norm = 100.0;
    double discount = 0.99;

    int z_size() const { return groups * classes; }
    int latent_size() const { return recurrent + z_size(); }
    void validate() const;
};

// How the stochastic state is realized from logits.
//   sampled: straight-through one-hot draws (training default)
//   soft:    softmax probabilities (smooth path for gradient verification)
//   mode:    argmax one-hot (deterministic filtering in deployment)
enum class LatentMode { sampled, soft, mode };

struct LatentState {
    std::vector<double> h;        // [recurrent]
    std::vector<double> z;        // [groups*classes], one-hot rows (or soft)
    std::vector<double> z_logits; // optional diagnostics
};

struct HeadOutputs {
    double reward_mean = 0.0;
    double termination_prob = 0.0; // predicted discount in [0,1]
};

// Aligned sequences drawn from replay; index (b, t) = b*length + t.
// prev_actions[t] led to frames[t]; rewards[t] arrived with frames[t];
// discounts[t] is 0 at terminal steps and gamma otherwise.
struct ExperienceBatch {
    int batch = 0;
    int length = 0;
    int frame_size = 0;
    int action_count = 5;
    std::vector<float> frames;
    std::vector<int> prev_actions;
    std::vector<double> rewards;
    std::vector<double> discounts;

    size_t frame_pixels() const { return static_cast<size_t>(frame_size) * frame_size; }
};

struct WorldModelLossParts {
    sb::Value total;
    double kl = 0.0;       // per-(batch,step) means
    double reward_nll = 0.0;
    double termination_nll = 0.0;
};

struct PolicySample {
    int action = 0;
    double log_prob = 0.0;
    double entropy = 0.0;
};

struct ImaginedStep {
    LatentState latent;
    int action = 0; // sampled at this latent; drives the next transition
    double log_prob = 0.0;
    double entropy = 0.0;
    double reward_mean = 0.0;
    double discount = 0.0;
};

struct ImaginedTrajectory {
    LatentState start;
    int start_action = 0; // sampled at the start latent; drives the first step
    std::vector<ImaginedStep> steps;

    // Action applied at step index t (0-based): start_action for t = 0, then
    // the action sampled at imagined latent t.
    int action_at(int t) const { return t == 0 ? start_action : steps[static_cast<size_t>(t - 1)].action; }
};

// Batched policy: given S latents, return one sample per latent.
using BatchPolicy = std::function<std::vector<PolicySample>(const std::vector<LatentState>&)>;

// mu*KL(sg(q)||p) + (1-mu)*KL(q||sg(p)); forward value equals KL(q||p).
sb::Value kl_balanced(sb::Graph& g, sb::Value q_logits, sb::Value p_logits, double mu, int groups,
                      int classes);

// Image encoder + recurrent state-space core + reward/termination heads.
class WorldModel {
public:
    WorldModel(const ControlJepaConfig& cfg, uint64_t seed);

    const ControlJepaConfig& config() const { return cfg_; }
    sb::ParameterSet& params() { return params_; }
    const sb::ParameterSet& params() const { return params_; }
    sb::BufferSet& buffers() { return buffers_; }
    int64_t encoder_calls() const { return encoder_calls_; }

    // ---- graph builders (rows = batch) ----
    sb::Value encode(sb::Graph& g, sb::Value frames) const;
    sb::Value recurrent_step(sb::Graph& g, sb::Value h, sb::Value z, sb::Value action_onehot) const;
    sb::Value posterior_logits(sb::Graph& g, sb::Value h, sb::Value x, bool train) const;
    sb::Value prior_logits(sb::Graph& g, sb::Value h) const;
    // (reward mean [B,1], termination logit [B,1])
    std::pair<sb::Value, sb::Value> head_logits(sb::Graph& g, sb::Value h, sb::Value z) const;

    // ---- Eq.-style training loss over a batch of sequences ----
    // Unrolls posterior-driven latents, accumulating
    // beta*kl_balanced + reward NLL + termination NLL, summed over time and
    // averaged across the batch. posterior_out, when given, receives the
    // detached posterior latents (batch-major, then time).
    //
    // plain_kl selects the unbalanced KL term whose gradient equals the
    // derivative of the loss value, which is what a finite-difference oracle
    // can see; the stop-gradient split is verified separately against the
    // plain gradients. Training always uses the balanced term.
    WorldModelLossParts build_loss(sb::Graph& g, const ExperienceBatch& batch, sb::RngStream& rng,
                                   LatentMode z_mode, std::vector<LatentState>* posterior_out = nullptr,
                                   bool plain_kl = false) const;

    // ---- deterministic-by-stream inference helpers ----
    LatentState initial_latent(LatentMode mode, sb::RngStream* rng) const;
    LatentState observe_step(const LatentState& prev, int prev_action, const float* frame,
                             LatentMode mode, sb::RngStream* rng) const;
    std::vector<LatentState> observe_sequence(const std::vector<const float*>& frames,
                                              const std::vector<int>& prev_actions,
                                              const LatentState& initial, LatentMode mode,
                                              sb::RngStream* rng) const;
    // Prior-driven update for slots without a received frame.
    LatentState imagine_step(const LatentState& prev, int action, LatentMode mode,
                             sb::RngStream* rng) const;
    HeadOutputs predict_heads(const LatentState& latent) const;

    // Latent-only rollout with a policy; never touches the image encoder.
    std::vector<ImaginedTrajectory> imagine(const std::vector<LatentState>& starts,
                                            const BatchPolicy& policy, int horizon,
                                            sb::RngStream& rng) const;

private:
    sb::Value realize_z(sb::Graph& g, sb::Value logits, LatentMode mode, sb::RngStream* rng) const;
    sb::Value onehot_actions(sb::Graph& g, const int* actions, int count) const;

    ControlJepaConfig cfg_;
    sb::ParameterSet params_;
    sb::BufferSet buffers_;

    sb::Conv2d conv1_, conv2_, conv3_;
    sb::LayerNorm conv1_ln_, conv2_ln_, conv3_ln_;
    sb::Dense enc_fc1_, enc_fc2_, enc_fc3_;
    sb::LayerNorm enc_ln1_, enc_ln2_, enc_ln3_;

    sb::Dense gru_in_;
    sb::LayerNorm gru_in_ln_;
    sb::GruCell gru_;

    sb::Dense post_fc_, post_out_;
    sb::BatchNorm post_bn_;
    sb::Dense prior_fc_, prior_out_;
    sb::LayerNorm prior_ln_;

    sb::Dense rew_fc_[3], rew_out_;
    sb::LayerNorm rew_ln_[3];
    sb::Dense term_fc_[3], term_out_;
    sb::LayerNorm term_ln_[3];

    mutable int64_t encoder_calls_ = 0;
};

} // namespace latsched::cjepa
