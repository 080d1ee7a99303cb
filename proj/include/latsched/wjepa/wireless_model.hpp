#pragma once

#include "latsched/chansim/channel.hpp"
#include "latsched/cjepa/world_model.hpp"
#include "latsched/substrate/graph.hpp"
#include "latsched/substrate/nn.hpp"

#include <vector>

namespace latsched::wjepa {

namespace sb = latsched::substrate;

struct WirelessJepaConfig {
    int embedding = 16;
    int predictor_recurrent = 256; // |q|
    double learning_rate = 5e-3;
    double lr_decay = 0.97; // applied per training epoch
    int batch_size = 100;
    double ema_decay = 0.99;
    double weight_decay = 3e-3;
    int horizon = 50; // H shared with the control model

    int antennas = 40;
    int subcarriers = 16;
    int control_recurrent = 300; // conditioning widths from the control JEPA
    int control_z = 1024;

    int channel_width() const { return 2 * antennas * subcarriers; } // interleaved re/im
    void validate() const;
};

struct CsiEmbedding {
    enum class Source { encoder, ema_target, predicted };
    std::vector<double> c;
    Source source = Source::encoder;
};

struct PredictorState {
    std::vector<double> q;
};

// Aligned training sequences. channels holds length+1 snapshots per element
// (g_0 anchors the unroll); conditioning latents cover t = 1..length.
struct WirelessBatch {
    int batch = 0;
    int length = 0;
    std::vector<double> channels; // [batch*(length+1), channel_width]
    std::vector<double> cond_h;   // [batch*length, control_recurrent]
    std::vector<double> cond_z;   // [batch*length, control_z]
};

// Interleaved re/im flattening of a channel snapshot, antenna-major.
std::vector<double> flatten_channel(const chansim::ChannelSnapshot& snap);

// Channel encoder with an EMA target copy and a latent-conditioned recurrent
// predictor. The target network is evaluated from constant weights, so no
// gradient can reach it by construction.
class WirelessModel {
public:
    WirelessModel(const WirelessJepaConfig& cfg, uint64_t seed);

    const WirelessJepaConfig& config() const { return cfg_; }
    sb::ParameterSet& online_params() { return online_; }
    sb::ParameterSet& target_params() { return target_; }
    sb::BufferSet& online_buffers() { return online_bufs_; }
    // Weight-decay exemptions for normalization parameters.
    std::vector<bool> decay_mask() const;

    // graph builders; rows = batch of flattened channels
    sb::Value encode(sb::Graph& g, sb::Value flat, bool train) const;
    sb::Value target_encode(sb::Graph& g, sb::Value flat, bool train) const;
    // one predictor step: gru consumes (c_prev, h, z); the output head adds a
    // residual correction on top of c_prev
    sb::Value predict_step(sb::Graph& g, sb::Value c_prev, sb::Value q, sb::Value h, sb::Value z,
                           sb::Value* q_next) const;

    // Teacher-forced Eq.-style loss: predictor inputs are online embeddings
    // of the measured channels, targets come from the EMA encoder; summed
    // over t = 1..length, averaged across the batch.
    sb::Value build_loss(sb::Graph& g, const WirelessBatch& batch, bool train_mode) const;

    // target <- ema_decay * target + (1 - ema_decay) * online (weights and
    // running statistics alike).
    void ema_step();
    // hard copy used at initialization
    void sync_target();

    // ---- eval-mode single-shot helpers ----
    CsiEmbedding encode_csi(const chansim::ChannelSnapshot& g) const;
    CsiEmbedding target_encode_csi(const chansim::ChannelSnapshot& g) const;
    std::pair<CsiEmbedding, PredictorState> predict_next(const CsiEmbedding& c_prev,
                                                         const PredictorState& state,
                                                         const cjepa::LatentState& latent) const;
    // Autoregressive rollout from c_0 with a fresh predictor state; one
    // embedding per conditioning latent.
    std::vector<CsiEmbedding> rollout(const CsiEmbedding& c0,
                                      const std::vector<const cjepa::LatentState*>& latents) const;

private:
    sb::Value encode_with(sb::Graph& g, sb::Value flat, bool train, bool target_net) const;
    void ema_with(double decay);

    WirelessJepaConfig cfg_;
    sb::ParameterSet online_, target_;
    sb::BufferSet online_bufs_, target_bufs_;

    static constexpr int kLayers = 5;
    sb::Dense enc_fc_[kLayers], enc_out_;
    sb::BatchNorm enc_bn_[kLayers];
    sb::Dense tgt_fc_[kLayers], tgt_out_;
    sb::BatchNorm tgt_bn_[kLayers];

    sb::GruCell pred_gru_;
    sb::Dense pred_fc_, pred_out_;
};

} // namespace latsched::wjepa
