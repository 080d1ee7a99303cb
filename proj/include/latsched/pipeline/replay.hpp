#pragma once

#include "latsched/chansim/channel.hpp"
#include "latsched/cjepa/world_model.hpp"
#include "latsched/substrate/rng.hpp"

#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

namespace latsched::pipeline {

namespace sb = latsched::substrate;

// Raised by sample calls until enough experience has accumulated.
struct NotReady : std::runtime_error {
    NotReady() : std::runtime_error("replay: not enough experience for a batch yet") {}
};

struct ReplayStep {
    std::vector<float> frame;
    int prev_action = 0;    // action that led to this frame
    float reward = 0.0f;    // reward received with this frame
    float discount = 0.0f;  // 0 at terminal steps, gamma otherwise
    std::vector<float> channel; // interleaved re/im, antenna-major
    double required_power_w = 0.0;
    double pos_x = 0.0, pos_y = 0.0;
    // filled by latent annotation after world-model training
    std::vector<float> latent_h;
    std::vector<float> latent_z;
    // filled after wireless training (frozen online encoder, eval mode)
    std::vector<float> embedding;
};

struct ReplayEpisode {
    std::vector<ReplayStep> steps;
    bool complete = false;
};

// Ring of whole episodes capped at a step budget; eviction drops the oldest
// episode entirely. Sequence sampling is uniform over every valid window
// start and never crosses an episode boundary.
class ReplayBuffer {
public:
    explicit ReplayBuffer(int64_t capacity_steps) : capacity_(capacity_steps) {}

    void begin_episode();
    void push_step(ReplayStep step);
    void end_episode();

    int64_t total_steps() const { return total_steps_; }
    size_t episode_count() const { return episodes_.size(); }
    const ReplayEpisode& episode(size_t i) const { return episodes_[i]; }
    ReplayEpisode& episode(size_t i) { return episodes_[i]; }

    int64_t window_count(int length) const;
    // uniform (episode, start) over valid windows
    std::pair<size_t, int> sample_window(int length, sb::RngStream& rng) const;

    cjepa::ExperienceBatch sample_batch(int batch, int length, int frame_size, int action_count,
                                        sb::RngStream& rng) const;

    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    void evict();

    int64_t capacity_;
    int64_t total_steps_ = 0;
    std::deque<ReplayEpisode> episodes_;
    bool episode_open_ = false;
};

} // namespace latsched::pipeline
