#pragma once

#include "latsched/envsim/track.hpp"

#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

namespace latsched::envsim {

// Per step, given the chosen action, the update is (in this order):
//   accelerate: v += accel      brake: v -= brake
//   steer-left: heading += steer_delta    steer-right: heading -= steer_delta
//   v *= (1 - friction); v clamped to [0, v_max]
//   position += v * (cos heading, sin heading)
// Reward = progress_scale * (forward centerline arc covered this tick, as a
//          lap fraction; backward motion earns zero)
//          - off_center_penalty if the car sits beyond half_width from the
//            centerline after moving.
// Termination: centerline distance > off_margin, progress reaches 1 (lap
// complete), or the step cap.
struct EnvSpec {
    int frame_size = 84;
    int action_count = 5; // no-op, accelerate, brake, steer-left, steer-right
    int max_episode_len = 1000;
    double discount = 0.99;
    Track track = Track::circle(30.0, 72);

    double accel = 0.1;
    double brake = 0.2;
    double steer_delta = 0.12;
    double friction = 0.02;
    double v_max = 1.0;

    double half_width = 3.0;
    double off_margin = 4.5;
    double progress_scale = 1.0;
    double off_center_penalty = 0.01;

    double view_half_extent = 12.0; // meters from the car to the frame edge
};

enum Action : int {
    kNoop = 0,
    kAccelerate = 1,
    kBrake = 2,
    kSteerLeft = 3,
    kSteerRight = 4,
};

struct DeviceState {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;
    double speed = 0.0;
    double progress = 0.0; // high-water lap fraction, monotone within an episode
    int step_index = 0;
};

struct Observation {
    int size = 0;
    std::vector<float> frame; // size*size grayscale in [0,1]
};

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool terminated = false;
};

// Deterministic top-down car-on-track environment. One instance per caller;
// run independent instances in parallel for data collection.
class CarTrackEnv {
public:
    explicit CarTrackEnv(EnvSpec spec);

    std::pair<Observation, DeviceState> reset(uint64_t seed);
    StepResult step(int action);

    // Pure rasterization of a state under this env's seed texture.
    Observation render_frame(const DeviceState& state) const;

    const DeviceState& state() const { return state_; }
    const EnvSpec& spec() const { return spec_; }
    bool terminated() const { return terminated_; }
    uint64_t seed() const { return seed_; }

    double max_episode_reward() const { return spec_.progress_scale; }
    double normalized_return(const std::vector<double>& rewards) const;

    // Frames handed out since construction; lets protocol tests count reads.
    int64_t frames_rendered() const { return frames_rendered_; }

    // Per-step reward bounds implied by the constants above.
    double reward_min() const { return -spec_.off_center_penalty; }
    double reward_max() const { return spec_.progress_scale * spec_.v_max / spec_.track.length(); }

private:
    EnvSpec spec_;
    DeviceState state_;
    uint64_t seed_ = 0;
    bool terminated_ = true;
    double arc_unwrapped_ = 0.0; // continuous arc position in meters
    mutable int64_t frames_rendered_ = 0;
};

// sum(rewards) / max_achievable, clipped to [0, 1].
double normalized_return(const std::vector<double>& rewards, double max_achievable);

// One line per step: "step action reward terminated x y".
void write_trace_record(std::ostream& out, int step, int action, double reward, bool terminated,
                        double x, double y);

} // namespace latsched::envsim
