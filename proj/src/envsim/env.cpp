#include "latsched/envsim/env.hpp"

#include "latsched/substrate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace latsched::envsim {

using substrate::hash_uniform;

CarTrackEnv::CarTrackEnv(EnvSpec spec) : spec_(std::move(spec)) {
    if (spec_.frame_size < 16) throw std::invalid_argument("frame size must be >= 16");
    if (spec_.action_count < 2) throw std::invalid_argument("action count must be >= 2");
    if (spec_.discount <= 0.0 || spec_.discount >= 1.0)
        throw std::invalid_argument("discount must lie in (0,1)");
}

std::pair<Observation, DeviceState> CarTrackEnv::reset(uint64_t seed) {
    seed_ = seed;
    state_ = DeviceState{};
    Vec2 start = spec_.track.start();
    state_.x = start.x;
    state_.y = start.y;
    state_.heading = spec_.track.start_heading();
    state_.speed = 0.0;
    state_.progress = 0.0;
    state_.step_index = 0;
    arc_unwrapped_ = spec_.track.project(state_.x, state_.y).arc;
    terminated_ = false;
    return {render_frame(state_), state_};
}

StepResult CarTrackEnv::step(int action) {
    if (terminated_) throw std::logic_error("step() called after termination; reset first");
    if (action < 0 || action >= spec_.action_count)
        throw std::invalid_argument("action index out of range");

    switch (action) {
        case kAccelerate: state_.speed += spec_.accel; break;
        case kBrake: state_.speed -= spec_.brake; break;
        case kSteerLeft: state_.heading += spec_.steer_delta; break;
        case kSteerRight: state_.heading -= spec_.steer_delta; break;
        default: break;
    }
    state_.speed *= (1.0 - spec_.friction);
    state_.speed = std::clamp(state_.speed, 0.0, spec_.v_max);
    state_.x += state_.speed * std::cos(state_.heading);
    state_.y += state_.speed * std::sin(state_.heading);
    state_.step_index += 1;

    Track::Projection proj = spec_.track.project(state_.x, state_.y);
    double ds = spec_.track.arc_delta(std::fmod(arc_unwrapped_, spec_.track.length()), proj.arc);
    arc_unwrapped_ += ds;

    double lap_fraction = arc_unwrapped_ / spec_.track.length();
    state_.progress = std::clamp(std::max(state_.progress, lap_fraction), 0.0, 1.0);

    // forward arc motion this tick; backward motion earns nothing rather than
    // a refundable debt, keeping the reward a function of consecutive poses
    double reward = spec_.progress_scale * std::max(0.0, ds) / spec_.track.length();
    if (proj.dist > spec_.half_width) reward -= spec_.off_center_penalty;

    if (proj.dist > spec_.off_margin) terminated_ = true;
    if (state_.progress >= 1.0) terminated_ = true;
    if (state_.step_index >= spec_.max_episode_len) terminated_ = true;

    return {render_frame(state_), reward, terminated_};
}

Observation CarTrackEnv::render_frame(const DeviceState& s) const {
    const int F = spec_.frame_size;
    Observation obs;
    obs.size = F;
    obs.frame.assign(static_cast<size_t>(F) * F, 0.0f);
    const double m_per_px = 2.0 * spec_.view_half_extent / F;
    const double nose_x = s.x + 1.2 * std::cos(s.heading);
    const double nose_y = s.y + 1.2 * std::sin(s.heading);
    // motion-blur tail: length scales with speed, so velocity is readable
    // from a single frame
    const double tail_len = 3.0 * s.speed;
    const double tail_x = s.x - (1.0 + tail_len) * std::cos(s.heading);
    const double tail_y = s.y - (1.0 + tail_len) * std::sin(s.heading);
    for (int py = 0; py < F; ++py) {
        for (int px = 0; px < F; ++px) {
            double wx = s.x + (px + 0.5 - F / 2.0) * m_per_px;
            double wy = s.y + (F / 2.0 - py - 0.5) * m_per_px;
            double v = 0.12;
            // static per-seed ground texture, 2 m cells
            auto cx = static_cast<int64_t>(std::floor(wx / 2.0));
            auto cy = static_cast<int64_t>(std::floor(wy / 2.0));
            if (hash_uniform(seed_, static_cast<uint64_t>(cx + (1 << 20)),
                             static_cast<uint64_t>(cy + (1 << 20)), 17) < 0.12)
                v = 0.22;
            if (spec_.track.fast_distance(wx, wy) <= spec_.half_width) v = 0.5;
            double ddx = wx - s.x, ddy = wy - s.y;
            double body = ddx * ddx + ddy * ddy;
            double nx = wx - nose_x, ny = wy - nose_y;
            double nose = nx * nx + ny * ny;
            if (tail_len > 0.05) {
                // distance from the tail segment between the car and tail end
                double sx = tail_x - s.x, sy = tail_y - s.y;
                double len2 = sx * sx + sy * sy;
                double tt = len2 > 0 ? std::clamp(((wx - s.x) * sx + (wy - s.y) * sy) / len2, 0.0, 1.0) : 0.0;
                double qx = wx - (s.x + tt * sx), qy = wy - (s.y + tt * sy);
                if (qx * qx + qy * qy <= 0.45 * 0.45) v = 0.75;
            }
            if (nose <= 0.45 * 0.45) v = 0.8;
            if (body <= 0.7 * 0.7) v = 1.0;
            obs.frame[static_cast<size_t>(py) * F + px] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    ++frames_rendered_;
    return obs;
}

double CarTrackEnv::normalized_return(const std::vector<double>& rewards) const {
    return envsim::normalized_return(rewards, max_episode_reward());
}

double normalized_return(const std::vector<double>& rewards, double max_achievable) {
    double sum = 0.0;
    for (double r : rewards) sum += r;
    return std::clamp(sum / max_achievable, 0.0, 1.0);
}

void write_trace_record(std::ostream& out, int step, int action, double reward, bool terminated,
                        double x, double y) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d %d %.17g %d %.17g %.17g\n", step, action, reward,
                  terminated ? 1 : 0, x, y);
    out << buf;
}

} // namespace latsched::envsim
