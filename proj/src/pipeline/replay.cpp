#include "latsched/pipeline/replay.hpp"

#include <fstream>

namespace latsched::pipeline {

void ReplayBuffer::begin_episode() {
    if (episode_open_) throw std::logic_error("replay: episode already open");
    episodes_.emplace_back();
    episode_open_ = true;
}

void ReplayBuffer::push_step(ReplayStep step) {
    if (!episode_open_) throw std::logic_error("replay: push_step outside an episode");
    episodes_.back().steps.push_back(std::move(step));
    ++total_steps_;
}

void ReplayBuffer::end_episode() {
    if (!episode_open_) throw std::logic_error("replay: end_episode without begin_episode");
    episodes_.back().complete = true;
    episode_open_ = false;
    evict();
}

void ReplayBuffer::evict() {
    // whole episodes only, oldest first; the open episode is never evicted
    while (total_steps_ > capacity_ && episodes_.size() > 1 && episodes_.front().complete) {
        total_steps_ -= static_cast<int64_t>(episodes_.front().steps.size());
        episodes_.pop_front();
    }
}

int64_t ReplayBuffer::window_count(int length) const {
    int64_t n = 0;
    for (const auto& ep : episodes_) {
        if (!ep.complete) continue;
        int64_t len = static_cast<int64_t>(ep.steps.size());
        if (len >= length) n += len - length + 1;
    }
    return n;
}

std::pair<size_t, int> ReplayBuffer::sample_window(int length, sb::RngStream& rng) const {
    int64_t total = window_count(length);
    if (total <= 0) throw NotReady();
    // uniform over valid start indices across complete episodes
    uint64_t pick = rng.next_u64() % static_cast<uint64_t>(total);
    for (size_t e = 0; e < episodes_.size(); ++e) {
        const auto& ep = episodes_[e];
        if (!ep.complete) continue;
        int64_t len = static_cast<int64_t>(ep.steps.size());
        if (len < length) continue;
        uint64_t count = static_cast<uint64_t>(len - length + 1);
        if (pick < count) return {e, static_cast<int>(pick)};
        pick -= count;
    }
    throw std::logic_error("replay: window bookkeeping out of sync");
}

cjepa::ExperienceBatch ReplayBuffer::sample_batch(int batch, int length, int frame_size,
                                                  int action_count, sb::RngStream& rng) const {
    cjepa::ExperienceBatch out;
    out.batch = batch;
    out.length = length;
    out.frame_size = frame_size;
    out.action_count = action_count;
    size_t px = out.frame_pixels();
    out.frames.resize(static_cast<size_t>(batch) * length * px);
    out.prev_actions.resize(static_cast<size_t>(batch) * length);
    out.rewards.resize(static_cast<size_t>(batch) * length);
    out.discounts.resize(static_cast<size_t>(batch) * length);
    for (int b = 0; b < batch; ++b) {
        auto [e, start] = sample_window(length, rng);
        const auto& ep = episodes_[e];
        for (int t = 0; t < length; ++t) {
            const ReplayStep& s = ep.steps[static_cast<size_t>(start + t)];
            size_t row = static_cast<size_t>(b) * length + t;
            if (s.frame.size() != px) throw std::logic_error("replay: frame size mismatch");
            std::copy(s.frame.begin(), s.frame.end(), out.frames.begin() + row * px);
            out.prev_actions[row] = s.prev_action;
            out.rewards[row] = static_cast<double>(s.reward);
            out.discounts[row] = static_cast<double>(s.discount);
        }
    }
    return out;
}

namespace {
template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
void write_floats(std::ofstream& out, const std::vector<float>& v) {
    uint64_t n = v.size();
    write_pod(out, n);
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
}
void read_floats(std::ifstream& in, std::vector<float>& v) {
    uint64_t n = 0;
    read_pod(in, n);
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
}
} // namespace

void ReplayBuffer::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write replay file " + path);
    out.write("LSRP1\n", 6);
    uint64_t n = episodes_.size();
    write_pod(out, n);
    for (const auto& ep : episodes_) {
        uint64_t len = ep.steps.size();
        write_pod(out, len);
        for (const auto& s : ep.steps) {
            write_floats(out, s.frame);
            int32_t a = s.prev_action;
            write_pod(out, a);
            write_pod(out, s.reward);
            write_pod(out, s.discount);
            write_floats(out, s.channel);
            write_pod(out, s.required_power_w);
            write_pod(out, s.pos_x);
            write_pod(out, s.pos_y);
        }
    }
    if (!out) throw std::runtime_error("short write to replay file " + path);
}

void ReplayBuffer::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open replay file " + path);
    char magic[6];
    in.read(magic, 6);
    if (std::string(magic, 6) != "LSRP1\n") throw std::runtime_error("unrecognized replay format");
    episodes_.clear();
    total_steps_ = 0;
    episode_open_ = false;
    uint64_t n = 0;
    read_pod(in, n);
    for (uint64_t e = 0; e < n; ++e) {
        ReplayEpisode ep;
        ep.complete = true;
        uint64_t len = 0;
        read_pod(in, len);
        ep.steps.resize(len);
        for (auto& s : ep.steps) {
            read_floats(in, s.frame);
            int32_t a = 0;
            read_pod(in, a);
            s.prev_action = a;
            read_pod(in, s.reward);
            read_pod(in, s.discount);
            read_floats(in, s.channel);
            read_pod(in, s.required_power_w);
            read_pod(in, s.pos_x);
            read_pod(in, s.pos_y);
            ++total_steps_;
        }
        episodes_.push_back(std::move(ep));
        if (!in) throw std::runtime_error("truncated replay file " + path);
    }
}

} // namespace latsched::pipeline
