#include "latsched/pipeline/trainer.hpp"

#include "latsched/substrate/checkpoint.hpp"

#include <cmath>
#include <filesystem>

namespace latsched::pipeline {

using cjepa::LatentMode;
using cjepa::LatentState;
using sb::Graph;
using sb::Tensor;
using sb::Value;

Trainer::Trainer(RunConfig cfg)
    : cfg_(std::move(cfg)),
      replay_(1),
      wm_opt_(1e-4),
      wjepa_opt_(1e-3),
      power_opt_(1e-3) {
    cfg_.finalize();
    std::filesystem::create_directories(cfg_.out_dir);

    const envsim::Track& track = cfg_.env.track;
    double margin = 30.0;
    field_ = chansim::ScattererField::make(cfg_.field_seed, cfg_.field_scatterers,
                                           cfg_.field_radius_lo, cfg_.field_radius_hi,
                                           track.min_x() - margin, track.max_x() + margin,
                                           track.min_y() - margin, track.max_y() + margin);
    env_ = std::make_unique<envsim::CarTrackEnv>(cfg_.env);
    replay_ = ReplayBuffer(cfg_.replay_capacity);

    wm_ = std::make_unique<cjepa::WorldModel>(cfg_.cjepa, cfg_.seed);
    agent_ = std::make_unique<agent::ActorCritic>(cfg_.agent, cfg_.cjepa.latent_size(),
                                                  cfg_.cjepa.action_count, cfg_.seed + 1);
    wjepa_ = std::make_unique<wjepa::WirelessModel>(cfg_.wjepa, cfg_.seed + 2);
    power_ = std::make_unique<sched::PowerPredictor>(cfg_.power, cfg_.seed + 3);

    wm_opt_ = sb::Adam(cfg_.cjepa.learning_rate, cfg_.cjepa.clip_norm);
    wjepa_opt_ = sb::Adam(cfg_.wjepa.learning_rate, 0.0, cfg_.wjepa.weight_decay);
    power_opt_ = sb::Adam(cfg_.power.learning_rate);

    episode_seeds_ = sb::derive_stream(cfg_.seed, "collect.episodes");
    action_rng_ = sb::derive_stream(cfg_.seed, "collect.actions");
    wm_sample_rng_ = sb::derive_stream(cfg_.seed, "train.sample");
    wm_latent_rng_ = sb::derive_stream(cfg_.seed, "train.latent");
    imag_pick_rng_ = sb::derive_stream(cfg_.seed, "imagine.starts");
    imag_policy_rng_ = sb::derive_stream(cfg_.seed, "imagine.policy");
    imag_prior_rng_ = sb::derive_stream(cfg_.seed, "imagine.prior");
    wjepa_sample_rng_ = sb::derive_stream(cfg_.seed, "wireless.sample");
    power_sample_rng_ = sb::derive_stream(cfg_.seed, "power.sample");
}

sched::SchedulerStack Trainer::stack() const {
    return {wm_.get(), agent_.get(), wjepa_.get(), power_.get()};
}

void Trainer::begin_collect_episode() {
    uint64_t seed = episode_seeds_.next_u64();
    auto [obs, st] = env_->reset(seed);
    replay_.begin_episode();
    ReplayStep row;
    row.frame = obs.frame;
    row.prev_action = 0;
    row.reward = 0.0f;
    row.discount = static_cast<float>(cfg_.env.discount);
    auto snap = chansim::channel_at(st.x, st.y, st.step_index, field_, cfg_.radio);
    auto flat = wjepa::flatten_channel(snap);
    row.channel.assign(flat.begin(), flat.end());
    row.required_power_w = chansim::required_power(snap, cfg_.radio.snr_threshold, cfg_.radio.noise_power_w);
    row.pos_x = st.x;
    row.pos_y = st.y;
    replay_.push_step(std::move(row));
    collect_latent_ = wm_->initial_latent(LatentMode::mode, nullptr);
}

std::vector<LatentState> Trainer::pick_starts(const std::vector<LatentState>& posts) {
    int want = cfg_.imagination_starts;
    if (want <= 0 || want >= static_cast<int>(posts.size())) return posts;
    // partial Fisher-Yates over indices
    std::vector<int> idx(posts.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::vector<LatentState> out;
    out.reserve(static_cast<size_t>(want));
    for (int k = 0; k < want; ++k) {
        uint32_t j = k + imag_pick_rng_.below(static_cast<uint32_t>(idx.size() - k));
        std::swap(idx[static_cast<size_t>(k)], idx[static_cast<size_t>(j)]);
        out.push_back(posts[static_cast<size_t>(idx[static_cast<size_t>(k)])]);
    }
    return out;
}

void Trainer::gradient_update() {
    cjepa::ExperienceBatch batch;
    try {
        batch = replay_.sample_batch(cfg_.cjepa.batch_size, cfg_.cjepa.horizon, cfg_.env.frame_size,
                                     cfg_.env.action_count, wm_sample_rng_);
    } catch (const NotReady&) {
        return;
    }

    wm_->params().zero_grads();
    std::vector<LatentState> posts;
    double wm_total;
    cjepa::WorldModelLossParts parts;
    {
        Graph g(cfg_.precision);
        parts = wm_->build_loss(g, batch, wm_latent_rng_, LatentMode::sampled, &posts);
        wm_total = parts.total.scalar();
        g.backward(parts.total);
    }
    wm_opt_.step(wm_->params(), cfg_.precision);

    std::vector<LatentState> starts = pick_starts(posts);
    auto trajs = wm_->imagine(starts, agent_->sampling_policy(imag_policy_rng_), cfg_.cjepa.horizon,
                              imag_prior_rng_);
    agent::AgentLosses al = agent_->accumulate_gradients(trajs, cfg_.precision);
    agent_->optimizer_step(cfg_.precision);

    ++gradient_steps_;
    if (train_metrics_ && (gradient_steps_ % cfg_.metrics_every == 0 || gradient_steps_ == 1))
        train_metrics_->row({static_cast<double>(gradient_steps_), static_cast<double>(env_steps_done_),
                             wm_total, parts.kl, parts.reward_nll, parts.termination_nll,
                             al.actor_loss, al.critic_loss, al.mean_entropy, al.mean_value,
                             al.mean_return});
}

void Trainer::stage_collect_train() {
    train_metrics_ = std::make_unique<MetricsWriter>(
        train_metrics_path(),
        std::vector<std::string>{"step", "env_steps", "wm_loss", "kl", "reward_nll", "term_nll",
                                 "actor_loss", "critic_loss", "entropy", "value", "lambda_return"});
    begin_collect_episode();
    while (env_steps_done_ < cfg_.env_steps) {
        int action;
        if (env_steps_done_ < cfg_.seed_steps) {
            action = static_cast<int>(action_rng_.below(static_cast<uint32_t>(cfg_.env.action_count)));
        } else {
            action = agent_->act(collect_latent_, agent::ActMode::sample, &action_rng_).action;
        }
        auto r = env_->step(action);
        const auto& st = env_->state();
        ReplayStep row;
        row.frame = r.observation.frame;
        row.prev_action = action;
        row.reward = static_cast<float>(r.reward);
        // time-limit truncation keeps the bootstrap label; off-track exits and
        // lap completion are true terminals
        bool true_terminal = r.terminated && (st.progress >= 1.0 || st.step_index < cfg_.env.max_episode_len);
        row.discount = true_terminal ? 0.0f : static_cast<float>(cfg_.env.discount);
        auto snap = chansim::channel_at(st.x, st.y, st.step_index, field_, cfg_.radio);
        auto flat = wjepa::flatten_channel(snap);
        row.channel.assign(flat.begin(), flat.end());
        row.required_power_w =
            chansim::required_power(snap, cfg_.radio.snr_threshold, cfg_.radio.noise_power_w);
        row.pos_x = st.x;
        row.pos_y = st.y;
        replay_.push_step(std::move(row));
        collect_latent_ = wm_->observe_step(collect_latent_, action, r.observation.frame.data(),
                                            LatentMode::mode, nullptr);
        ++env_steps_done_;

        if (r.terminated) {
            replay_.end_episode();
            if (env_steps_done_ < cfg_.env_steps) begin_collect_episode();
        }
        if (env_steps_done_ > cfg_.seed_steps &&
            (env_steps_done_ - cfg_.seed_steps) % cfg_.train_ratio == 0)
            gradient_update();
    }
    if (replay_.episode_count() > 0 && !replay_.episode(replay_.episode_count() - 1).complete)
        replay_.end_episode();
}

void Trainer::annotate_replay() {
    // posterior filtering of every stored episode, batched across episodes
    // that are still alive at each slot index; eval mode, argmax latents
    const int hr = cfg_.cjepa.recurrent;
    const int zr = cfg_.cjepa.z_size();
    size_t n_eps = replay_.episode_count();
    std::vector<LatentState> cur(n_eps);
    LatentState init = wm_->initial_latent(LatentMode::mode, nullptr);
    for (auto& c : cur) c = init;

    size_t max_len = 0;
    for (size_t e = 0; e < n_eps; ++e) max_len = std::max(max_len, replay_.episode(e).steps.size());

    size_t px = static_cast<size_t>(cfg_.env.frame_size) * cfg_.env.frame_size;
    for (size_t t = 0; t < max_len; ++t) {
        std::vector<size_t> alive;
        for (size_t e = 0; e < n_eps; ++e)
            if (t < replay_.episode(e).steps.size()) alive.push_back(e);
        if (alive.empty()) break;
        int B = static_cast<int>(alive.size());
        Tensor hprev(B, hr), zprev(B, zr), frames(B, static_cast<int>(px));
        std::vector<int> actions(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            const LatentState& ls = cur[alive[static_cast<size_t>(b)]];
            std::copy(ls.h.begin(), ls.h.end(), hprev.v.begin() + static_cast<size_t>(b) * hr);
            std::copy(ls.z.begin(), ls.z.end(), zprev.v.begin() + static_cast<size_t>(b) * zr);
            const ReplayStep& s = replay_.episode(alive[static_cast<size_t>(b)]).steps[t];
            for (size_t i = 0; i < px; ++i) frames.v[static_cast<size_t>(b) * px + i] = s.frame[i];
            actions[static_cast<size_t>(b)] = s.prev_action;
        }
        Graph g(cfg_.precision);
        Tensor acts_onehot(B, cfg_.cjepa.action_count);
        for (int b = 0; b < B; ++b) acts_onehot.at(b, actions[static_cast<size_t>(b)]) = 1.0;
        Value h = wm_->recurrent_step(g, g.constant(hprev), g.constant(zprev), g.constant(acts_onehot));
        Value x = wm_->encode(g, g.constant(frames));
        Value q = wm_->posterior_logits(g, h, x, /*train=*/false);
        const auto& hv = h.data();
        const auto& qv = q.data();
        for (int b = 0; b < B; ++b) {
            LatentState& ls = cur[alive[static_cast<size_t>(b)]];
            ls.h.assign(hv.begin() + static_cast<size_t>(b) * hr, hv.begin() + static_cast<size_t>(b + 1) * hr);
            ls.z.assign(static_cast<size_t>(zr), 0.0);
            for (int grp = 0; grp < cfg_.cjepa.groups; ++grp) {
                size_t off = static_cast<size_t>(b) * zr + static_cast<size_t>(grp) * cfg_.cjepa.classes;
                int best = 0;
                for (int k = 1; k < cfg_.cjepa.classes; ++k)
                    if (qv[off + k] > qv[off + best]) best = k;
                ls.z[static_cast<size_t>(grp) * cfg_.cjepa.classes + best] = 1.0;
            }
            ReplayStep& s = replay_.episode(alive[static_cast<size_t>(b)]).steps[t];
            s.latent_h.assign(ls.h.begin(), ls.h.end());
            s.latent_z.assign(ls.z.begin(), ls.z.end());
        }
    }
}

wjepa::WirelessBatch Trainer::sample_wireless_batch(int batch, int length) {
    wjepa::WirelessBatch out;
    out.batch = batch;
    out.length = length;
    const int W = cfg_.wjepa.channel_width();
    const int hr = cfg_.cjepa.recurrent;
    const int zr = cfg_.cjepa.z_size();
    out.channels.resize(static_cast<size_t>(batch) * (length + 1) * W);
    out.cond_h.resize(static_cast<size_t>(batch) * length * hr);
    out.cond_z.resize(static_cast<size_t>(batch) * length * zr);
    for (int b = 0; b < batch; ++b) {
        auto [e, start] = replay_.sample_window(length + 1, wjepa_sample_rng_);
        const auto& ep = replay_.episode(e);
        for (int t = 0; t <= length; ++t) {
            const ReplayStep& s = ep.steps[static_cast<size_t>(start + t)];
            if (static_cast<int>(s.channel.size()) != W)
                throw std::logic_error("replay channel width mismatch");
            double* dst = out.channels.data() + (static_cast<size_t>(b) * (length + 1) + t) * W;
            for (int i = 0; i < W; ++i) dst[i] = static_cast<double>(s.channel[static_cast<size_t>(i)]);
            if (t >= 1) {
                if (s.latent_h.empty()) throw std::logic_error("replay latents missing; annotate first");
                double* hdst = out.cond_h.data() + (static_cast<size_t>(b) * length + (t - 1)) * hr;
                double* zdst = out.cond_z.data() + (static_cast<size_t>(b) * length + (t - 1)) * zr;
                for (int i = 0; i < hr; ++i) hdst[i] = static_cast<double>(s.latent_h[static_cast<size_t>(i)]);
                for (int i = 0; i < zr; ++i) zdst[i] = static_cast<double>(s.latent_z[static_cast<size_t>(i)]);
            }
        }
    }
    return out;
}

void Trainer::stage_wireless() {
    MetricsWriter metrics(wireless_metrics_path(), {"step", "lr", "loss"});
    uint64_t wm_version = wm_->params().version();
    auto mask = wjepa_->decay_mask();
    for (int step = 0; step < cfg_.wireless_steps; ++step) {
        if (step > 0 && cfg_.wireless_epoch_steps > 0 && step % cfg_.wireless_epoch_steps == 0)
            wjepa_opt_.set_learning_rate(wjepa_opt_.learning_rate() * cfg_.wjepa.lr_decay);
        wjepa::WirelessBatch batch = sample_wireless_batch(cfg_.wireless_batch, cfg_.cjepa.horizon);
        wjepa_->online_params().zero_grads();
        double loss_value;
        {
            Graph g(cfg_.precision);
            Value loss = wjepa_->build_loss(g, batch, /*train_mode=*/true);
            loss_value = loss.scalar();
            g.backward(loss);
        }
        wjepa_opt_.step(wjepa_->online_params(), cfg_.precision, mask);
        wjepa_->ema_step();
        if (step % cfg_.metrics_every == 0 || step + 1 == cfg_.wireless_steps)
            metrics.row({static_cast<double>(step), wjepa_opt_.learning_rate(), loss_value});
    }
    if (wm_->params().version() != wm_version)
        throw std::logic_error("freeze violation: control weights changed during wireless training");
}

void Trainer::stage_agent_offline(int steps) {
    for (int it = 0; it < steps; ++it) {
        cjepa::ExperienceBatch batch;
        try {
            batch = replay_.sample_batch(cfg_.cjepa.batch_size, cfg_.cjepa.horizon,
                                         cfg_.env.frame_size, cfg_.env.action_count, wm_sample_rng_);
        } catch (const NotReady&) {
            throw std::runtime_error("train-agent: replay holds no complete window yet");
        }
        std::vector<LatentState> posts;
        Graph g(cfg_.precision);
        wm_->build_loss(g, batch, wm_latent_rng_, LatentMode::sampled, &posts); // forward only
        auto trajs = wm_->imagine(pick_starts(posts), agent_->sampling_policy(imag_policy_rng_),
                                  cfg_.cjepa.horizon, imag_prior_rng_);
        agent_->accumulate_gradients(trajs, cfg_.precision);
        agent_->optimizer_step(cfg_.precision);
    }
}

void Trainer::annotate_embeddings() {
    // eval-mode online embeddings for every stored channel, batched
    const int W = cfg_.wjepa.channel_width();
    const int chunk = 256;
    std::vector<std::pair<size_t, size_t>> rows; // (episode, step)
    for (size_t e = 0; e < replay_.episode_count(); ++e)
        for (size_t t = 0; t < replay_.episode(e).steps.size(); ++t) rows.push_back({e, t});
    for (size_t base = 0; base < rows.size(); base += chunk) {
        int B = static_cast<int>(std::min<size_t>(chunk, rows.size() - base));
        Tensor flat(B, W);
        for (int b = 0; b < B; ++b) {
            const ReplayStep& s =
                replay_.episode(rows[base + b].first).steps[rows[base + b].second];
            for (int i = 0; i < W; ++i)
                flat.v[static_cast<size_t>(b) * W + i] = static_cast<double>(s.channel[static_cast<size_t>(i)]);
        }
        Graph g(cfg_.precision);
        Value c = wjepa_->encode(g, g.constant(flat), /*train=*/false);
        const auto& cv = c.data();
        for (int b = 0; b < B; ++b) {
            ReplayStep& s = replay_.episode(rows[base + b].first).steps[rows[base + b].second];
            std::vector<float> emb(static_cast<size_t>(cfg_.wjepa.embedding));
            for (int i = 0; i < cfg_.wjepa.embedding; ++i)
                emb[static_cast<size_t>(i)] = static_cast<float>(cv[static_cast<size_t>(b) * cfg_.wjepa.embedding + i]);
            s.embedding = std::move(emb);
        }
    }
}

void Trainer::stage_power() {
    MetricsWriter metrics(power_metrics_path(), {"step", "loss"});
    annotate_embeddings();
    uint64_t wj_version = wjepa_->online_params().version();

    std::vector<std::pair<size_t, size_t>> rows;
    for (size_t e = 0; e < replay_.episode_count(); ++e)
        for (size_t t = 0; t < replay_.episode(e).steps.size(); ++t) rows.push_back({e, t});
    if (rows.empty()) throw std::runtime_error("train-power: empty replay");

    for (int step = 0; step < cfg_.power_steps; ++step) {
        int B = static_cast<int>(std::min<size_t>(static_cast<size_t>(cfg_.power_batch), rows.size()));
        std::vector<std::vector<double>> embs(static_cast<size_t>(B));
        std::vector<double> targets(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            const auto& pick = rows[power_sample_rng_.next_u64() % rows.size()];
            const ReplayStep& s = replay_.episode(pick.first).steps[pick.second];
            embs[static_cast<size_t>(b)].assign(s.embedding.begin(), s.embedding.end());
            targets[static_cast<size_t>(b)] = s.required_power_w;
        }
        power_->params().zero_grads();
        double loss_value;
        {
            Graph g(cfg_.precision);
            Value loss = power_->build_loss(g, embs, targets);
            loss_value = loss.scalar();
            g.backward(loss);
        }
        power_opt_.step(power_->params(), cfg_.precision);
        if (step % cfg_.metrics_every == 0 || step + 1 == cfg_.power_steps)
            metrics.row({static_cast<double>(step), loss_value});
    }
    if (wjepa_->online_params().version() != wj_version)
        throw std::logic_error("freeze violation: wireless weights changed during power training");
}

void Trainer::train_all() {
    {
        std::ofstream echo(cfg_.out_dir + "/config_echo.cfg");
        echo_config(cfg_, echo);
    }
    stage_collect_train();
    if (cfg_.agent_extra_steps > 0) stage_agent_offline(cfg_.agent_extra_steps);
    save_world();
    save_agent();
    annotate_replay();
    stage_wireless();
    save_wireless();
    stage_power();
    save_power();
    if (cfg_.save_replay) save_replay_file();
}

// ---- artifact I/O ----

namespace {

void copy_params_into(sb::ParameterSet& dst, const sb::ParameterSet& src, const std::string& prefix) {
    for (size_t i = 0; i < src.size(); ++i) {
        const sb::Parameter& p = src[i];
        sb::Parameter& q = dst.add(prefix + p.name, p.rows, p.cols);
        q.v = p.v;
    }
}

void copy_params_back(sb::ParameterSet& dst, const sb::ParameterSet& src, const std::string& prefix,
                      size_t& cursor) {
    for (size_t i = 0; i < dst.size(); ++i) {
        sb::Parameter& p = dst[i];
        const sb::Parameter& q = src[cursor++];
        if (q.name != prefix + p.name || q.rows != p.rows || q.cols != p.cols)
            throw std::runtime_error("checkpoint layout mismatch at " + q.name);
        p.v = q.v;
    }
}

void copy_buffers_into(sb::BufferSet& dst, const sb::BufferSet& src, const std::string& prefix) {
    for (size_t i = 0; i < src.size(); ++i) {
        const Tensor& t = src[i];
        Tensor& u = dst.add(prefix + src.name(i), t.rows, t.cols);
        u.v = t.v;
    }
}

void copy_buffers_back(sb::BufferSet& dst, const sb::BufferSet& src, const std::string& prefix,
                       size_t& cursor) {
    for (size_t i = 0; i < dst.size(); ++i) {
        const Tensor& t = src[cursor];
        if (src.name(cursor) != prefix + dst.name(i)) throw std::runtime_error("buffer layout mismatch");
        dst[i].v = t.v;
        ++cursor;
    }
}

} // namespace

void Trainer::save_world() const {
    sb::save_checkpoint(cfg_.out_dir + "/wm.ckpt", wm_->params(), wm_->buffers(), cfg_.precision);
}

void Trainer::load_world() {
    sb::load_checkpoint(cfg_.out_dir + "/wm.ckpt", wm_->params(), wm_->buffers());
}

void Trainer::save_agent() const {
    sb::ParameterSet merged;
    sb::BufferSet none;
    copy_params_into(merged, agent_->actor_params(), "");
    copy_params_into(merged, agent_->critic_params(), "");
    sb::save_checkpoint(cfg_.out_dir + "/agent.ckpt", merged, none, cfg_.precision);
}

void Trainer::load_agent() {
    sb::ParameterSet merged;
    sb::BufferSet none;
    copy_params_into(merged, agent_->actor_params(), "");
    copy_params_into(merged, agent_->critic_params(), "");
    sb::load_checkpoint(cfg_.out_dir + "/agent.ckpt", merged, none);
    size_t cursor = 0;
    copy_params_back(agent_->actor_params(), merged, "", cursor);
    copy_params_back(agent_->critic_params(), merged, "", cursor);
    agent_->sync_slow_target();
}

void Trainer::save_wireless() const {
    sb::ParameterSet merged;
    sb::BufferSet bufs;
    copy_params_into(merged, wjepa_->online_params(), "online.");
    copy_params_into(merged, wjepa_->target_params(), "target.");
    copy_buffers_into(bufs, wjepa_->online_buffers(), "online.");
    sb::save_checkpoint(cfg_.out_dir + "/wjepa.ckpt", merged, bufs, cfg_.precision);
}

void Trainer::load_wireless() {
    sb::ParameterSet merged;
    sb::BufferSet bufs;
    copy_params_into(merged, wjepa_->online_params(), "online.");
    copy_params_into(merged, wjepa_->target_params(), "target.");
    copy_buffers_into(bufs, wjepa_->online_buffers(), "online.");
    sb::load_checkpoint(cfg_.out_dir + "/wjepa.ckpt", merged, bufs);
    size_t cursor = 0;
    copy_params_back(wjepa_->online_params(), merged, "online.", cursor);
    copy_params_back(wjepa_->target_params(), merged, "target.", cursor);
    cursor = 0;
    copy_buffers_back(wjepa_->online_buffers(), bufs, "online.", cursor);
}

void Trainer::save_power() const {
    sb::BufferSet none;
    sb::save_checkpoint(cfg_.out_dir + "/power.ckpt", power_->params(), none, cfg_.precision);
}

void Trainer::load_power() {
    sb::BufferSet none;
    sb::load_checkpoint(cfg_.out_dir + "/power.ckpt", power_->params(), none);
}

void Trainer::load_stack() {
    load_world();
    load_agent();
    load_wireless();
    load_power();
}

void Trainer::save_replay_file() const { replay_.save(cfg_.out_dir + "/replay.bin"); }
void Trainer::load_replay_file() { replay_.load(cfg_.out_dir + "/replay.bin"); }

} // namespace latsched::pipeline
