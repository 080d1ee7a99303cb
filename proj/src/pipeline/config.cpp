#include "latsched/pipeline/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latsched::pipeline {

void RunConfig::validate() const {
    if (train_ratio < 1) throw std::invalid_argument("run: train ratio must be >= 1");
    if (env_steps < 0 || seed_steps < 0) throw std::invalid_argument("run: negative step budget");
    cjepa.validate();
    wjepa.validate();
    agent.validate();
    radio.validate();
    sched.validate();
}

void RunConfig::finalize() {
    if (!track_file.empty()) env.track = envsim::Track::load(track_file);
    cjepa.frame_size = env.frame_size;
    cjepa.action_count = env.action_count;
    cjepa.discount = env.discount;
    wjepa.antennas = radio.antennas;
    wjepa.subcarriers = radio.subcarriers;
    wjepa.control_recurrent = cjepa.recurrent;
    wjepa.control_z = cjepa.z_size();
    wjepa.horizon = cjepa.horizon;
    agent.horizon = cjepa.horizon;
    power.embedding = wjepa.embedding;
    power.power_scale = radio.power_budget_w;
    sched.power_budget_w = radio.power_budget_w;
    sched.bits_per_frame = static_cast<int64_t>(env.frame_size) * env.frame_size * 8;
    validate();
}

RunConfig preset_paper() {
    RunConfig cfg; // struct defaults are the appendix values
    return cfg;
}

RunConfig preset_smoke() {
    RunConfig cfg;
    cfg.precision = sb::Precision::f64;
    cfg.env_steps = 50'000;
    cfg.seed_steps = 2'500;
    cfg.metrics_every = 1;
    cfg.wireless_steps = 500;
    cfg.wireless_epoch_steps = 50;
    cfg.wireless_batch = 16;

    cfg.power_batch = 512;

    cfg.env.frame_size = 32;
    cfg.env.max_episode_len = 300;
    // short lap: per-step progress rewards large enough for the reward head
    // at this training budget
    cfg.env.track = envsim::Track::circle(20.0, 60);

    cfg.radio.antennas = 8;
    cfg.radio.subcarriers = 4;
    cfg.radio.carrier_hz = 1.5e8; // car-scale wavelength keeps CSI learnable per slot
    cfg.radio.array_positions = {{30.0, 0.0, 12.0}, {-30.0, 0.0, 12.0}};
    cfg.radio.noise_power_w = 1e-9;
    cfg.radio.snr_threshold = 100.0;
    cfg.radio.power_budget_w = 1e-4;
    cfg.field_scatterers = 6;

    cfg.cjepa.image_feature = 256;
    cfg.cjepa.recurrent = 200;
    cfg.cjepa.gru_embed = 200;
    cfg.cjepa.groups = 16;
    cfg.cjepa.classes = 16;
    cfg.cjepa.hidden = 300;
    cfg.cjepa.batch_size = 12;
    cfg.cjepa.horizon = 10;
    // desk-scale rewards are worth ~1e-4 nats/step to the likelihood terms,
    // so the appendix KL scale drives the posterior onto the prior (no image
    // information survives); a lighter penalty keeps the latent grounded
    cfg.cjepa.kl_scale = 0.1;

    cfg.wjepa.embedding = 16;
    cfg.wjepa.predictor_recurrent = 256;

    cfg.sched.lookahead = 6;
    cfg.sched.kappa = 3;
    cfg.sched.tau = 1;

    // the appendix RL constants assume million-step budgets; the smoke run
    // has ~2400 gradient steps, so value propagation and exploration are
    // rescaled to match
    cfg.agent.slow_target_interval = 100;
    cfg.agent.actor_lr = 6e-4;
    cfg.agent.critic_lr = 1e-3;
    cfg.agent.entropy_scale = 5e-4;
    cfg.imagination_starts = 32;
    cfg.agent_extra_steps = 1500;

    cfg.eval_seeds = 5;
    return cfg;
}

RunConfig preset_by_name(const std::string& name) {
    if (name == "paper") return preset_paper();
    if (name == "smoke") return preset_smoke();
    throw std::invalid_argument("unknown preset " + name + " (expected smoke or paper)");
}

namespace {

double to_double(const std::string& v) { return std::stod(v); }
int64_t to_i64(const std::string& v) { return std::stoll(v); }
int to_int(const std::string& v) { return std::stoi(v); }

} // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto is = [&](const char* k) { return key == k; };
    if (is("run.seed")) cfg.seed = static_cast<uint64_t>(to_i64(value));
    else if (is("run.precision")) {
        if (value == "f32") cfg.precision = sb::Precision::f32;
        else if (value == "f64") cfg.precision = sb::Precision::f64;
        else throw std::invalid_argument("run.precision must be f32 or f64");
    } else if (is("run.out_dir")) cfg.out_dir = value;
    else if (is("run.env_steps")) cfg.env_steps = to_i64(value);
    else if (is("run.seed_steps")) cfg.seed_steps = to_i64(value);
    else if (is("run.train_ratio")) cfg.train_ratio = to_int(value);
    else if (is("run.replay_capacity")) cfg.replay_capacity = to_i64(value);
    else if (is("run.imagination_starts")) cfg.imagination_starts = to_int(value);
    else if (is("run.agent_extra_steps")) cfg.agent_extra_steps = to_int(value);
    else if (is("run.metrics_every")) cfg.metrics_every = to_int(value);
    else if (is("run.save_replay")) cfg.save_replay = to_int(value) != 0;
    else if (is("run.wireless_steps")) cfg.wireless_steps = to_int(value);
    else if (is("run.wireless_epoch_steps")) cfg.wireless_epoch_steps = to_int(value);
    else if (is("run.wireless_batch")) cfg.wireless_batch = to_int(value);
    else if (is("run.power_steps")) cfg.power_steps = to_int(value);
    else if (is("run.power_batch")) cfg.power_batch = to_int(value);
    else if (is("run.eval_seeds")) cfg.eval_seeds = to_int(value);
    else if (is("run.eval_hs_lo")) cfg.eval_hs_lo = to_int(value);
    else if (is("run.eval_hs_hi")) cfg.eval_hs_hi = to_int(value);
    else if (is("env.frame_size")) cfg.env.frame_size = to_int(value);
    else if (is("env.action_count")) cfg.env.action_count = to_int(value);
    else if (is("env.max_episode_len")) cfg.env.max_episode_len = to_int(value);
    else if (is("env.discount")) cfg.env.discount = to_double(value);
    else if (is("env.track_file")) cfg.track_file = value;
    else if (is("env.view_half_extent")) cfg.env.view_half_extent = to_double(value);
    else if (is("radio.antennas")) cfg.radio.antennas = to_int(value);
    else if (is("radio.subcarriers")) cfg.radio.subcarriers = to_int(value);
    else if (is("radio.carrier_hz")) cfg.radio.carrier_hz = to_double(value);
    else if (is("radio.bandwidth_hz")) cfg.radio.bandwidth_hz = to_double(value);
    else if (is("radio.noise_power_w")) cfg.radio.noise_power_w = to_double(value);
    else if (is("radio.snr_threshold")) cfg.radio.snr_threshold = to_double(value);
    else if (is("radio.power_budget_w")) cfg.radio.power_budget_w = to_double(value);
    else if (is("radio.field_seed")) cfg.field_seed = static_cast<uint64_t>(to_i64(value));
    else if (is("radio.field_scatterers")) cfg.field_scatterers = to_int(value);
    else if (is("cjepa.image_feature")) cfg.cjepa.image_feature = to_int(value);
    else if (is("cjepa.recurrent")) cfg.cjepa.recurrent = to_int(value);
    else if (is("cjepa.gru_embed")) cfg.cjepa.gru_embed = to_int(value);
    else if (is("cjepa.groups")) cfg.cjepa.groups = to_int(value);
    else if (is("cjepa.classes")) cfg.cjepa.classes = to_int(value);
    else if (is("cjepa.hidden")) cfg.cjepa.hidden = to_int(value);
    else if (is("cjepa.head_hidden")) cfg.cjepa.head_hidden = to_int(value);
    else if (is("cjepa.kl_scale")) cfg.cjepa.kl_scale = to_double(value);
    else if (is("cjepa.kl_balance")) cfg.cjepa.kl_balance = to_double(value);
    else if (is("cjepa.learning_rate")) cfg.cjepa.learning_rate = to_double(value);
    else if (is("cjepa.batch_size")) cfg.cjepa.batch_size = to_int(value);
    else if (is("cjepa.horizon")) cfg.cjepa.horizon = to_int(value);
    else if (is("cjepa.clip_norm")) cfg.cjepa.clip_norm = to_double(value);
    else if (is("wjepa.embedding")) cfg.wjepa.embedding = to_int(value);
    else if (is("wjepa.predictor_recurrent")) cfg.wjepa.predictor_recurrent = to_int(value);
    else if (is("wjepa.learning_rate")) cfg.wjepa.learning_rate = to_double(value);
    else if (is("wjepa.lr_decay")) cfg.wjepa.lr_decay = to_double(value);
    else if (is("wjepa.ema_decay")) cfg.wjepa.ema_decay = to_double(value);
    else if (is("wjepa.weight_decay")) cfg.wjepa.weight_decay = to_double(value);
    else if (is("agent.actor_lr")) cfg.agent.actor_lr = to_double(value);
    else if (is("agent.critic_lr")) cfg.agent.critic_lr = to_double(value);
    else if (is("agent.lambda")) cfg.agent.lambda = to_double(value);
    else if (is("agent.entropy_scale")) cfg.agent.entropy_scale = to_double(value);
    else if (is("agent.slow_target_interval")) cfg.agent.slow_target_interval = to_int(value);
    else if (is("agent.hidden")) cfg.agent.hidden = to_int(value);
    else if (is("power.hidden")) cfg.power.hidden = to_int(value);
    else if (is("power.learning_rate")) cfg.power.learning_rate = to_double(value);
    else if (is("sched.lookahead")) cfg.sched.lookahead = to_int(value);
    else if (is("sched.kappa")) cfg.sched.kappa = to_int(value);
    else if (is("sched.tau")) cfg.sched.tau = to_int(value);
    else throw std::invalid_argument("unknown config key: " + key);
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
            if (blank) continue;
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void echo_config(const RunConfig& cfg, std::ostream& out) {
    char buf[160];
    auto put_i = [&](const char* k, int64_t v) {
        std::snprintf(buf, sizeof(buf), "%s = %lld\n", k, static_cast<long long>(v));
        out << buf;
    };
    auto put_d = [&](const char* k, double v) {
        std::snprintf(buf, sizeof(buf), "%s = %.17g\n", k, v);
        out << buf;
    };
    put_i("run.seed", static_cast<int64_t>(cfg.seed));
    out << "run.precision = " << (cfg.precision == sb::Precision::f32 ? "f32" : "f64") << "\n";
    put_i("run.env_steps", cfg.env_steps);
    put_i("run.seed_steps", cfg.seed_steps);
    put_i("run.train_ratio", cfg.train_ratio);
    put_i("run.replay_capacity", cfg.replay_capacity);
    put_i("run.imagination_starts", cfg.imagination_starts);
    put_i("run.agent_extra_steps", cfg.agent_extra_steps);
    put_i("run.metrics_every", cfg.metrics_every);
    put_i("run.save_replay", cfg.save_replay ? 1 : 0);
    put_i("run.wireless_steps", cfg.wireless_steps);
    put_i("run.wireless_epoch_steps", cfg.wireless_epoch_steps);
    put_i("run.wireless_batch", cfg.wireless_batch);
    put_i("run.power_steps", cfg.power_steps);
    put_i("run.power_batch", cfg.power_batch);
    put_i("run.eval_seeds", cfg.eval_seeds);
    put_i("run.eval_hs_lo", cfg.eval_hs_lo);
    put_i("run.eval_hs_hi", cfg.eval_hs_hi);
    put_i("env.frame_size", cfg.env.frame_size);
    put_i("env.action_count", cfg.env.action_count);
    put_i("env.max_episode_len", cfg.env.max_episode_len);
    put_d("env.discount", cfg.env.discount);
    put_d("env.view_half_extent", cfg.env.view_half_extent);
    if (!cfg.track_file.empty()) out << "env.track_file = " << cfg.track_file << "\n";
    put_i("radio.antennas", cfg.radio.antennas);
    put_i("radio.subcarriers", cfg.radio.subcarriers);
    put_d("radio.carrier_hz", cfg.radio.carrier_hz);
    put_d("radio.bandwidth_hz", cfg.radio.bandwidth_hz);
    put_d("radio.noise_power_w", cfg.radio.noise_power_w);
    put_d("radio.snr_threshold", cfg.radio.snr_threshold);
    put_d("radio.power_budget_w", cfg.radio.power_budget_w);
    put_i("radio.field_seed", static_cast<int64_t>(cfg.field_seed));
    put_i("radio.field_scatterers", cfg.field_scatterers);
    put_i("cjepa.image_feature", cfg.cjepa.image_feature);
    put_i("cjepa.recurrent", cfg.cjepa.recurrent);
    put_i("cjepa.gru_embed", cfg.cjepa.gru_embed);
    put_i("cjepa.groups", cfg.cjepa.groups);
    put_i("cjepa.classes", cfg.cjepa.classes);
    put_i("cjepa.hidden", cfg.cjepa.hidden);
    put_i("cjepa.head_hidden", cfg.cjepa.head_hidden);
    put_d("cjepa.kl_scale", cfg.cjepa.kl_scale);
    put_d("cjepa.kl_balance", cfg.cjepa.kl_balance);
    put_d("cjepa.learning_rate", cfg.cjepa.learning_rate);
    put_i("cjepa.batch_size", cfg.cjepa.batch_size);
    put_i("cjepa.horizon", cfg.cjepa.horizon);
    put_d("cjepa.clip_norm", cfg.cjepa.clip_norm);
    put_i("wjepa.embedding", cfg.wjepa.embedding);
    put_i("wjepa.predictor_recurrent", cfg.wjepa.predictor_recurrent);
    put_d("wjepa.learning_rate", cfg.wjepa.learning_rate);
    put_d("wjepa.lr_decay", cfg.wjepa.lr_decay);
    put_d("wjepa.ema_decay", cfg.wjepa.ema_decay);
    put_d("wjepa.weight_decay", cfg.wjepa.weight_decay);
    put_d("agent.actor_lr", cfg.agent.actor_lr);
    put_d("agent.critic_lr", cfg.agent.critic_lr);
    put_d("agent.lambda", cfg.agent.lambda);
    put_d("agent.entropy_scale", cfg.agent.entropy_scale);
    put_i("agent.slow_target_interval", cfg.agent.slow_target_interval);
    put_i("agent.hidden", cfg.agent.hidden);
    put_i("power.hidden", cfg.power.hidden);
    put_d("power.learning_rate", cfg.power.learning_rate);
    put_i("sched.lookahead", cfg.sched.lookahead);
    put_i("sched.kappa", cfg.sched.kappa);
    put_i("sched.tau", cfg.sched.tau);
}

} // namespace latsched::pipeline
