#include "odrl/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>

#include "odrl/errors.hpp"
#include "odrl/kernels.hpp"
#include "odrl/text.hpp"

namespace odrl::agents {

namespace {

constexpr double kInv255 = 1.0 / 255.0;

// Greedy action for one sample of a forward cache; ties to the lowest index.
int argmax_action(const tensornet::ForwardCache& cache, int sample) {
    const int actions = static_cast<int>(cache.qvalues().c());
    int best = 0;
    double best_q = cache.q(sample, 0);
    for (int a = 1; a < actions; ++a) {
        const double q = cache.q(sample, a);
        if (q > best_q) {
            best_q = q;
            best = a;
        }
    }
    return best;
}

void check_frame_dims(const Frame& frame, int h, int w) {
    if (frame.height != h || frame.width != w)
        throw DimensionError("frame dims " + std::to_string(frame.width) +
                             "x" + std::to_string(frame.height) +
                             " do not match " + std::to_string(w) + "x" +
                             std::to_string(h));
}

}  // namespace

// ----------------------------------------------------------------------------
// Config
// ----------------------------------------------------------------------------

Algo parse_algo(const std::string& name) {
    if (name == "dqn") return Algo::dqn;
    if (name == "ddqn") return Algo::ddqn;
    if (name == "dueling") return Algo::dueling;
    throw ConfigError("unknown algo '" + name +
                      "' (expected dqn, ddqn, or dueling)");
}

std::string algo_name(Algo algo) {
    switch (algo) {
        case Algo::dqn: return "dqn";
        case Algo::ddqn: return "ddqn";
        case Algo::dueling: return "dueling";
    }
    throw ConfigError("invalid algo value");
}

void validate(const AgentConfig& cfg) {
    if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0))
        throw ConfigError("gamma must lie in [0, 1)");
    if (!(cfg.eps_end >= 0.0 && cfg.eps_end <= cfg.eps_start &&
          cfg.eps_start <= 1.0))
        throw ConfigError("epsilon schedule needs 0 <= eps_end <= eps_start <= 1");
    if (cfg.eps_decay_frames < 0)
        throw ConfigError("eps_decay_frames must be >= 0");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.target_sync < 1) throw ConfigError("target_sync must be >= 1");
    if (cfg.replay_capacity < 1)
        throw ConfigError("replay_capacity must be >= 1");
    if (cfg.learn_start < 1) throw ConfigError("learn_start must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(cfg.rms_decay >= 0.0 && cfg.rms_decay < 1.0))
        throw ConfigError("rms_decay must lie in [0, 1)");
    if (!(cfg.rms_eps > 0.0)) throw ConfigError("rms_eps must be > 0");
    if (cfg.eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (cfg.eval_plays < 1) throw ConfigError("eval_plays must be >= 1");
    if (!(cfg.eval_eps >= 0.0 && cfg.eval_eps <= 1.0))
        throw ConfigError("eval_eps must lie in [0, 1]");
    // Rejects unknown profile names early, before a net is ever built.
    (void)tensornet::profile_layers(cfg.net_profile, 2, false);
}

AgentConfig agent_config_from(KeyValueConfig& cfg) {
    AgentConfig c;
    c.algo = parse_algo(cfg.get_string("algo", algo_name(c.algo)));
    c.object_sensitive = cfg.get_bool("object_sensitive", c.object_sensitive);
    c.gamma = cfg.get_double("gamma", c.gamma);
    c.eps_start = cfg.get_double("eps_start", c.eps_start);
    c.eps_end = cfg.get_double("eps_end", c.eps_end);
    c.eps_decay_frames = cfg.get_int("eps_decay_frames", c.eps_decay_frames);
    c.batch_size = static_cast<int>(cfg.get_int("batch_size", c.batch_size));
    c.target_sync = cfg.get_int("target_sync", c.target_sync);
    c.replay_capacity = cfg.get_int("replay_capacity", c.replay_capacity);
    c.learn_start = cfg.get_int("learn_start", c.learn_start);
    c.net_profile = cfg.get_string("net_profile", c.net_profile);
    c.lr = cfg.get_double("lr", c.lr);
    c.rms_decay = cfg.get_double("rms_decay", c.rms_decay);
    c.rms_eps = cfg.get_double("rms_eps", c.rms_eps);
    c.eval_every = cfg.get_int("eval_every", c.eval_every);
    c.eval_plays = static_cast<int>(cfg.get_int("eval_plays", c.eval_plays));
    c.eval_eps = cfg.get_double("eval_eps", c.eval_eps);
    c.seed = cfg.get_u64("seed", c.seed);
    validate(c);
    return c;
}

double normalize_reward(double raw, envsim::EnvId env) {
    return std::clamp(raw / envsim::max_abs_reward(env), -1.0, 1.0);
}

double epsilon_at(std::int64_t frame, double eps_start, double eps_end,
                  std::int64_t decay_frames) {
    if (decay_frames <= 0 || frame >= decay_frames) return eps_end;
    if (frame <= 0) return eps_start;
    return eps_start + (eps_end - eps_start) *
                           (static_cast<double>(frame) /
                            static_cast<double>(decay_frames));
}

double discounted_return(const std::vector<double>& rewards, double gamma) {
    double sum = 0.0;
    double coef = 1.0;
    for (const double r : rewards) {
        sum += coef * r;
        coef *= gamma;
    }
    return sum;
}

// ----------------------------------------------------------------------------
// State assembly
// ----------------------------------------------------------------------------

Tensor assemble_state(const std::vector<Frame>& history,
                      const std::vector<vision::Detection>& newest_detections,
                      bool object_sensitive, int k) {
    if (history.size() != 4)
        throw UsageError("state history must hold exactly 4 frames, got " +
                         std::to_string(history.size()));
    if (k < 0) throw UsageError("object type count must be >= 0");
    const int h = history[0].height, w = history[0].width;
    if (h <= 0 || w <= 0) throw DimensionError("empty frame in state history");
    for (const Frame& f : history) check_frame_dims(f, h, w);

    const int channels = 12 + (object_sensitive ? k : 0);
    Tensor state(1, channels, h, w);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < 4; ++i) {
        const std::uint8_t* px = history[i].pixels.data();
        for (int c = 0; c < 3; ++c) {
            double* dst = state.plane(0, 3 * i + c);
            for (std::int64_t p = 0; p < hw; ++p)
                dst[p] = static_cast<double>(px[p * 3 + c]) * kInv255;
        }
    }
    if (object_sensitive && k > 0) {
        const vision::ObjectChannels oc =
            vision::build_object_channels(h, w, newest_detections, k);
        for (int c = 0; c < k; ++c) {
            double* dst = state.plane(0, 12 + c);
            const std::uint8_t* src = oc.plane(c);
            for (std::int64_t p = 0; p < hw; ++p)
                dst[p] = static_cast<double>(src[p]);
        }
    }
    return state;
}

int state_channels(const AgentConfig& cfg, envsim::EnvId env) {
    return 12 + (cfg.object_sensitive ? envsim::object_type_count(env) : 0);
}

tensornet::QNet make_agent_net(const AgentConfig& cfg,
                               const envsim::EnvConfig& env_cfg) {
    envsim::validate(env_cfg);
    const int actions = envsim::action_count(env_cfg.env_id);
    const tensornet::Shape3 input{state_channels(cfg, env_cfg.env_id),
                                  env_cfg.grid_h * env_cfg.cell_px,
                                  env_cfg.grid_w * env_cfg.cell_px};
    const bool dueling = cfg.algo == Algo::dueling;
    return tensornet::make_qnet(
        input, tensornet::profile_layers(cfg.net_profile, actions, dueling),
        actions, mix_seed(cfg.seed, kNetSeedTag));
}

// ----------------------------------------------------------------------------
// Replay memory
// ----------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::int64_t capacity, bool object_sensitive, int k)
    : capacity_(capacity), object_sensitive_(object_sensitive), k_(k) {
    if (capacity < 1) throw ConfigError("replay capacity must be >= 1");
    if (k < 0) throw ConfigError("object type count must be >= 0");
}

void ReplayBuffer::push_frame(const Frame& frame,
                              const std::vector<vision::Detection>& detections,
                              bool episode_start) {
    if (frame.height <= 0 || frame.width <= 0)
        throw DimensionError("replay frame is empty");
    if (frame_h_ == 0) {
        frame_h_ = frame.height;
        frame_w_ = frame.width;
    }
    check_frame_dims(frame, frame_h_, frame_w_);

    Entry e;
    e.episode_start = episode_start;
    const std::int64_t hw = static_cast<std::int64_t>(frame_h_) * frame_w_;
    e.planes.resize(3 * hw);
    const std::uint8_t* px = frame.pixels.data();
    for (int c = 0; c < 3; ++c) {
        std::uint8_t* dst = e.planes.data() + c * hw;
        for (std::int64_t p = 0; p < hw; ++p) dst[p] = px[p * 3 + c];
    }
    if (object_sensitive_) e.detections = detections;
    entries_.push_back(std::move(e));
}

void ReplayBuffer::begin_episode(
    const Frame& frame, const std::vector<vision::Detection>& detections) {
    push_frame(frame, detections, true);
}

void ReplayBuffer::push_step(
    int action, double reward, bool terminal, const Frame& next_frame,
    const std::vector<vision::Detection>& next_detections) {
    if (entries_.empty() || entries_.back().has_action)
        throw UsageError("push_step without an open frame; call begin_episode "
                         "or push_step in alternation");
    // Validate before mutating so a bad frame leaves the ring unchanged.
    if (next_frame.height <= 0 || next_frame.width <= 0)
        throw DimensionError("replay frame is empty");
    check_frame_dims(next_frame, frame_h_, frame_w_);
    Entry& open = entries_.back();
    open.has_action = true;
    open.action = action;
    open.reward = reward;
    open.terminal = terminal;
    action_pos_.push_back(base_pos_ + static_cast<std::int64_t>(entries_.size()) - 1);
    push_frame(next_frame, next_detections, false);

    while (static_cast<std::int64_t>(action_pos_.size()) > capacity_)
        action_pos_.pop_front();
    // Keep 3 frames of history before the oldest retained transition; the
    // state walk clamps there when an episode's earlier frames are evicted.
    const std::int64_t min_needed = action_pos_.front() - 3;
    while (base_pos_ < min_needed) {
        entries_.pop_front();
        ++base_pos_;
    }
}

std::int64_t ReplayBuffer::size() const {
    return static_cast<std::int64_t>(action_pos_.size());
}

std::int64_t ReplayBuffer::frame_count() const {
    return static_cast<std::int64_t>(entries_.size());
}

const ReplayBuffer::Entry& ReplayBuffer::entry_at(std::int64_t pos) const {
    return entries_[static_cast<std::size_t>(pos - base_pos_)];
}

std::array<std::int64_t, 4> ReplayBuffer::history_positions(
    std::int64_t pos) const {
    // Walk the frame ring backwards; an episode-start frame (or the oldest
    // retained one) repeats to fill the remaining history slots.
    std::array<std::int64_t, 4> fpos;
    std::int64_t cur = pos;
    for (int slot = 3; slot >= 0; --slot) {
        fpos[static_cast<std::size_t>(slot)] = cur;
        const Entry& e = entry_at(cur);
        if (!e.episode_start && cur > base_pos_) --cur;
    }
    return fpos;
}

void ReplayBuffer::write_state(Tensor& dst, int sample,
                               std::int64_t pos) const {
    const std::array<std::int64_t, 4> fpos = history_positions(pos);
    const auto& k = kernels::ops();
    const std::int64_t hw = static_cast<std::int64_t>(frame_h_) * frame_w_;
    for (int i = 0; i < 4; ++i) {
        const Entry& e = entry_at(fpos[static_cast<std::size_t>(i)]);
        for (int c = 0; c < 3; ++c)
            k.u8_to_f64(e.planes.data() + c * hw, dst.plane(sample, 3 * i + c),
                        hw, kInv255);
    }
    if (object_sensitive_ && k_ > 0) {
        const vision::ObjectChannels oc = vision::build_object_channels(
            frame_h_, frame_w_, entry_at(pos).detections, k_);
        for (int c = 0; c < k_; ++c)
            k.u8_to_f64(oc.plane(c), dst.plane(sample, 12 + c), hw, 1.0);
    }
}

void ReplayBuffer::write_state_pooled(Tensor& dst, int sample,
                                      std::int64_t pos, int win,
                                      std::uint8_t* scratch) const {
    const std::array<std::int64_t, 4> fpos = history_positions(pos);
    const auto& k = kernels::ops();
    const int oh = frame_h_ / win, ow = frame_w_ / win;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;
    for (int i = 0; i < 4; ++i) {
        const Entry& e = entry_at(fpos[static_cast<std::size_t>(i)]);
        k.u8_maxpool(e.planes.data(), scratch, 3, frame_h_, frame_w_, oh, ow,
                     win);
        for (int c = 0; c < 3; ++c)
            k.u8_to_f64(scratch + c * ohw, dst.plane(sample, 3 * i + c), ohw,
                        kInv255);
    }
    if (object_sensitive_ && k_ > 0) {
        for (int c = 0; c < k_; ++c) {
            double* p = dst.plane(sample, 12 + c);
            std::fill(p, p + ohw, 0.0);
        }
        // A cell is set exactly when the box covers at least one pixel of
        // its win x win block — what pooling the pixel rasterization gives.
        // Pixels past the pool's floored extent contribute to no cell.
        for (const auto& det : entry_at(pos).detections) {
            if (det.object_type < 0 || det.object_type >= k_)
                throw DimensionError(
                    "detection type " + std::to_string(det.object_type) +
                    " outside [0," + std::to_string(k_) + ")");
            const int y0 = std::max(0, det.y);
            const int x0 = std::max(0, det.x);
            const int y1 = std::min({frame_h_, det.y + det.h, oh * win});
            const int x1 = std::min({frame_w_, det.x + det.w, ow * win});
            if (y0 >= y1 || x0 >= x1) continue;
            double* p = dst.plane(sample, 12 + det.object_type);
            for (int cy = y0 / win; cy <= (y1 - 1) / win; ++cy)
                for (int cx = x0 / win; cx <= (x1 - 1) / win; ++cx)
                    p[cy * ow + cx] = 1.0;
        }
    }
}

Batch ReplayBuffer::batch(const std::vector<std::int64_t>& indices) const {
    Batch out;
    fill_batch(indices, out);
    return out;
}

void ReplayBuffer::fill_batch(const std::vector<std::int64_t>& indices,
                              Batch& out) const {
    fill_batch_impl(indices, 0, out);
}

void ReplayBuffer::fill_batch_pooled(const std::vector<std::int64_t>& indices,
                                     int win, Batch& out) const {
    if (win < 2) throw UsageError("pool window must be >= 2");
    if (frame_h_ < win || frame_w_ < win)
        throw DimensionError("pool window " + std::to_string(win) +
                             " exceeds the " + std::to_string(frame_h_) + "x" +
                             std::to_string(frame_w_) + " frame");
    fill_batch_impl(indices, win, out);
}

// win == 0 builds full-resolution states; win >= 2 the pooled variant.
void ReplayBuffer::fill_batch_impl(const std::vector<std::int64_t>& indices,
                                   int win, Batch& out) const {
    if (indices.empty()) throw UsageError("cannot build an empty batch");
    const int b = static_cast<int>(indices.size());
    const int channels = 12 + (object_sensitive_ ? k_ : 0);
    const int h = win ? frame_h_ / win : frame_h_;
    const int w = win ? frame_w_ / win : frame_w_;
    // write_state overwrites every plane of a sample, so the tensors are
    // reused across calls (or allocated without the zero fill).
    if (out.states.n() != b || out.states.c() != channels ||
        out.states.h() != h || out.states.w() != w) {
        out.states = Tensor::uninitialized(b, channels, h, w);
        out.next_states = Tensor::uninitialized(b, channels, h, w);
    }
    out.actions.resize(indices.size());
    out.rewards.resize(indices.size());
    out.terminals.resize(indices.size());
    std::vector<std::uint8_t> scratch(
        win ? static_cast<std::size_t>(3) * h * w : 0);
    for (int j = 0; j < b; ++j) {
        const std::int64_t idx = indices[static_cast<std::size_t>(j)];
        if (idx < 0 || idx >= size())
            throw UsageError("transition index " + std::to_string(idx) +
                             " outside [0, " + std::to_string(size()) + ")");
        const std::int64_t pos = action_pos_[static_cast<std::size_t>(idx)];
        if (win) {
            write_state_pooled(out.states, j, pos, win, scratch.data());
            write_state_pooled(out.next_states, j, pos + 1, win, scratch.data());
        } else {
            write_state(out.states, j, pos);
            write_state(out.next_states, j, pos + 1);
        }
        const Entry& e = entry_at(pos);
        out.actions[static_cast<std::size_t>(j)] = e.action;
        out.rewards[static_cast<std::size_t>(j)] = e.reward;
        out.terminals[static_cast<std::size_t>(j)] = e.terminal ? 1 : 0;
    }
}

Transition ReplayBuffer::transition(std::int64_t idx) const {
    Batch b = batch({idx});
    Transition t;
    t.state = std::move(b.states);
    t.action = b.actions[0];
    t.reward = b.rewards[0];
    t.next_state = std::move(b.next_states);
    t.terminal = b.terminals[0] != 0;
    return t;
}

std::int64_t ReplayBuffer::sample_index(Rng& rng) const {
    if (action_pos_.empty()) throw UsageError("replay buffer is empty");
    return static_cast<std::int64_t>(
        rng.uniform_int(static_cast<std::uint32_t>(size())));
}

std::vector<std::int64_t> ReplayBuffer::sample_indices(Rng& rng,
                                                       int count) const {
    if (count < 1) throw UsageError("batch size must be >= 1");
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (auto& i : idx) i = sample_index(rng);
    return idx;
}

// ----------------------------------------------------------------------------
// Control and learning
// ----------------------------------------------------------------------------

int select_action(const tensornet::QNet& net, const Tensor& state, double eps,
                  Rng& rng) {
    if (!(eps >= 0.0 && eps <= 1.0))
        throw UsageError("epsilon must lie in [0, 1]");
    const double u = rng.uniform01();
    if (u < eps)
        return static_cast<int>(
            rng.uniform_int(static_cast<std::uint32_t>(net.num_actions)));
    const tensornet::ForwardCache cache = tensornet::forward(net, state);
    return argmax_action(cache, 0);
}

std::vector<double> dqn_target(const Batch& batch,
                               const tensornet::QNet& online,
                               const tensornet::QNet& target, double gamma,
                               bool pooled_batch) {
    (void)online;
    if (batch.size() < 1) throw UsageError("target of an empty batch");
    const tensornet::ForwardCache qt =
        pooled_batch ? tensornet::forward_from_pooled(target, batch.next_states)
                     : tensornet::forward(target, batch.next_states);
    const int actions = static_cast<int>(qt.qvalues().c());
    std::vector<double> y(static_cast<std::size_t>(batch.size()));
    for (int j = 0; j < batch.size(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (batch.terminals[ju]) {
            y[ju] = batch.rewards[ju];
            continue;
        }
        double best = qt.q(j, 0);
        for (int a = 1; a < actions; ++a) best = std::max(best, qt.q(j, a));
        y[ju] = batch.rewards[ju] + gamma * best;
    }
    return y;
}

std::vector<double> ddqn_target(const Batch& batch,
                                const tensornet::QNet& online,
                                const tensornet::QNet& target, double gamma,
                                bool pooled_batch) {
    if (batch.size() < 1) throw UsageError("target of an empty batch");
    const tensornet::ForwardCache qo =
        pooled_batch ? tensornet::forward_from_pooled(online, batch.next_states)
                     : tensornet::forward(online, batch.next_states);
    const tensornet::ForwardCache qt =
        pooled_batch ? tensornet::forward_from_pooled(target, batch.next_states)
                     : tensornet::forward(target, batch.next_states);
    std::vector<double> y(static_cast<std::size_t>(batch.size()));
    for (int j = 0; j < batch.size(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (batch.terminals[ju]) {
            y[ju] = batch.rewards[ju];
            continue;
        }
        const int pick = argmax_action(qo, j);
        y[ju] = batch.rewards[ju] + gamma * qt.q(j, pick);
    }
    return y;
}

double loss_and_output_grad(const Tensor& qvalues,
                            const std::vector<int>& actions,
                            const std::vector<double>& targets,
                            Tensor& output_grad) {
    const std::int64_t b = qvalues.n();
    const int a_count = static_cast<int>(qvalues.c());
    if (b < 1) throw UsageError("loss of an empty batch");
    if (static_cast<std::int64_t>(actions.size()) != b ||
        static_cast<std::int64_t>(targets.size()) != b)
        throw UsageError("actions/targets size does not match the batch");
    output_grad = Tensor::zeros_like(qvalues);
    double loss = 0.0;
    for (std::int64_t j = 0; j < b; ++j) {
        const int a = actions[static_cast<std::size_t>(j)];
        if (a < 0 || a >= a_count)
            throw UsageError("action id " + std::to_string(a) +
                             " outside [0, " + std::to_string(a_count) + ")");
        const double d = qvalues.at(j, a, 0, 0) -
                         targets[static_cast<std::size_t>(j)];
        loss += d * d;
        output_grad.at(j, a, 0, 0) = 2.0 * d / static_cast<double>(b);
    }
    return loss / static_cast<double>(b);
}

double train_step(tensornet::QNet& online, const tensornet::QNet& target,
                  const Batch& batch, const AgentConfig& cfg,
                  bool pooled_batch) {
    const std::vector<double> y =
        cfg.algo == Algo::ddqn
            ? ddqn_target(batch, online, target, cfg.gamma, pooled_batch)
            : dqn_target(batch, online, target, cfg.gamma, pooled_batch);
    const tensornet::ForwardCache cache =
        pooled_batch ? tensornet::forward_from_pooled(online, batch.states)
                     : tensornet::forward(online, batch.states);
    Tensor output_grad;
    const double loss =
        loss_and_output_grad(cache.qvalues(), batch.actions, y, output_grad);
    if (!std::isfinite(loss))
        throw TrainingError("non-finite loss at step " +
                            std::to_string(online.global_step));
    const tensornet::GradientBundle grads =
        tensornet::backward(online, cache, output_grad,
                            /*need_input_grad=*/false);
    tensornet::rmsprop_step(online, grads, cfg.lr, cfg.rms_decay, cfg.rms_eps);
    return loss;
}

void sync_target(tensornet::QNet& target, const tensornet::QNet& online) {
    target = online;
}

// ----------------------------------------------------------------------------
// Evaluation and the training loop
// ----------------------------------------------------------------------------

std::uint64_t eval_seed(std::uint64_t agent_seed, std::int64_t frame) {
    return mix_seed(agent_seed, kEvalSeedTag, static_cast<std::uint64_t>(frame));
}

EvalStats evaluate(const tensornet::QNet& net, const envsim::EnvConfig& env_cfg,
                   int plays, double eps, std::uint64_t seed,
                   bool object_sensitive) {
    if (plays < 1) throw UsageError("evaluation needs at least one play");
    envsim::validate(env_cfg);
    const int k = envsim::object_type_count(env_cfg.env_id);
    const std::vector<vision::Template> templates =
        object_sensitive
            ? vision::builtin_templates(env_cfg.env_id, env_cfg.cell_px, 0.95)
            : std::vector<vision::Template>{};

    std::vector<double> scores(static_cast<std::size_t>(plays));
    for (int p = 0; p < plays; ++p) {
        envsim::EnvConfig ec = env_cfg;
        ec.seed = mix_seed(seed, static_cast<std::uint64_t>(2 * p));
        Rng act_rng(mix_seed(seed, static_cast<std::uint64_t>(2 * p + 1)));
        envsim::EnvState st = envsim::reset(ec);
        Frame frame = envsim::render(st);
        std::vector<vision::Detection> dets =
            object_sensitive ? vision::detect_objects(frame, templates)
                             : std::vector<vision::Detection>{};
        std::vector<Frame> hist{frame, frame, frame, frame};
        while (!st.done) {
            const Tensor state =
                assemble_state(hist, dets, object_sensitive, k);
            const int a = select_action(net, state, eps, act_rng);
            envsim::StepResult sr = envsim::step(st, a);
            if (object_sensitive)
                dets = vision::detect_objects(sr.frame, templates);
            std::rotate(hist.begin(), hist.begin() + 1, hist.end());
            hist[3] = std::move(sr.frame);
        }
        scores[static_cast<std::size_t>(p)] = st.score;
    }

    EvalStats stats;
    stats.plays = plays;
    double sum = 0.0;
    for (const double s : scores) sum += s;
    stats.mean = sum / plays;
    if (plays > 1) {
        double ss = 0.0;
        for (const double s : scores) ss += (s - stats.mean) * (s - stats.mean);
        stats.stddev = std::sqrt(ss / (plays - 1));
    }
    return stats;
}

std::string log_header() { return "frame,episode,loss,eps,eval_mean,eval_std"; }

std::string log_row_csv(const LogRow& row) {
    return std::to_string(row.frame) + "," + std::to_string(row.episode) +
           "," + fmt_double(row.loss) + "," + fmt_double(row.eps) + "," +
           fmt_double(row.eval_mean) + "," + fmt_double(row.eval_std);
}

TrainResult train(const AgentConfig& cfg, const envsim::EnvConfig& env_cfg,
                  std::int64_t total_frames, const std::string& checkpoint_path,
                  const std::function<void(const LogRow&)>& sink) {
    validate(cfg);
    envsim::validate(env_cfg);
    if (total_frames < 0) throw ConfigError("total_frames must be >= 0");
    tensornet::tune_allocator();

    TrainResult result;
    tensornet::QNet online = make_agent_net(cfg, env_cfg);
    if (total_frames == 0) {
        if (!checkpoint_path.empty())
            tensornet::save_checkpoint(checkpoint_path, online);
        result.net = std::move(online);
        return result;
    }

    tensornet::QNet target = online;
    // A net fronted by a parameter-free pool trains on states pooled in u8
    // space during batch assembly — bit-identical Q-values and updates,
    // minus most of the batch memory traffic.
    const bool pool_entry =
        online.layers.front().kind == tensornet::LayerKind::maxpool;
    const int pool_win = pool_entry ? online.layers.front().kernel : 0;
    const std::int64_t decay =
        cfg.eps_decay_frames > 0
            ? cfg.eps_decay_frames
            : std::max<std::int64_t>(1, total_frames * 3 / 10);
    const bool os = cfg.object_sensitive;
    const int k = envsim::object_type_count(env_cfg.env_id);
    const std::vector<vision::Template> templates =
        os ? vision::builtin_templates(env_cfg.env_id, env_cfg.cell_px, 0.95)
           : std::vector<vision::Template>{};

    ReplayBuffer replay(cfg.replay_capacity, os, k);
    Rng act_rng(mix_seed(cfg.seed, kActionSeedTag));
    Rng replay_rng(mix_seed(cfg.seed, kReplaySeedTag));

    std::int64_t frame_counter = 0;
    std::int64_t episode = 0;
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    Batch batch;  // buffers reused across steps

    while (frame_counter < total_frames) {
        envsim::EnvConfig ec = env_cfg;
        ec.seed = mix_seed(cfg.seed, kEpisodeSeedTag,
                           static_cast<std::uint64_t>(episode));
        envsim::EnvState st = envsim::reset(ec);
        Frame frame = envsim::render(st);
        std::vector<vision::Detection> dets =
            os ? vision::detect_objects(frame, templates)
               : std::vector<vision::Detection>{};
        replay.begin_episode(frame, dets);
        std::vector<Frame> hist{frame, frame, frame, frame};

        while (!st.done && frame_counter < total_frames) {
            const Tensor state = assemble_state(hist, dets, os, k);
            const double eps = epsilon_at(frame_counter, cfg.eps_start,
                                          cfg.eps_end, decay);
            const int a = select_action(online, state, eps, act_rng);
            envsim::StepResult sr = envsim::step(st, a);
            const double r = normalize_reward(sr.reward, env_cfg.env_id);
            std::vector<vision::Detection> next_dets =
                os ? vision::detect_objects(sr.frame, templates)
                   : std::vector<vision::Detection>{};
            replay.push_step(a, r, sr.done, sr.frame, next_dets);
            std::rotate(hist.begin(), hist.begin() + 1, hist.end());
            hist[3] = std::move(sr.frame);
            dets = std::move(next_dets);

            ++frame_counter;
            online.global_step = frame_counter;

            if (replay.size() >= cfg.learn_start) {
                const std::vector<std::int64_t> idx =
                    replay.sample_indices(replay_rng, cfg.batch_size);
                if (pool_entry)
                    replay.fill_batch_pooled(idx, pool_win, batch);
                else
                    replay.fill_batch(idx, batch);
                loss_sum += train_step(online, target, batch, cfg, pool_entry);
                ++loss_count;
            }
            if (frame_counter % cfg.target_sync == 0)
                sync_target(target, online);
            if (cfg.eval_every > 0 && frame_counter % cfg.eval_every == 0) {
                const EvalStats es =
                    evaluate(online, env_cfg, cfg.eval_plays, cfg.eval_eps,
                             eval_seed(cfg.seed, frame_counter), os);
                LogRow row;
                row.frame = frame_counter;
                row.episode = episode;
                row.loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
                row.eps = epsilon_at(frame_counter, cfg.eps_start, cfg.eps_end,
                                     decay);
                row.eval_mean = es.mean;
                row.eval_std = es.stddev;
                result.log.push_back(row);
                if (sink) sink(row);
                loss_sum = 0.0;
                loss_count = 0;
                if (!checkpoint_path.empty())
                    tensornet::save_checkpoint(checkpoint_path, online);
            }
        }
        ++episode;
    }

    result.episodes = episode;
    if (!checkpoint_path.empty())
        tensornet::save_checkpoint(checkpoint_path, online);
    result.net = std::move(online);
    return result;
}

}  // namespace odrl::agents
