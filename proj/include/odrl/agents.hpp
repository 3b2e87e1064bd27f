#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "odrl/config.hpp"
#include "odrl/envsim.hpp"
#include "odrl/rng.hpp"
#include "odrl/tensor.hpp"
#include "odrl/tensornet.hpp"
#include "odrl/vision.hpp"

namespace odrl::agents {

// ============================================================================
// Value-based RL on the mini-arcade environments: state assembly (four-frame
// history stacking plus optional object channels), replay memory, ε-greedy
// control, DQN / Double-DQN / Dueling targets, reward normalization, and the
// training loop.
//
// State layout: planes 0..11 are the last four RGB frames scaled by 1/255,
// oldest first (R,G,B per frame); an object-sensitive state appends the k
// binary object channels computed from the newest frame only. At episode
// start the first frame is repeated to fill the history.
//
// Determinism contract: every random stream is derived from AgentConfig.seed
// with the fixed tags below, so a (configs, seed) pair reproduces training
// bit for bit, and an evaluation can be replayed later from a checkpoint's
// step counter alone. EnvConfig.seed is ignored during training; episode e
// runs on mix_seed(seed, kEpisodeSeedTag, e).
//
// Optimizer step t uses the RMSProp rule from tensornet; loss is plain MSE
// over the batch with gradients flowing only through each sample's taken
// action.
// ============================================================================

inline constexpr std::uint64_t kNetSeedTag = 0x6f64726c'6e657400ULL;
inline constexpr std::uint64_t kActionSeedTag = 0x6f64726c'61637400ULL;
inline constexpr std::uint64_t kReplaySeedTag = 0x6f64726c'72707400ULL;
inline constexpr std::uint64_t kEpisodeSeedTag = 0x6f64726c'65707300ULL;
inline constexpr std::uint64_t kEvalSeedTag = 0x6f64726c'65766c00ULL;

enum class Algo { dqn, ddqn, dueling };

Algo parse_algo(const std::string& name);  // throws ConfigError
std::string algo_name(Algo algo);

struct AgentConfig {
    Algo algo = Algo::dqn;
    bool object_sensitive = false;
    double gamma = 0.99;
    double eps_start = 1.0;
    double eps_end = 0.05;
    // 0 means "derive at train time": 30% of total_frames (at least 1).
    std::int64_t eps_decay_frames = 0;
    int batch_size = 32;
    std::int64_t target_sync = 1000;
    std::int64_t replay_capacity = 50000;
    std::int64_t learn_start = 1000;
    std::string net_profile = "tiny";
    double lr = 2.5e-4;
    double rms_decay = 0.95;
    double rms_eps = 1e-8;
    std::int64_t eval_every = 10000;  // 0 disables in-training evaluation
    int eval_plays = 50;
    double eval_eps = 0.01;
    std::uint64_t seed = 1;
};

// Throws ConfigError on out-of-range fields (gamma in [0,1),
// 0 <= eps_end <= eps_start <= 1, positive sizes and optimizer constants).
void validate(const AgentConfig& cfg);

// Consumes the agent keys (algo, object_sensitive, gamma, eps_start,
// eps_end, eps_decay_frames, batch_size, target_sync, replay_capacity,
// learn_start, net_profile, lr, rms_decay, rms_eps, eval_every, eval_plays,
// eval_eps, seed) from a parsed config; validates. The seed key is shared
// with env_config_from.
AgentConfig agent_config_from(KeyValueConfig& cfg);

// Reward scaled by the environment's largest one-step |reward| and clamped
// to [-1, 1]; distinct raw magnitudes stay distinct.
double normalize_reward(double raw, envsim::EnvId env);

// Linear schedule: eps_start -> eps_end over the first decay_frames frames,
// then flat at eps_end (decay_frames <= 0 is flat from the start).
double epsilon_at(std::int64_t frame, double eps_start, double eps_end,
                  std::int64_t decay_frames);

// Discounted return sum_i gamma^i * rewards[i], accumulated in index order.
double discounted_return(const std::vector<double>& rewards, double gamma);

// ----------------------------------------------------------------------------
// State assembly
// ----------------------------------------------------------------------------

// history holds exactly 4 frames of equal dims, oldest first (throws
// UsageError / DimensionError otherwise). Returns a (1, C, H, W) tensor with
// C = 12 (+ k when object_sensitive). Object planes come from
// build_object_channels over detections of the newest frame.
Tensor assemble_state(const std::vector<Frame>& history,
                      const std::vector<vision::Detection>& newest_detections,
                      bool object_sensitive, int k);

// Input channel count of the agent net for this configuration.
int state_channels(const AgentConfig& cfg, envsim::EnvId env);

// Fresh online net for (cfg, env): profile layers, dueling head iff the algo
// is dueling, init seed mix_seed(cfg.seed, kNetSeedTag).
tensornet::QNet make_agent_net(const AgentConfig& cfg,
                               const envsim::EnvConfig& env_cfg);

// ----------------------------------------------------------------------------
// Replay memory
// ----------------------------------------------------------------------------

// A sampled transition, states already assembled.
struct Transition {
    Tensor state;       // (1, C, H, W)
    int action = 0;
    double reward = 0.0;  // normalized
    Tensor next_state;  // (1, C, H, W)
    bool terminal = false;
};

// Training batch; tensors are (B, C, H, W) with samples in index order.
struct Batch {
    Tensor states;
    Tensor next_states;
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<std::uint8_t> terminals;

    std::int64_t size() const { return states.n(); }
};

// Ring buffer of the last `capacity` transitions, stored as per-step frames
// (planar uint8) plus step metadata so a 50k-frame history fits in memory;
// states are rebuilt on sampling by walking the frame ring backwards,
// repeating the episode's first (or oldest retained) frame to fill history.
// Eviction is strictly FIFO in transitions. Not thread-safe.
class ReplayBuffer {
public:
    // k and object_sensitive fix the channel layout of rebuilt states;
    // detections are stored per frame only when object_sensitive.
    ReplayBuffer(std::int64_t capacity, bool object_sensitive, int k);

    // Starts a new episode with its first rendered frame.
    void begin_episode(const Frame& frame,
                       const std::vector<vision::Detection>& detections);

    // Records the step taken from the newest stored frame: action, normalized
    // reward, terminal flag, and the frame observed after the action. Throws
    // UsageError if no episode is open or the step was already recorded.
    void push_step(int action, double reward, bool terminal,
                   const Frame& next_frame,
                   const std::vector<vision::Detection>& next_detections);

    std::int64_t size() const;      // stored transitions
    std::int64_t capacity() const { return capacity_; }
    std::int64_t frame_count() const;  // retained frames (diagnostics)
    bool object_sensitive() const { return object_sensitive_; }
    int k() const { return k_; }

    // Transition idx in [0, size()), oldest first. Throws UsageError on a
    // bad index.
    Transition transition(std::int64_t idx) const;

    // One uniform index over [0, size()); throws UsageError when empty.
    std::int64_t sample_index(Rng& rng) const;
    std::vector<std::int64_t> sample_indices(Rng& rng, int count) const;

    // Assembles the given transitions into one batch (states filled via the
    // vectorized u8 conversion kernels).
    Batch batch(const std::vector<std::int64_t>& indices) const;
    // Same, reusing `out`'s buffers when the shape already matches; the hot
    // training loop calls this to avoid re-allocating tens of MB per step.
    void fill_batch(const std::vector<std::int64_t>& indices, Batch& out) const;
    // Pooled variant for nets whose first layer is a win-wide maxpool: every
    // state plane is max-pooled (stride win, floor on ragged extents) in u8
    // space before conversion, and object boxes are rasterized straight at
    // cell resolution. Bit-identical to max-pooling fill_batch's planes —
    // see tensornet::forward_from_pooled. Tensors come out (B, C, H/win,
    // W/win).
    void fill_batch_pooled(const std::vector<std::int64_t>& indices, int win,
                           Batch& out) const;

private:
    struct Entry {
        std::vector<std::uint8_t> planes;  // 3*h*w, plane-major R,G,B
        std::vector<vision::Detection> detections;
        bool episode_start = false;
        bool has_action = false;
        int action = 0;
        double reward = 0.0;
        bool terminal = false;
    };

    void push_frame(const Frame& frame,
                    const std::vector<vision::Detection>& detections,
                    bool episode_start);
    const Entry& entry_at(std::int64_t pos) const;
    void fill_batch_impl(const std::vector<std::int64_t>& indices, int win,
                         Batch& out) const;
    // Writes the state ending at frame position pos into batch tensor
    // `dst` at sample index `sample`.
    void write_state(Tensor& dst, int sample, std::int64_t pos) const;
    // Pooled twin; scratch holds 3 * (h/win) * (w/win) bytes.
    void write_state_pooled(Tensor& dst, int sample, std::int64_t pos, int win,
                            std::uint8_t* scratch) const;
    // Frame positions of the 4 history slots ending at pos (episode starts
    // and the ring's retained edge repeat backwards).
    std::array<std::int64_t, 4> history_positions(std::int64_t pos) const;

    std::int64_t capacity_ = 0;
    bool object_sensitive_ = false;
    int k_ = 0;
    int frame_h_ = 0, frame_w_ = 0;  // fixed by the first pushed frame
    std::deque<Entry> entries_;
    std::deque<std::int64_t> action_pos_;  // frame positions of transitions
    std::int64_t base_pos_ = 0;            // position of entries_.front()
};

// ----------------------------------------------------------------------------
// Control and learning
// ----------------------------------------------------------------------------

// Draw protocol (fixed): one uniform01 draw u; if u < eps, one uniform_int
// draw over the action count (no forward pass); else the greedy action,
// ties broken by lowest index.
int select_action(const tensornet::QNet& net, const Tensor& state, double eps,
                  Rng& rng);

// target_j = r_j if terminal else r_j + gamma * max_a Q_target(s'_j, a);
// selection and evaluation both on the target net. `online` is unused and
// kept for signature parity with ddqn_target. pooled_batch says the batch
// came from fill_batch_pooled, so forwards enter past the leading pool
// (bit-identical Q-values either way).
std::vector<double> dqn_target(const Batch& batch,
                               const tensornet::QNet& online,
                               const tensornet::QNet& target, double gamma,
                               bool pooled_batch = false);

// a* = argmax_a Q_online(s'_j, a) (lowest index on ties); target_j = r_j if
// terminal else r_j + gamma * Q_target(s'_j, a*).
std::vector<double> ddqn_target(const Batch& batch,
                                const tensornet::QNet& online,
                                const tensornet::QNet& target, double gamma,
                                bool pooled_batch = false);

// MSE over the batch: loss = (1/B) * sum_j (Q(s_j, a_j) - y_j)^2. Fills
// output_grad (zeroed, then 2*(Q-y)/B at each taken action) for backward().
double loss_and_output_grad(const Tensor& qvalues,
                            const std::vector<int>& actions,
                            const std::vector<double>& targets,
                            Tensor& output_grad);

// One optimizer step on `online` from the batch: targets per cfg.algo
// (dueling uses the dqn rule; the head is the only difference), MSE loss,
// backward, RMSProp. Returns the loss. Throws TrainingError on non-finite
// loss or gradients. With pooled_batch, the batch tensors carry the leading
// pool's output (fill_batch_pooled) and every forward enters past it;
// losses and parameter updates are bit-identical to the unpooled path.
double train_step(tensornet::QNet& online, const tensornet::QNet& target,
                  const Batch& batch, const AgentConfig& cfg,
                  bool pooled_batch = false);

// target becomes a deep copy of online.
void sync_target(tensornet::QNet& target, const tensornet::QNet& online);

// ----------------------------------------------------------------------------
// Evaluation and the training loop
// ----------------------------------------------------------------------------

struct EvalStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample stddev (n-1); 0 for a single play
    int plays = 0;
};

// `plays` ε-greedy rollouts of the net; play p runs on env seed
// mix_seed(seed, 2p) with action stream mix_seed(seed, 2p+1). Scores are the
// raw (unnormalized) episode scores.
EvalStats evaluate(const tensornet::QNet& net, const envsim::EnvConfig& env_cfg,
                   int plays, double eps, std::uint64_t seed,
                   bool object_sensitive);

// Seed of the in-training evaluation at frame counter `frame`; cmd_eval
// replays a checkpoint's final evaluation via eval_seed(seed, global_step).
std::uint64_t eval_seed(std::uint64_t agent_seed, std::int64_t frame);

// One training-log entry, written at each evaluation point. loss is the mean
// train-step loss since the previous entry (0 before learning starts).
struct LogRow {
    std::int64_t frame = 0;
    std::int64_t episode = 0;
    double loss = 0.0;
    double eps = 0.0;
    double eval_mean = 0.0;
    double eval_std = 0.0;
};

std::string log_header();                  // "frame,episode,loss,eps,..."
std::string log_row_csv(const LogRow& row);

struct TrainResult {
    tensornet::QNet net;
    std::vector<LogRow> log;
    std::int64_t episodes = 0;  // episodes started
};

// Trains for exactly total_frames environment steps: ε-greedy collection,
// one replay train step per frame once size >= learn_start, target sync
// every target_sync frames, evaluation (plus checkpoint write when
// checkpoint_path is non-empty) every eval_every frames. The final net is
// checkpointed at the end as well. `sink`, when set, receives each LogRow
// as it is produced. total_frames = 0 returns the initialized net and an
// empty log.
TrainResult train(const AgentConfig& cfg, const envsim::EnvConfig& env_cfg,
                  std::int64_t total_frames,
                  const std::string& checkpoint_path = {},
                  const std::function<void(const LogRow&)>& sink = {});

}  // namespace odrl::agents
