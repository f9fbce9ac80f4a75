#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pauth/core.hpp"
#include "pauth/envsim.hpp"
#include "pauth/identifier.hpp"
#include "pauth/numerics.hpp"
#include "pauth/rng.hpp"

namespace pauth {

// Dialog MDP state: trajectory embedding, asked-topic indicators, turn index.
// The asked mask is appended explicitly because the triplet objective gives
// the trajectory encoder no reason to keep question history, and a greedy
// policy that cannot tell which topics it already raised re-asks them.
struct MdpState {
    Vec v;         // d_emb + kNumTopics + 1 entries, last one is the turn index
    int turn = 0;
};

MdpState encode_state(const EmbeddingModel& model, const Trajectory& traj, const PoolConfig& cfg);

struct TransitionTuple {
    MdpState s;
    int a = 0;
    MdpState s_next;
    double r = 0.0;
    bool terminal = false;
    // expert's action at s_next; required by pretrain-mode targets on
    // non-terminal tuples
    std::optional<int> expert_a_next;
};

// Bounded FIFO store; sampling is uniform without replacement within a batch.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity);
    void push(TransitionTuple tuple);
    std::size_t size() const { return buf_.size(); }
    std::size_t capacity() const { return cap_; }
    const TransitionTuple& at(std::size_t i) const { return buf_[i]; }
    std::vector<const TransitionTuple*> sample(int batch, Rng& rng) const;

  private:
    std::deque<TransitionTuple> buf_;
    std::size_t cap_;
};

struct EpsSchedule {
    double eps0 = 0.5;
    double eps_min = 0.05;
    double decay = 2048.0;
};

// eps_min + (eps0 - eps_min) * exp(-step / decay)
double epsilon(const EpsSchedule& schedule, long step);

// Q network pair: online net and stochastic-weight-averaged target.
struct QPolicy {
    DenseNet qnet;
    DenseNet target;
    long swa_count = 0;     // completed swa updates
    long action_steps = 0;  // global exploration step counter
    EpsSchedule eps;
    double gamma = 1.0;

    static QPolicy make(int state_dim, const std::vector<int>& hidden, double dropout,
                        std::uint64_t seed);
};

// Epsilon-greedy over the 11 question codes; greedy ties break to the
// lowest action id.
int select_action(const QPolicy& policy, const MdpState& state, long step, Rng& rng, bool greedy);

int greedy_action(const DenseNet& qnet, const MdpState& state);

// Per-turn reward: negative authentication loss of the history so far.
double reward(const EmbeddingModel& model, const Trajectory& traj, const PersonaProfile& persona,
              std::span<const PersonaFact> negs, const PoolConfig& cfg);

enum class TargetMode { dqn, pretrain };

// Bootstrapped target from the SWA net: r for terminal tuples, else
// r + gamma * max_a Q'(s') (dqn) or r + gamma * Q'(s', expert_a_next)
// (pretrain). The target is a constant (no gradient flows through it).
double q_target(const QPolicy& policy, const TransitionTuple& tuple, TargetMode mode);

// target <- eta * qnet + (1 - eta) * target with eta = 1 / (N + 1); after n
// updates the target equals the arithmetic mean of the n online snapshots.
void swa_update(QPolicy& policy);

// Batch-mean loss value and its online-net parameter gradient, for gradient
// verification against finite differences. Bootstrapped targets come from the
// target net and are constants; dropout is inactive.
struct LossGradients {
    double loss = 0.0;
    Vec qnet;  // layout of policy.qnet.params()
};

// Cross-entropy to the taken action plus squared regression to the
// pretrain-mode target, as in imitation_pretrain.
LossGradients imitation_loss_gradients(const QPolicy& policy,
                                       std::span<const TransitionTuple> tuples);
// Squared regression to the dqn-mode target, as in train_verifier.
LossGradients td_loss_gradients(const QPolicy& policy, std::span<const TransitionTuple> tuples);

struct PretrainConfig {
    int epochs = 3;
    int batch = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct PretrainResult {
    std::vector<double> epoch_loss;  // mean imitation loss per epoch
};

// Joint cross-entropy + squared Q-regression on expert transitions (targets
// in pretrain mode). One swa_update per epoch.
PretrainResult imitation_pretrain(QPolicy& policy, std::span<const TransitionTuple> transitions,
                                  const PretrainConfig& cfg);

// Expert rollouts converted to transitions with rewards and expert_a_next.
// Each episode opens with a few random unemitted warmup turns so the
// demonstrations also cover states the expert alone would never reach.
std::vector<TransitionTuple> generate_expert_transitions(
    const GeneratorParams& params, const PoolConfig& cfg, const FactPool& pool,
    const EmbeddingModel& model, std::span<const PersonaProfile> personas, int episodes,
    std::uint64_t seed);

struct VerifierTrainConfig {
    int episodes = 600;
    int batch = 64;
    int epochs_per_episode = 3;
    std::size_t buffer_capacity = 100000;
    // Q-learning here fine-tunes an imitation-pretrained network whose greedy
    // policy is already near the enumeration optimum, and the return gap
    // between good and bad questions is a fraction of a nat. A hot step size
    // lets TD regression noise overwrite that ordering faster than the
    // bootstrapped targets can restore it.
    double lr = 1e-4;
    std::uint64_t seed = 0;
};

struct EpisodeLogRow {
    int episode;
    int persona_id;
    double mean_reward;
    double eps_value;
    double td_loss;  // mean over the episode's regression batches
};

// One episode of epsilon-greedy experience collection, then
// epochs_per_episode passes of minibatch TD regression over the buffer and a
// single swa_update, per episode.
std::vector<EpisodeLogRow> train_verifier(QPolicy& policy, const GeneratorParams& params,
                                          const PoolConfig& cfg, const FactPool& pool,
                                          const EmbeddingModel& model,
                                          std::span<const PersonaProfile> personas,
                                          const VerifierTrainConfig& cfg_train);

// Greedy Q policy exposed through the common question-policy interface.
class LearnedPolicy : public QuestionPolicy {
  public:
    LearnedPolicy(const QPolicy& policy, const EmbeddingModel& model, const PoolConfig& cfg);
    int act(const Trajectory& traj, Rng& rng) override;

  private:
    const QPolicy* policy_;
    const EmbeddingModel* model_;
    PoolConfig cfg_;
};

struct EvalRow {
    std::string policy;
    int persona_id;
    double prec1;
    double prec5;
    double rec5;
    double rec10;
    std::uint64_t seed;
};

// Rolls episodes_per_persona full episodes per persona and scores the final
// trajectories by retrieval. Row order: persona-major, episode-minor means
// are already aggregated per persona.
std::vector<EvalRow> evaluate_policy(const std::string& name, QuestionPolicy& policy,
                                     const GeneratorParams& params, const PoolConfig& cfg,
                                     const FactPool& pool, const EmbeddingModel& model,
                                     std::span<const PersonaProfile> personas,
                                     int episodes_per_persona, std::uint64_t seed);

// Checkpoint: qnet + target + counters/schedule metadata.
void save_policy(const std::string& path, const QPolicy& policy);
QPolicy load_policy(const std::string& path);

}  // namespace pauth
