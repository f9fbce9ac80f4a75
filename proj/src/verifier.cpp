#include "pauth/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace pauth {

using nlohmann::json;

MdpState encode_state(const EmbeddingModel& model, const Trajectory& traj, const PoolConfig& cfg) {
    MdpState state;
    state.turn = static_cast<int>(traj.turns.size());
    state.v = embed_trajectory(model, traj, cfg);
    const AskedSet asked = asked_topics(traj);
    for (int topic = 0; topic < kNumTopics; ++topic)
        state.v.push_back(asked.test(static_cast<std::size_t>(topic)) ? 1.0 : 0.0);
    state.v.push_back(static_cast<double>(state.turn));
    return state;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : cap_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
}

void ReplayBuffer::push(TransitionTuple tuple) {
    if (buf_.size() == cap_) buf_.pop_front();  // evict oldest
    buf_.push_back(std::move(tuple));
}

std::vector<const TransitionTuple*> ReplayBuffer::sample(int batch, Rng& rng) const {
    if (batch < 1) throw std::invalid_argument("ReplayBuffer::sample: batch must be >= 1");
    if (static_cast<std::size_t>(batch) > buf_.size())
        throw std::invalid_argument("ReplayBuffer::sample: batch exceeds stored tuples");
    std::vector<int> picks = sample_without_replacement(rng, static_cast<int>(buf_.size()), batch);
    std::vector<const TransitionTuple*> out;
    out.reserve(static_cast<std::size_t>(batch));
    for (int i : picks) out.push_back(&buf_[static_cast<std::size_t>(i)]);
    return out;
}

double epsilon(const EpsSchedule& schedule, long step) {
    if (step < 0) throw std::invalid_argument("epsilon: negative step");
    const double eps =
        schedule.eps_min + (schedule.eps0 - schedule.eps_min) *
                               std::exp(-static_cast<double>(step) / schedule.decay);
    return std::clamp(eps, schedule.eps_min, schedule.eps0);
}

QPolicy QPolicy::make(int state_dim, const std::vector<int>& hidden, double dropout,
                      std::uint64_t seed) {
    QPolicy policy;
    policy.qnet = DenseNet(state_dim, hidden, kNumTopics, Activation::tanh, Activation::identity,
                           dropout, splitmix64(seed ^ 0x716e6574ULL));
    // target starts as a copy of the online net
    policy.target = DenseNet::from_parts(policy.qnet.dims(),
                                         [&] {
                                             std::vector<Activation> acts;
                                             for (int l = 0; l < policy.qnet.n_layers(); ++l)
                                                 acts.push_back(policy.qnet.activation(l));
                                             return acts;
                                         }(),
                                         dropout, policy.qnet.seed(), policy.qnet.params());
    return policy;
}

int greedy_action(const DenseNet& qnet, const MdpState& state) {
    const Vec q = forward(qnet, state.v);
    int best = 0;
    for (int a = 1; a < static_cast<int>(q.size()); ++a) {
        if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
    }
    return best;
}

int select_action(const QPolicy& policy, const MdpState& state, long step, Rng& rng, bool greedy) {
    if (!greedy && rand_uniform(rng) < epsilon(policy.eps, step)) return rand_index(rng, kNumTopics);
    return greedy_action(policy.qnet, state);
}

double reward(const EmbeddingModel& model, const Trajectory& traj, const PersonaProfile& persona,
              std::span<const PersonaFact> negs, const PoolConfig& cfg) {
    return -authentication_loss(model, traj, persona, negs, cfg);
}

double q_target(const QPolicy& policy, const TransitionTuple& tuple, TargetMode mode) {
    if (tuple.terminal) return tuple.r;
    const Vec q_next = forward(policy.target, tuple.s_next.v);
    double bootstrap;
    if (mode == TargetMode::dqn) {
        bootstrap = *std::max_element(q_next.begin(), q_next.end());
    } else {
        if (!tuple.expert_a_next)
            throw std::invalid_argument("q_target: pretrain mode requires expert_a_next");
        bootstrap = q_next[static_cast<std::size_t>(*tuple.expert_a_next)];
    }
    return tuple.r + policy.gamma * bootstrap;
}

void swa_update(QPolicy& policy) {
    const double eta = 1.0 / static_cast<double>(policy.swa_count + 1);
    const Vec& online = policy.qnet.params();
    Vec& target = policy.target.mutable_params();
    if (online.size() != target.size()) throw std::logic_error("swa_update: parameter size mismatch");
    for (std::size_t i = 0; i < target.size(); ++i)
        target[i] = eta * online[i] + (1.0 - eta) * target[i];
    policy.swa_count += 1;
}

LossGradients imitation_loss_gradients(const QPolicy& policy,
                                       std::span<const TransitionTuple> tuples) {
    if (tuples.empty()) throw std::invalid_argument("imitation_loss_gradients: no tuples");
    LossGradients out;
    out.qnet.assign(policy.qnet.params().size(), 0.0);
    const double w = 1.0 / static_cast<double>(tuples.size());
    for (const TransitionTuple& t : tuples) {
        const double target = q_target(policy, t, TargetMode::pretrain);
        ForwardCache cache;
        const Vec q = forward(policy.qnet, t.s.v, false, nullptr, &cache);
        const Vec logp = log_softmax(q);
        const Vec p = softmax(q);
        const std::size_t a = static_cast<std::size_t>(t.a);
        const double resid = q[a] - target;
        out.loss += w * (-logp[a] + resid * resid);
        Vec grad_out(q.size());
        for (std::size_t j = 0; j < q.size(); ++j) grad_out[j] = w * p[j];
        grad_out[a] -= w;
        grad_out[a] += w * 2.0 * resid;
        const Gradients g = backward(policy.qnet, cache, grad_out);
        for (std::size_t j = 0; j < out.qnet.size(); ++j) out.qnet[j] += g.params[j];
    }
    return out;
}

LossGradients td_loss_gradients(const QPolicy& policy, std::span<const TransitionTuple> tuples) {
    if (tuples.empty()) throw std::invalid_argument("td_loss_gradients: no tuples");
    LossGradients out;
    out.qnet.assign(policy.qnet.params().size(), 0.0);
    const double w = 1.0 / static_cast<double>(tuples.size());
    for (const TransitionTuple& t : tuples) {
        const double target = q_target(policy, t, TargetMode::dqn);
        ForwardCache cache;
        const Vec q = forward(policy.qnet, t.s.v, false, nullptr, &cache);
        const std::size_t a = static_cast<std::size_t>(t.a);
        const double resid = q[a] - target;
        out.loss += w * resid * resid;
        Vec grad_out(q.size(), 0.0);
        grad_out[a] = w * 2.0 * resid;
        const Gradients g = backward(policy.qnet, cache, grad_out);
        for (std::size_t j = 0; j < out.qnet.size(); ++j) out.qnet[j] += g.params[j];
    }
    return out;
}

PretrainResult imitation_pretrain(QPolicy& policy, std::span<const TransitionTuple> transitions,
                                  const PretrainConfig& cfg) {
    if (transitions.empty()) throw std::invalid_argument("imitation_pretrain: no transitions");
    for (const TransitionTuple& t : transitions) {
        if (!t.terminal && !t.expert_a_next)
            throw std::invalid_argument("imitation_pretrain: non-terminal tuple lacks expert_a_next");
    }

    AdamState opt(policy.qnet.params().size(), cfg.lr);
    Rng order_rng = split_rng(cfg.seed, 11);
    Rng dropout_rng = split_rng(cfg.seed, 12);
    std::vector<int> order(transitions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    PretrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rand_index(order_rng, i + 1))]);

        double loss_sum = 0.0;
        long loss_count = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            Vec grad(policy.qnet.params().size(), 0.0);
            const double w = 1.0 / static_cast<double>(stop - start);
            for (std::size_t bi = start; bi < stop; ++bi) {
                const TransitionTuple& t = transitions[static_cast<std::size_t>(order[bi])];
                const double target = q_target(policy, t, TargetMode::pretrain);

                ForwardCache cache;
                const Vec q = forward(policy.qnet, t.s.v, true, &dropout_rng, &cache);
                const Vec logp = log_softmax(q);
                const Vec p = softmax(q);
                const std::size_t a = static_cast<std::size_t>(t.a);

                const double resid = q[a] - target;
                loss_sum += -logp[a] + resid * resid;
                loss_count += 1;

                // d/dq of (-log softmax(q)[a]) is softmax(q) - onehot(a);
                // the regression term adds 2 * resid at the taken action
                Vec grad_out(q.size());
                for (std::size_t j = 0; j < q.size(); ++j) grad_out[j] = w * p[j];
                grad_out[a] -= w;
                grad_out[a] += w * 2.0 * resid;
                const Gradients g = backward(policy.qnet, cache, grad_out);
                for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g.params[j];
            }
            adam_step(policy.qnet.mutable_params(), grad, opt);
        }
        swa_update(policy);
        result.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
        if (!std::isfinite(result.epoch_loss.back()))
            throw std::runtime_error("imitation_pretrain: non-finite loss (diverged)");
    }
    return result;
}

namespace {

// Rolls one episode with the supplied action chooser and converts it to
// transition tuples. Rewards use one fixed profile-sized negative set drawn
// per episode. expert_next fills expert_a_next from the expert rule. Turns
// before emit_from still advance the environment but produce no tuples.
template <typename ChooseAction>
std::vector<TransitionTuple> rollout_transitions(const GeneratorParams& params, const PoolConfig& cfg,
                                                 const FactPool& pool, const EmbeddingModel& model,
                                                 const PersonaProfile& persona, int t_max,
                                                 ChooseAction choose, bool expert_next, int emit_from,
                                                 Rng& rng) {
    const std::vector<PersonaFact> negs =
        sample_negatives(pool, persona, static_cast<int>(persona.facts.size()), rng);
    Rng env_rng = Rng(rng());
    Rng expert_rng = Rng(rng());
    EnvState env = make_env(persona, t_max, env_rng);

    std::vector<TransitionTuple> out;
    MdpState state = encode_state(model, env.traj, cfg);
    for (int t = 0; t < t_max; ++t) {
        const int a = choose(state, env.traj);
        step(env, a, params, cfg);
        MdpState next = encode_state(model, env.traj, cfg);
        if (t >= emit_from) {
            TransitionTuple tuple;
            tuple.s = state;
            tuple.a = a;
            tuple.s_next = next;
            tuple.r = reward(model, env.traj, persona, negs, cfg);
            tuple.terminal = t + 1 == t_max;
            if (expert_next && !tuple.terminal)
                tuple.expert_a_next = expert_policy(persona, asked_topics(env.traj), expert_rng);
            out.push_back(std::move(tuple));
        }
        state = std::move(next);
    }
    return out;
}

}  // namespace

std::vector<TransitionTuple> generate_expert_transitions(
    const GeneratorParams& params, const PoolConfig& cfg, const FactPool& pool,
    const EmbeddingModel& model, std::span<const PersonaProfile> personas, int episodes,
    std::uint64_t seed) {
    if (personas.empty()) throw std::invalid_argument("generate_expert_transitions: no personas");
    std::vector<TransitionTuple> out;
    for (int ep = 0; ep < episodes; ++ep) {
        Rng rng = split_rng(seed, 0x4000ULL + static_cast<std::uint64_t>(ep));
        const PersonaProfile& persona = personas[static_cast<std::size_t>(ep) % personas.size()];
        Rng expert_rng = Rng(rng());
        Rng warmup_rng = Rng(rng());
        // A pure expert never asks a topic the persona lacks, so its state
        // distribution misses every "asked but nothing revealed" state; the
        // greedy clone then faces those states untrained as soon as one of
        // its own guesses misses. Random warmup turns (not emitted, expert
        // labels afterwards) put such states into the demonstration set.
        const int warmup = rand_index(warmup_rng, 5);
        auto choose = [&](const MdpState&, const Trajectory& traj) {
            if (static_cast<int>(traj.turns.size()) < warmup)
                return rand_index(warmup_rng, kNumTopics);
            return expert_policy(persona, asked_topics(traj), expert_rng);
        };
        std::vector<TransitionTuple> eps_tuples =
            rollout_transitions(params, cfg, pool, model, persona, /*t_max=*/8, choose,
                                /*expert_next=*/true, /*emit_from=*/warmup, rng);
        for (TransitionTuple& t : eps_tuples) out.push_back(std::move(t));
    }
    return out;
}

std::vector<EpisodeLogRow> train_verifier(QPolicy& policy, const GeneratorParams& params,
                                          const PoolConfig& cfg, const FactPool& pool,
                                          const EmbeddingModel& model,
                                          std::span<const PersonaProfile> personas,
                                          const VerifierTrainConfig& cfg_train) {
    if (personas.empty()) throw std::invalid_argument("train_verifier: no personas");
    ReplayBuffer buffer(cfg_train.buffer_capacity);
    AdamState opt(policy.qnet.params().size(), cfg_train.lr);
    Rng dropout_rng = split_rng(cfg_train.seed, 21);
    Rng batch_rng = split_rng(cfg_train.seed, 22);

    std::vector<EpisodeLogRow> log;
    for (int ep = 0; ep < cfg_train.episodes; ++ep) {
        Rng ep_rng = split_rng(cfg_train.seed, 0x8000ULL + static_cast<std::uint64_t>(ep));
        const PersonaProfile& persona =
            personas[static_cast<std::size_t>(rand_index(ep_rng, static_cast<int>(personas.size())))];
        Rng action_rng = Rng(ep_rng());

        double reward_sum = 0.0;
        auto choose = [&](const MdpState& s, const Trajectory&) {
            const int a = select_action(policy, s, policy.action_steps, action_rng, /*greedy=*/false);
            policy.action_steps += 1;
            return a;
        };
        std::vector<TransitionTuple> tuples =
            rollout_transitions(params, cfg, pool, model, persona, /*t_max=*/8, choose,
                                /*expert_next=*/false, /*emit_from=*/0, ep_rng);
        const int t_max = static_cast<int>(tuples.size());
        for (TransitionTuple& t : tuples) {
            reward_sum += t.r;
            buffer.push(std::move(t));
        }

        // minibatch TD regression over the buffer, epochs_per_episode passes
        double td_sum = 0.0;
        long td_count = 0;
        const int batch = static_cast<int>(
            std::min<std::size_t>(static_cast<std::size_t>(cfg_train.batch), buffer.size()));
        const long batches_per_epoch =
            (static_cast<long>(buffer.size()) + batch - 1) / static_cast<long>(batch);
        for (int pass = 0; pass < cfg_train.epochs_per_episode; ++pass) {
            for (long b = 0; b < batches_per_epoch; ++b) {
                const std::vector<const TransitionTuple*> sampled = buffer.sample(batch, batch_rng);
                Vec grad(policy.qnet.params().size(), 0.0);
                const double w = 1.0 / static_cast<double>(sampled.size());
                for (const TransitionTuple* t : sampled) {
                    const double target = q_target(policy, *t, TargetMode::dqn);
                    ForwardCache cache;
                    const Vec q = forward(policy.qnet, t->s.v, true, &dropout_rng, &cache);
                    const std::size_t a = static_cast<std::size_t>(t->a);
                    const double resid = q[a] - target;
                    td_sum += resid * resid;
                    td_count += 1;
                    Vec grad_out(q.size(), 0.0);
                    grad_out[a] = w * 2.0 * resid;
                    const Gradients g = backward(policy.qnet, cache, grad_out);
                    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g.params[j];
                }
                adam_step(policy.qnet.mutable_params(), grad, opt);
            }
        }
        swa_update(policy);

        EpisodeLogRow row;
        row.episode = ep;
        row.persona_id = persona.profile_id;
        row.mean_reward = reward_sum / static_cast<double>(t_max);
        row.eps_value = epsilon(policy.eps, policy.action_steps);
        row.td_loss = td_count > 0 ? td_sum / static_cast<double>(td_count) : 0.0;
        log.push_back(row);
        if (!std::isfinite(row.td_loss) || !std::isfinite(row.mean_reward))
            throw std::runtime_error("train_verifier: non-finite training signal (diverged)");
    }
    return log;
}

LearnedPolicy::LearnedPolicy(const QPolicy& policy, const EmbeddingModel& model, const PoolConfig& cfg)
    : policy_(&policy), model_(&model), cfg_(cfg) {}

int LearnedPolicy::act(const Trajectory& traj, Rng&) {
    return greedy_action(policy_->qnet, encode_state(*model_, traj, cfg_));
}

std::vector<EvalRow> evaluate_policy(const std::string& name, QuestionPolicy& policy,
                                     const GeneratorParams& params, const PoolConfig& cfg,
                                     const FactPool& pool, const EmbeddingModel& model,
                                     std::span<const PersonaProfile> personas,
                                     int episodes_per_persona, std::uint64_t seed) {
    if (personas.empty()) throw std::invalid_argument("evaluate_policy: no personas");
    if (episodes_per_persona < 1)
        throw std::invalid_argument("evaluate_policy: episodes_per_persona must be >= 1");
    std::vector<EvalRow> rows;
    for (const PersonaProfile& persona : personas) {
        double prec1 = 0.0, prec5 = 0.0, rec5 = 0.0, rec10 = 0.0;
        for (int ep = 0; ep < episodes_per_persona; ++ep) {
            // env stream depends on (persona, episode) only, so policies are
            // compared on the same stream of generator randomness
            Rng rng = split_rng(seed, (static_cast<std::uint64_t>(persona.profile_id) << 20) ^
                                          static_cast<std::uint64_t>(ep));
            const Trajectory traj = run_episode(params, cfg, persona, policy, /*t_max=*/8, rng);
            const std::vector<PersonaFact> top10 = retrieve_topk(model, traj, pool, 10, cfg);
            prec1 += prec_at_k(top10, persona, 1);
            prec5 += prec_at_k(top10, persona, 5);
            rec5 += rec_at_k(top10, persona, 5);
            rec10 += rec_at_k(top10, persona, 10);
        }
        const double m = static_cast<double>(episodes_per_persona);
        rows.push_back(EvalRow{name, persona.profile_id, prec1 / m, prec5 / m, rec5 / m, rec10 / m, seed});
    }
    return rows;
}

void save_policy(const std::string& path, const QPolicy& policy) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_policy: cannot open " + path);
    const json meta{{"swa_count", policy.swa_count},
                    {"action_steps", policy.action_steps},
                    {"eps0", policy.eps.eps0},
                    {"eps_min", policy.eps.eps_min},
                    {"decay", policy.eps.decay},
                    {"gamma", policy.gamma}};
    os << "PAUTHQ 1\n" << meta.dump() << '\n';
    save_net(os, policy.qnet);
    save_net(os, policy.target);
}

QPolicy load_policy(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_policy: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "PAUTHQ 1")
        throw std::runtime_error("load_policy: bad magic or schema version");
    if (!std::getline(is, line)) throw std::runtime_error("load_policy: missing metadata");
    const json meta = json::parse(line);
    QPolicy policy;
    policy.swa_count = meta.at("swa_count").get<long>();
    policy.action_steps = meta.at("action_steps").get<long>();
    policy.eps.eps0 = meta.at("eps0").get<double>();
    policy.eps.eps_min = meta.at("eps_min").get<double>();
    policy.eps.decay = meta.at("decay").get<double>();
    policy.gamma = meta.at("gamma").get<double>();
    policy.qnet = load_net(is);
    policy.target = load_net(is);
    return policy;
}

}  // namespace pauth
