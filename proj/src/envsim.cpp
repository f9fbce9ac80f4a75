#include "pauth/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace pauth {

std::string variant_name(GenVariant v) {
    switch (v) {
        case GenVariant::full: return "full";
        case GenVariant::weak: return "weak";
        case GenVariant::transition: return "transition";
    }
    throw std::logic_error("variant_name: unknown variant");
}

GenVariant variant_from_name(const std::string& name) {
    if (name == "full") return GenVariant::full;
    if (name == "weak") return GenVariant::weak;
    if (name == "transition") return GenVariant::transition;
    throw std::invalid_argument("variant_from_name: unknown variant '" + name + "'");
}

GeneratorParams GeneratorParams::preset(GenVariant v) {
    GeneratorParams p;
    p.variant = v;
    switch (v) {
        case GenVariant::full:
            break;
        case GenVariant::weak:
            // Scaled so matched reveals succeed only ~60% of the time while
            // volunteering stays rare: the regime where trajectories can
            // miss facts outright instead of merely re-ordering them.
            p.beta = 0.05;
            break;
        case GenVariant::transition:
            p.b_match = 0.0;
            p.b_own = 0.0;
            break;
    }
    return p;
}

Vec response_distribution(const GeneratorParams& params, const PoolConfig& cfg,
                          const PersonaProfile& persona, int question_id) {
    question_code(question_id);  // bounds check
    if (params.beta <= 0.0) throw std::invalid_argument("response_distribution: beta must be positive");
    const bool transition = params.variant == GenVariant::transition;
    if (!transition && persona.facts.empty())
        throw std::invalid_argument("response_distribution: persona has no facts");

    // logits over candidates; softmax over the candidate set only
    std::vector<int> cand_flat;
    Vec logits;
    if (transition) {
        // whole pool, no persona bonuses
        cand_flat.reserve(static_cast<std::size_t>(cfg.pool_size()));
        for (int f = 0; f < cfg.pool_size(); ++f) {
            cand_flat.push_back(f);
            logits.push_back(0.0);
        }
    } else {
        for (const PersonaFact& f : persona.facts) {
            if (f.fact_id >= cfg.pool_size())
                throw std::invalid_argument("response_distribution: fact outside pool");
            cand_flat.push_back(f.fact_id);
            double b = params.b_own;
            if (f.topic == question_id) b += params.b_match;
            logits.push_back(params.beta * b);
        }
    }
    for (int g = 0; g < cfg.generic_symbols; ++g) {
        cand_flat.push_back(cfg.pool_size() + g);
        logits.push_back(params.beta * params.g_base);
    }

    const Vec probs = softmax(logits);
    Vec out(static_cast<std::size_t>(cfg.vocab_size()), 0.0);
    for (std::size_t i = 0; i < cand_flat.size(); ++i)
        out[static_cast<std::size_t>(cand_flat[i])] = probs[i];
    return out;
}

EnvState make_env(PersonaProfile persona, int t_max, Rng rng) {
    EnvState state;
    state.traj.persona_id = persona.profile_id;
    state.traj.t_max = t_max;
    state.persona = std::move(persona);
    state.rng = rng;
    return state;
}

Utterance step(EnvState& state, int question_id, const GeneratorParams& params, const PoolConfig& cfg) {
    if (state.turn >= state.traj.t_max) throw std::logic_error("step: trajectory already at t_max turns");
    const Vec dist = response_distribution(params, cfg, state.persona, question_id);
    const int flat = sample_categorical(state.rng, dist);
    const int symbol = symbol_from_flat_index(flat, cfg);

    Turn turn;
    turn.question = Utterance{Speaker::questioner, question_id, 0.0};
    turn.response = Utterance{Speaker::agent, symbol, std::log(dist[static_cast<std::size_t>(flat)])};
    state.traj.turns.push_back(turn);
    state.turn += 1;
    return turn.response;
}

PersonaProfile sample_profile(const FactPool& pool, const PoolConfig& cfg,
                              const ProfileOptions& opts, int profile_id, Rng& rng) {
    if (opts.min_facts < 1 || opts.max_facts < opts.min_facts)
        throw std::invalid_argument("sample_profile: bad fact count range");
    const int n_facts = opts.min_facts + rand_index(rng, opts.max_facts - opts.min_facts + 1);
    PersonaProfile profile;
    profile.profile_id = profile_id;
    if (opts.distinct_topics) {
        if (n_facts > kNumTopics) throw std::invalid_argument("sample_profile: more facts than topics");
        std::vector<int> topics = sample_without_replacement(rng, kNumTopics, n_facts);
        std::sort(topics.begin(), topics.end());
        for (int topic : topics) {
            const int payload = rand_index(rng, cfg.payloads_per_topic);
            profile.facts.push_back(pool[static_cast<std::size_t>(topic * cfg.payloads_per_topic + payload)]);
        }
    } else {
        std::vector<int> ids = sample_without_replacement(rng, cfg.pool_size(), n_facts);
        std::sort(ids.begin(), ids.end());
        for (int id : ids) profile.facts.push_back(pool[static_cast<std::size_t>(id)]);
    }
    return profile;
}

std::vector<PersonaProfile> sample_profiles(const FactPool& pool, const PoolConfig& cfg,
                                            const ProfileOptions& opts, int count, int id_base,
                                            Rng& rng) {
    std::vector<PersonaProfile> out;
    std::set<std::vector<int>> seen;
    int attempts = 0;
    const int max_attempts = count * 1000 + 1000;
    while (static_cast<int>(out.size()) < count) {
        if (++attempts > max_attempts)
            throw std::runtime_error("sample_profiles: could not draw enough distinct profiles");
        PersonaProfile p = sample_profile(pool, cfg, opts, id_base + static_cast<int>(out.size()), rng);
        std::vector<int> key;
        for (const PersonaFact& f : p.facts) key.push_back(f.fact_id);
        if (!seen.insert(key).second) continue;
        out.push_back(std::move(p));
    }
    return out;
}

AskedSet asked_topics(const Trajectory& traj) {
    AskedSet asked;
    for (const Turn& t : traj.turns) {
        const int q = t.question.symbol;
        if (q >= 0 && q < kNumTopics) asked.set(static_cast<std::size_t>(q));
    }
    return asked;
}

int expert_policy(const PersonaProfile& persona, const AskedSet& asked, Rng& rng) {
    for (int topic = 0; topic < kNumTopics; ++topic) {
        if (!asked.test(static_cast<std::size_t>(topic)) && persona.owns_topic(topic)) return topic;
    }
    for (int topic = 0; topic < kNumTopics; ++topic) {
        if (!asked.test(static_cast<std::size_t>(topic))) return topic;
    }
    return rand_index(rng, kNumTopics);
}

int RandomPolicy::act(const Trajectory&, Rng& rng) { return rand_index(rng, kNumTopics); }

LmProxyPolicy::LmProxyPolicy(int hot_a, int hot_b) : probs_(kNumTopics, 0.2 / (kNumTopics - 2)) {
    if (hot_a == hot_b || hot_a < 0 || hot_b < 0 || hot_a >= kNumTopics || hot_b >= kNumTopics)
        throw std::invalid_argument("LmProxyPolicy: hot topics must be two distinct code ids");
    probs_[static_cast<std::size_t>(hot_a)] = 0.4;
    probs_[static_cast<std::size_t>(hot_b)] = 0.4;
}

int LmProxyPolicy::act(const Trajectory&, Rng& rng) { return sample_categorical(rng, probs_); }

void ExpertOraclePolicy::begin_episode(const PersonaProfile& hidden, Rng&) { persona_ = hidden; }

int ExpertOraclePolicy::act(const Trajectory& traj, Rng& rng) {
    return expert_policy(persona_, asked_topics(traj), rng);
}

SelfplayProxyPolicy::SelfplayProxyPolicy(const FactPool& pool, const PoolConfig& cfg, ProfileOptions opts)
    : pool_(&pool), cfg_(cfg), opts_(opts) {}

void SelfplayProxyPolicy::begin_episode(const PersonaProfile&, Rng& rng) {
    proxy_ = sample_profile(*pool_, cfg_, opts_, -1, rng);
}

int SelfplayProxyPolicy::act(const Trajectory& traj, Rng& rng) {
    return expert_policy(proxy_, asked_topics(traj), rng);
}

std::unique_ptr<QuestionPolicy> make_baseline(BaselineKind kind, const FactPool& pool,
                                              const PoolConfig& cfg, const ProfileOptions& opts) {
    switch (kind) {
        case BaselineKind::random: return std::make_unique<RandomPolicy>();
        case BaselineKind::lm_proxy: return std::make_unique<LmProxyPolicy>();
        case BaselineKind::selfplay_proxy: return std::make_unique<SelfplayProxyPolicy>(pool, cfg, opts);
    }
    throw std::logic_error("make_baseline: unknown kind");
}

Trajectory run_episode(const GeneratorParams& params, const PoolConfig& cfg,
                       const PersonaProfile& persona, QuestionPolicy& policy, int t_max, Rng rng) {
    // separate streams so policy randomness does not perturb the generator
    Rng policy_rng = Rng(rng());
    Rng env_rng = Rng(rng());
    EnvState state = make_env(persona, t_max, env_rng);
    policy.begin_episode(persona, policy_rng);
    for (int t = 0; t < t_max; ++t) {
        const int q = policy.act(state.traj, policy_rng);
        step(state, q, params, cfg);
    }
    return state.traj;
}

}  // namespace pauth
