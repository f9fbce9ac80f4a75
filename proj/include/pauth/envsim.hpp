#pragma once

#include <bitset>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pauth/core.hpp"
#include "pauth/numerics.hpp"
#include "pauth/rng.hpp"

namespace pauth {

enum class GenVariant { full, weak, transition };

std::string variant_name(GenVariant v);
GenVariant variant_from_name(const std::string& name);

// Softmax response generator. Candidate responses are the persona's own
// facts plus the generic symbols; the transition variant instead admits the
// whole pool and zeroes both bonuses, making responses persona-independent.
struct GeneratorParams {
    double beta = 1.0;
    // Two logit gaps shape the defaults. Matched questions sit ~10 above the
    // generics, so they draw their fact nearly always and trajectories stay
    // recoverable from counts. Volunteering sits ~60 below, so off-topic
    // questions draw the deflection deterministically: the response
    // log-likelihood is then nearly question-independent, and the triplet
    // term (not the likelihood term) is what a question policy optimizes.
    // The wide gap ratio also leaves a low-temperature regime where matched
    // reveals fail often while volunteering stays rare (see preset(weak)).
    double b_match = 70.0;
    double b_own = -60.0;
    double g_base = 0.0;
    GenVariant variant = GenVariant::full;

    static GeneratorParams preset(GenVariant v);
};

// Exact per-symbol response probabilities for one question, indexed by
// symbol_flat_index over the full vocabulary (non-candidates get 0).
Vec response_distribution(const GeneratorParams& params, const PoolConfig& cfg,
                          const PersonaProfile& persona, int question_id);

struct EnvState {
    PersonaProfile persona;
    Trajectory traj;
    int turn = 0;
    Rng rng;
};

EnvState make_env(PersonaProfile persona, int t_max, Rng rng);

// Asks question_id, samples the agent response, appends the turn (with its
// exact log-likelihood) and returns the response utterance. Throws once the
// trajectory has reached t_max turns.
Utterance step(EnvState& state, int question_id, const GeneratorParams& params, const PoolConfig& cfg);

struct ProfileOptions {
    int min_facts = 3;
    int max_facts = 5;
    bool distinct_topics = true;
};

PersonaProfile sample_profile(const FactPool& pool, const PoolConfig& cfg,
                              const ProfileOptions& opts, int profile_id, Rng& rng);
// count distinct profiles (as fact-id sets); profile_id starts at id_base.
std::vector<PersonaProfile> sample_profiles(const FactPool& pool, const PoolConfig& cfg,
                                            const ProfileOptions& opts, int count, int id_base,
                                            Rng& rng);

using AskedSet = std::bitset<static_cast<std::size_t>(kNumTopics)>;

AskedSet asked_topics(const Trajectory& traj);

// Oracle questioner: lowest-id unasked topic the persona owns, then
// lowest-id unasked topic overall, then uniform random.
int expert_policy(const PersonaProfile& persona, const AskedSet& asked, Rng& rng);

// Question policies hold per-episode state (the self-play proxy resamples
// its stand-in persona each episode). begin_episode sees the hidden persona
// so the oracle policy can cheat; baselines ignore it.
class QuestionPolicy {
  public:
    virtual ~QuestionPolicy() = default;
    virtual void begin_episode(const PersonaProfile& /*hidden*/, Rng& /*rng*/) {}
    virtual int act(const Trajectory& traj, Rng& rng) = 0;
};

class RandomPolicy : public QuestionPolicy {
  public:
    int act(const Trajectory& traj, Rng& rng) override;
};

// Stationary proxy for an off-the-shelf language-model questioner: dwells on
// two fixed topics (0.4 probability each), spreads 0.2 over the rest.
class LmProxyPolicy : public QuestionPolicy {
  public:
    LmProxyPolicy(int hot_a = 2, int hot_b = 5);
    int act(const Trajectory& traj, Rng& rng) override;

  private:
    Vec probs_;
};

class ExpertOraclePolicy : public QuestionPolicy {
  public:
    void begin_episode(const PersonaProfile& hidden, Rng& rng) override;
    int act(const Trajectory& traj, Rng& rng) override;

  private:
    PersonaProfile persona_;
};

// Expert rule driven by a freshly sampled random persona instead of the
// hidden one; models questioning by another persona agent.
class SelfplayProxyPolicy : public QuestionPolicy {
  public:
    SelfplayProxyPolicy(const FactPool& pool, const PoolConfig& cfg, ProfileOptions opts);
    void begin_episode(const PersonaProfile& hidden, Rng& rng) override;
    int act(const Trajectory& traj, Rng& rng) override;

  private:
    const FactPool* pool_;
    PoolConfig cfg_;
    ProfileOptions opts_;
    PersonaProfile proxy_;
};

enum class BaselineKind { random, lm_proxy, selfplay_proxy };
std::unique_ptr<QuestionPolicy> make_baseline(BaselineKind kind, const FactPool& pool,
                                              const PoolConfig& cfg, const ProfileOptions& opts);

// Runs one full episode (t_max turns) of policy against the generator.
Trajectory run_episode(const GeneratorParams& params, const PoolConfig& cfg,
                       const PersonaProfile& persona, QuestionPolicy& policy, int t_max, Rng rng);

}  // namespace pauth
