#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pauth {

inline constexpr int kNumTopics = 11;

// Closed set of question dialog acts. Ids are stable across runs and are the
// action space of every question policy.
struct QuestionCode {
    int id;
    std::string_view label;
};

std::span<const QuestionCode> question_codes();
const QuestionCode& question_code(int id);  // throws std::out_of_range on bad id

// One atomic persona fact: a (topic, payload) pair. fact_id indexes the
// global fact pool and equals topic * payloads_per_topic + payload there.
struct PersonaFact {
    int fact_id = -1;
    int topic = -1;
    int payload = -1;
    bool operator==(const PersonaFact&) const = default;
};

struct PoolConfig {
    int payloads_per_topic = 20;
    // A single deflection symbol keeps the deflection answer deterministic.
    // With several equally weighted symbols every off-topic answer costs
    // log(count) in likelihood, and a policy judged partly on trajectory
    // likelihood learns to stop asking new questions rather than pay it.
    int generic_symbols = 1;
    int pool_size() const { return kNumTopics * payloads_per_topic; }
    int vocab_size() const { return pool_size() + generic_symbols; }
    bool operator==(const PoolConfig&) const = default;
};

using FactPool = std::vector<PersonaFact>;

// Enumerates every (topic, payload) fact; position == fact_id.
FactPool make_fact_pool(const PoolConfig& cfg);

struct PersonaProfile {
    int profile_id = -1;
    std::vector<PersonaFact> facts;
    bool owns_fact(int fact_id) const;
    bool owns_topic(int topic) const;
    bool operator==(const PersonaProfile&) const = default;
};

// Throws std::invalid_argument if the profile breaks its invariants:
// 3..5 facts, no duplicate fact ids, and (optionally) pairwise distinct topics.
void validate_profile(const PersonaProfile& profile, bool require_distinct_topics = true);

// Agent response symbols share one integer id space: a non-negative id
// reveals the fact with that fact_id; -1-g is the g-th generic symbol.
// Questioner symbols are QuestionCode ids and never use this encoding.
inline int reveal_symbol(int fact_id) { return fact_id; }
inline int generic_symbol(int g) { return -1 - g; }
inline bool is_generic(int symbol) { return symbol < 0; }
inline int generic_index(int symbol) { return -1 - symbol; }

// Dense index into [0, vocab_size): reveals first, then generics.
int symbol_flat_index(int symbol, const PoolConfig& cfg);
int symbol_from_flat_index(int flat, const PoolConfig& cfg);

enum class Speaker { questioner, agent };

struct Utterance {
    Speaker speaker = Speaker::questioner;
    int symbol = 0;
    // Exact generator log-probability of this utterance; 0 for questioner
    // turns (the policy is not part of the modeled likelihood).
    double log_likelihood = 0.0;
    bool operator==(const Utterance&) const = default;
};

struct Turn {
    Utterance question;
    Utterance response;
    bool operator==(const Turn&) const = default;
};

struct Trajectory {
    std::vector<Turn> turns;
    std::optional<int> persona_id;
    int t_max = 8;

    // First t turns; t must not exceed the current length.
    Trajectory prefix(int t) const;
    bool operator==(const Trajectory&) const = default;
};

// Structural invariants: at most t_max turns, questioner/agent speaker roles
// in every turn, and non-positive log-likelihoods.
void validate_trajectory(const Trajectory& traj);

// Sum of agent-turn log-likelihoods: ln p(tau) under the generator.
double trajectory_log_likelihood(const Trajectory& traj);

// Line-delimited JSON records, schema version field "v": 1.
std::string to_json_line(const Trajectory& traj);
std::string to_json_line(const PersonaProfile& profile);
Trajectory trajectory_from_json(const std::string& line);
PersonaProfile profile_from_json(const std::string& line);

void write_trajectories(std::ostream& os, std::span<const Trajectory> trajs);
void write_profiles(std::ostream& os, std::span<const PersonaProfile> profiles);
// Readers throw std::runtime_error naming the 1-based line on a bad record.
std::vector<Trajectory> read_trajectories(std::istream& is);
std::vector<PersonaProfile> read_profiles(std::istream& is);

}  // namespace pauth
