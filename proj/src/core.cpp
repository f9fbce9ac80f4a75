#include "pauth/core.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace pauth {

using nlohmann::json;

namespace {

constexpr std::array<QuestionCode, kNumTopics> kQuestionCodes{{
    {0, "ask about family"},
    {1, "ask about pets"},
    {2, "talk about work"},
    {3, "talk about traveling"},
    {4, "ask about age and gender"},
    {5, "talk about hobbies"},
    {6, "talk about music"},
    {7, "talk about food"},
    {8, "talk about movies"},
    {9, "talk about politics"},
    {10, "ask about marital status"},
}};

}  // namespace

std::span<const QuestionCode> question_codes() { return kQuestionCodes; }

const QuestionCode& question_code(int id) {
    if (id < 0 || id >= kNumTopics) throw std::out_of_range("question_code: id outside [0, 11)");
    return kQuestionCodes[static_cast<std::size_t>(id)];
}

FactPool make_fact_pool(const PoolConfig& cfg) {
    if (cfg.payloads_per_topic <= 0) throw std::invalid_argument("make_fact_pool: payloads_per_topic must be positive");
    FactPool pool;
    pool.reserve(static_cast<std::size_t>(cfg.pool_size()));
    for (int topic = 0; topic < kNumTopics; ++topic) {
        for (int payload = 0; payload < cfg.payloads_per_topic; ++payload) {
            pool.push_back(PersonaFact{topic * cfg.payloads_per_topic + payload, topic, payload});
        }
    }
    return pool;
}

bool PersonaProfile::owns_fact(int fact_id) const {
    return std::any_of(facts.begin(), facts.end(), [&](const PersonaFact& f) { return f.fact_id == fact_id; });
}

bool PersonaProfile::owns_topic(int topic) const {
    return std::any_of(facts.begin(), facts.end(), [&](const PersonaFact& f) { return f.topic == topic; });
}

void validate_profile(const PersonaProfile& profile, bool require_distinct_topics) {
    const auto n = profile.facts.size();
    if (n < 3 || n > 5) throw std::invalid_argument("profile: fact count must be in [3, 5]");
    std::set<int> ids;
    std::set<int> topics;
    for (const PersonaFact& f : profile.facts) {
        if (f.fact_id < 0) throw std::invalid_argument("profile: negative fact_id");
        if (f.topic < 0 || f.topic >= kNumTopics) throw std::invalid_argument("profile: topic outside [0, 11)");
        if (f.payload < 0) throw std::invalid_argument("profile: negative payload");
        if (!ids.insert(f.fact_id).second) throw std::invalid_argument("profile: duplicate fact_id");
        if (!topics.insert(f.topic).second && require_distinct_topics)
            throw std::invalid_argument("profile: duplicate topic");
    }
}

int symbol_flat_index(int symbol, const PoolConfig& cfg) {
    if (is_generic(symbol)) {
        const int g = generic_index(symbol);
        if (g >= cfg.generic_symbols) throw std::out_of_range("symbol_flat_index: generic index out of range");
        return cfg.pool_size() + g;
    }
    if (symbol >= cfg.pool_size()) throw std::out_of_range("symbol_flat_index: fact_id out of range");
    return symbol;
}

int symbol_from_flat_index(int flat, const PoolConfig& cfg) {
    if (flat < 0 || flat >= cfg.vocab_size()) throw std::out_of_range("symbol_from_flat_index: out of range");
    if (flat < cfg.pool_size()) return reveal_symbol(flat);
    return generic_symbol(flat - cfg.pool_size());
}

Trajectory Trajectory::prefix(int t) const {
    if (t < 0 || t > static_cast<int>(turns.size())) throw std::out_of_range("prefix: t outside [0, len]");
    Trajectory out;
    out.turns.assign(turns.begin(), turns.begin() + t);
    out.persona_id = persona_id;
    out.t_max = t_max;
    return out;
}

void validate_trajectory(const Trajectory& traj) {
    if (traj.t_max <= 0) throw std::invalid_argument("trajectory: t_max must be positive");
    if (static_cast<int>(traj.turns.size()) > traj.t_max)
        throw std::invalid_argument("trajectory: more turns than t_max");
    for (const Turn& turn : traj.turns) {
        if (turn.question.speaker != Speaker::questioner || turn.response.speaker != Speaker::agent)
            throw std::invalid_argument("trajectory: turn speakers must alternate questioner then agent");
        if (turn.question.symbol < 0 || turn.question.symbol >= kNumTopics)
            throw std::invalid_argument("trajectory: question symbol is not a question code id");
        if (turn.question.log_likelihood != 0.0)
            throw std::invalid_argument("trajectory: questioner turns carry zero log-likelihood");
        if (turn.response.log_likelihood > 0.0)
            throw std::invalid_argument("trajectory: log-likelihood above zero");
    }
}

double trajectory_log_likelihood(const Trajectory& traj) {
    double total = 0.0;
    for (const Turn& turn : traj.turns) total += turn.response.log_likelihood;
    return total;
}

namespace {

json utterance_to_json(const Utterance& u) {
    return json{{"speaker", u.speaker == Speaker::questioner ? "questioner" : "agent"},
                {"symbol", u.symbol},
                {"log_likelihood", u.log_likelihood}};
}

Utterance utterance_from_json(const json& j) {
    Utterance u;
    const std::string speaker = j.at("speaker").get<std::string>();
    if (speaker == "questioner") {
        u.speaker = Speaker::questioner;
    } else if (speaker == "agent") {
        u.speaker = Speaker::agent;
    } else {
        throw std::runtime_error("unknown speaker '" + speaker + "'");
    }
    u.symbol = j.at("symbol").get<int>();
    u.log_likelihood = j.at("log_likelihood").get<double>();
    return u;
}

void check_schema_version(const json& j) {
    if (!j.contains("v") || !j.at("v").is_number_integer() || j.at("v").get<int>() != 1)
        throw std::runtime_error("unsupported schema version (expected \"v\": 1)");
}

}  // namespace

std::string to_json_line(const Trajectory& traj) {
    json turns = json::array();
    for (const Turn& t : traj.turns)
        turns.push_back(json::array({utterance_to_json(t.question), utterance_to_json(t.response)}));
    json j{{"v", 1}, {"T_max", traj.t_max}, {"turns", std::move(turns)}};
    if (traj.persona_id) {
        j["persona_id"] = *traj.persona_id;
    } else {
        j["persona_id"] = nullptr;
    }
    return j.dump();
}

std::string to_json_line(const PersonaProfile& profile) {
    json facts = json::array();
    for (const PersonaFact& f : profile.facts)
        facts.push_back(json{{"fact_id", f.fact_id}, {"topic", f.topic}, {"payload", f.payload}});
    return json{{"v", 1}, {"profile_id", profile.profile_id}, {"facts", std::move(facts)}}.dump();
}

Trajectory trajectory_from_json(const std::string& line) {
    const json j = json::parse(line);
    check_schema_version(j);
    Trajectory traj;
    traj.t_max = j.at("T_max").get<int>();
    if (j.contains("persona_id") && !j.at("persona_id").is_null())
        traj.persona_id = j.at("persona_id").get<int>();
    for (const json& jt : j.at("turns")) {
        if (!jt.is_array() || jt.size() != 2) throw std::runtime_error("turn is not a [question, response] pair");
        traj.turns.push_back(Turn{utterance_from_json(jt[0]), utterance_from_json(jt[1])});
    }
    validate_trajectory(traj);
    return traj;
}

PersonaProfile profile_from_json(const std::string& line) {
    const json j = json::parse(line);
    check_schema_version(j);
    PersonaProfile profile;
    profile.profile_id = j.at("profile_id").get<int>();
    for (const json& jf : j.at("facts")) {
        profile.facts.push_back(PersonaFact{jf.at("fact_id").get<int>(), jf.at("topic").get<int>(),
                                            jf.at("payload").get<int>()});
    }
    return profile;
}

void write_trajectories(std::ostream& os, std::span<const Trajectory> trajs) {
    for (const Trajectory& t : trajs) os << to_json_line(t) << '\n';
}

void write_profiles(std::ostream& os, std::span<const PersonaProfile> profiles) {
    for (const PersonaProfile& p : profiles) os << to_json_line(p) << '\n';
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_records(std::istream& is, Parse parse, const char* what) {
    std::vector<T> out;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(parse(line));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string(what) + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

std::vector<Trajectory> read_trajectories(std::istream& is) {
    return read_records<Trajectory>(is, [](const std::string& l) { return trajectory_from_json(l); },
                                    "trajectory");
}

std::vector<PersonaProfile> read_profiles(std::istream& is) {
    return read_records<PersonaProfile>(is, [](const std::string& l) { return profile_from_json(l); },
                                        "profile");
}

}  // namespace pauth
