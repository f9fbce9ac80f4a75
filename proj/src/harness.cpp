#include "pauth/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace pauth {

namespace fs = std::filesystem;
using nlohmann::json;

GeneratorParams ExperimentConfig::generator() const {
    GeneratorParams p;
    p.variant = variant;
    p.beta = variant == GenVariant::weak ? beta_weak : beta;
    p.b_match = variant == GenVariant::transition ? 0.0 : b_match;
    p.b_own = variant == GenVariant::transition ? 0.0 : b_own;
    p.g_base = g_base;
    return p;
}

void apply_preset(ExperimentConfig& cfg, const std::string& preset) {
    if (preset == "desk") {
        ExperimentConfig fresh;
        fresh.seed = cfg.seed;
        fresh.out_dir = cfg.out_dir;
        cfg = fresh;
        return;
    }
    if (preset == "paper-scale") {
        cfg.train_personas = 1283;
        cfg.test_personas = 129;
        cfg.identifier.d_emb = 128;
        cfg.identifier.margin = 0.5;
        cfg.identifier.phi_hidden = {1024, 1024};
        cfg.identifier.psi_hidden = {1024, 1024};
        cfg.identifier.dropout = 0.2;
        cfg.identifier.lr = 1e-3;
        cfg.identifier.lr_decay = 1.0;
        cfg.identifier.epochs = 10;
        cfg.verifier_hidden = {512, 512};
        cfg.episodes = 3846;
        cfg.pretrain_episodes = 1349;
        return;
    }
    throw std::invalid_argument("apply_preset: unknown preset '" + preset + "' (desk, paper-scale)");
}

namespace {

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_longs(const std::vector<long>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

// Empty input is allowed: hidden-layer lists may be empty (single linear layer).
std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

std::vector<long> parse_long_list(const std::string& s) {
    std::vector<long> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stol(item));
    }
    if (out.empty()) throw std::invalid_argument("expected a comma-separated integer list");
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string dump_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "[run]\n";
    os << "seed = " << c.seed << '\n';
    os << "out = " << c.out_dir << '\n';
    os << "t_max = " << c.t_max << '\n';
    os << "\n[env]\n";
    os << "variant = " << variant_name(c.variant) << '\n';
    os << "beta = " << fmt_g(c.beta) << '\n';
    os << "beta_weak = " << fmt_g(c.beta_weak) << '\n';
    os << "b_match = " << fmt_g(c.b_match) << '\n';
    os << "b_own = " << fmt_g(c.b_own) << '\n';
    os << "g_base = " << fmt_g(c.g_base) << '\n';
    os << "\n[pool]\n";
    os << "payloads_per_topic = " << c.pool.payloads_per_topic << '\n';
    os << "generic_symbols = " << c.pool.generic_symbols << '\n';
    os << "\n[personas]\n";
    os << "train = " << c.train_personas << '\n';
    os << "test = " << c.test_personas << '\n';
    os << "min_facts = " << c.profile.min_facts << '\n';
    os << "max_facts = " << c.profile.max_facts << '\n';
    os << "distinct_topics = " << (c.profile.distinct_topics ? "true" : "false") << '\n';
    os << "\n[identifier]\n";
    os << "d_emb = " << c.identifier.d_emb << '\n';
    os << "margin = " << fmt_g(c.identifier.margin) << '\n';
    os << "normalize = " << (c.identifier.normalize ? "true" : "false") << '\n';
    os << "phi_hidden = " << join_ints(c.identifier.phi_hidden) << '\n';
    os << "psi_hidden = " << join_ints(c.identifier.psi_hidden) << '\n';
    os << "dropout = " << fmt_g(c.identifier.dropout) << '\n';
    os << "lr = " << fmt_g(c.identifier.lr) << '\n';
    os << "lr_decay = " << fmt_g(c.identifier.lr_decay) << '\n';
    os << "weight_decay = " << fmt_g(c.identifier.weight_decay) << '\n';
    os << "epochs = " << c.identifier.epochs << '\n';
    os << "negatives = " << c.identifier.negatives << '\n';
    os << "batch = " << c.identifier.batch << '\n';
    os << "expert_rollouts = " << c.corpus_expert_rollouts << '\n';
    os << "random_rollouts = " << c.corpus_random_rollouts << '\n';
    os << "\n[verifier]\n";
    os << "hidden = " << join_ints(c.verifier_hidden) << '\n';
    os << "dropout = " << fmt_g(c.verifier_dropout) << '\n';
    os << "eps0 = " << fmt_g(c.eps.eps0) << '\n';
    os << "eps_min = " << fmt_g(c.eps.eps_min) << '\n';
    os << "eps_decay = " << fmt_g(c.eps.decay) << '\n';
    os << "buffer_capacity = " << c.buffer_capacity << '\n';
    os << "batch = " << c.verifier_batch << '\n';
    os << "episodes = " << c.episodes << '\n';
    os << "pretrain_episodes = " << c.pretrain_episodes << '\n';
    os << "pretrain_epochs = " << c.pretrain_epochs << '\n';
    os << "epochs_per_episode = " << c.epochs_per_episode << '\n';
    os << "pretrain_lr = " << fmt_g(c.pretrain_lr) << '\n';
    os << "lr = " << fmt_g(c.verifier_lr) << '\n';
    os << "\n[density]\n";
    os << "c0 = " << fmt_g(c.density_c0) << '\n';
    os << "constant_radius = " << fmt_g(c.density_constant_radius) << '\n';
    os << "n_grid = " << join_longs(c.density_n_grid) << '\n';
    os << "seeds = " << c.density_seeds << '\n';
    os << "\n[evaluate]\n";
    os << "episodes_per_persona = " << c.eval_episodes_per_persona << '\n';
    os << "\n[mi]\n";
    os << "rollouts = " << c.mi_rollouts << '\n';
    os << "t_max = " << c.mi_t_max << '\n';
    return os.str();
}

void parse_config(std::istream& is, ExperimentConfig& c) {
    std::string line;
    std::string section;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#' || t.front() == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw std::runtime_error("config line " + std::to_string(line_no) + ": unterminated section");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        try {
            const std::string qual = section + "." + key;
            if (qual == "run.seed") c.seed = std::stoull(value);
            else if (qual == "run.out") c.out_dir = value;
            else if (qual == "run.t_max") c.t_max = std::stoi(value);
            else if (qual == "env.variant") c.variant = variant_from_name(value);
            else if (qual == "env.beta") c.beta = std::stod(value);
            else if (qual == "env.beta_weak") c.beta_weak = std::stod(value);
            else if (qual == "env.b_match") c.b_match = std::stod(value);
            else if (qual == "env.b_own") c.b_own = std::stod(value);
            else if (qual == "env.g_base") c.g_base = std::stod(value);
            else if (qual == "pool.payloads_per_topic") c.pool.payloads_per_topic = std::stoi(value);
            else if (qual == "pool.generic_symbols") c.pool.generic_symbols = std::stoi(value);
            else if (qual == "personas.train") c.train_personas = std::stoi(value);
            else if (qual == "personas.test") c.test_personas = std::stoi(value);
            else if (qual == "personas.min_facts") c.profile.min_facts = std::stoi(value);
            else if (qual == "personas.max_facts") c.profile.max_facts = std::stoi(value);
            else if (qual == "personas.distinct_topics") c.profile.distinct_topics = value == "true";
            else if (qual == "identifier.d_emb") c.identifier.d_emb = std::stoi(value);
            else if (qual == "identifier.margin") c.identifier.margin = std::stod(value);
            else if (qual == "identifier.normalize") c.identifier.normalize = value == "true";
            else if (qual == "identifier.phi_hidden") c.identifier.phi_hidden = parse_int_list(value);
            else if (qual == "identifier.psi_hidden") c.identifier.psi_hidden = parse_int_list(value);
            else if (qual == "identifier.dropout") c.identifier.dropout = std::stod(value);
            else if (qual == "identifier.lr") c.identifier.lr = std::stod(value);
            else if (qual == "identifier.lr_decay") c.identifier.lr_decay = std::stod(value);
            else if (qual == "identifier.weight_decay") c.identifier.weight_decay = std::stod(value);
            else if (qual == "identifier.epochs") c.identifier.epochs = std::stoi(value);
            else if (qual == "identifier.negatives") c.identifier.negatives = std::stoi(value);
            else if (qual == "identifier.batch") c.identifier.batch = std::stoi(value);
            else if (qual == "identifier.expert_rollouts") c.corpus_expert_rollouts = std::stoi(value);
            else if (qual == "identifier.random_rollouts") c.corpus_random_rollouts = std::stoi(value);
            else if (qual == "verifier.hidden") c.verifier_hidden = parse_int_list(value);
            else if (qual == "verifier.dropout") c.verifier_dropout = std::stod(value);
            else if (qual == "verifier.eps0") c.eps.eps0 = std::stod(value);
            else if (qual == "verifier.eps_min") c.eps.eps_min = std::stod(value);
            else if (qual == "verifier.eps_decay") c.eps.decay = std::stod(value);
            else if (qual == "verifier.buffer_capacity") c.buffer_capacity = std::stoull(value);
            else if (qual == "verifier.batch") c.verifier_batch = std::stoi(value);
            else if (qual == "verifier.episodes") c.episodes = std::stoi(value);
            else if (qual == "verifier.pretrain_episodes") c.pretrain_episodes = std::stoi(value);
            else if (qual == "verifier.pretrain_epochs") c.pretrain_epochs = std::stoi(value);
            else if (qual == "verifier.epochs_per_episode") c.epochs_per_episode = std::stoi(value);
            else if (qual == "verifier.pretrain_lr") c.pretrain_lr = std::stod(value);
            else if (qual == "verifier.lr") c.verifier_lr = std::stod(value);
            else if (qual == "density.c0") c.density_c0 = std::stod(value);
            else if (qual == "density.constant_radius") c.density_constant_radius = std::stod(value);
            else if (qual == "density.n_grid") c.density_n_grid = parse_long_list(value);
            else if (qual == "density.seeds") c.density_seeds = std::stoi(value);
            else if (qual == "evaluate.episodes_per_persona") c.eval_episodes_per_persona = std::stoi(value);
            else if (qual == "mi.rollouts") c.mi_rollouts = std::stol(value);
            else if (qual == "mi.t_max") c.mi_t_max = std::stoi(value);
            else
                throw std::runtime_error("unknown key '" + qual + "'");
        } catch (const std::runtime_error&) {
            throw std::runtime_error("config line " + std::to_string(line_no) + ": unknown key '" +
                                     section + "." + key + "'");
        } catch (const std::exception& e) {
            throw std::runtime_error("config line " + std::to_string(line_no) + ": bad value for '" +
                                     key + "': " + e.what());
        }
    }
}

ExperimentConfig load_config_file(const std::string& path, const ExperimentConfig& base) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_config_file: cannot open " + path);
    ExperimentConfig cfg = base;
    parse_config(is, cfg);
    return cfg;
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    const std::string dump = dump_config(cfg);
    return fnv1a64(dump.data(), dump.size());
}

std::uint64_t file_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("file_hash: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        const std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (is.eof()) break;
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

fs::path artifact(const ExperimentConfig& cfg, const std::string& name) {
    return fs::path(cfg.out_dir) / name;
}

void ensure_out_dir(const ExperimentConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw StageError("setup", "cannot create output directory " + cfg.out_dir);
}

// The artifact names the pipeline may emit, in emit order (manifest order).
const std::vector<std::string>& artifact_names() {
    static const std::vector<std::string> names = {
        "config.ini",          "fact_map.json",        "personas_train.jsonl",
        "personas_test.jsonl", "corpus.jsonl",         "identifier_curve.csv",
        "identifier.ckpt",     "pretrain_curve.csv",   "verifier_pretrained.ckpt",
        "verifier_log.csv",    "verifier.ckpt",        "metrics_eval.csv",
        "comparison.csv",      "ablation.csv",         "density_d1_default.csv",
        "density_d1_constant.csv", "mi.csv",
    };
    return names;
}

void write_text_file(const fs::path& path, const std::string& contents, const char* stage) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw StageError(stage, "cannot open " + path.string() + " for writing");
    os << contents;
    if (!os) throw StageError(stage, "write failed for " + path.string());
}

std::vector<PersonaProfile> load_profiles_file(const fs::path& path, const char* stage) {
    std::ifstream is(path);
    if (!is) throw StageError(stage, "cannot open " + path.string());
    try {
        return read_profiles(is);
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

}  // namespace

PersonaSets ensure_personas(const ExperimentConfig& cfg) {
    const char* stage = "gen-personas";
    ensure_out_dir(cfg);
    const fs::path train_path = artifact(cfg, "personas_train.jsonl");
    const fs::path test_path = artifact(cfg, "personas_test.jsonl");
    PersonaSets sets;
    if (fs::exists(train_path) && fs::exists(test_path)) {
        sets.train = load_profiles_file(train_path, stage);
        sets.test = load_profiles_file(test_path, stage);
        return sets;
    }
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        Rng rng = split_rng(cfg.seed, 1);
        std::vector<PersonaProfile> all = sample_profiles(
            pool, cfg.pool, cfg.profile, cfg.train_personas + cfg.test_personas, 0, rng);
        sets.train.assign(all.begin(), all.begin() + cfg.train_personas);
        sets.test.assign(all.begin() + cfg.train_personas, all.end());

        std::ostringstream train_os, test_os;
        write_profiles(train_os, sets.train);
        write_profiles(test_os, sets.test);
        write_text_file(train_path, train_os.str(), stage);
        write_text_file(test_path, test_os.str(), stage);
        write_fact_map(artifact(cfg, "fact_map.json").string(), cfg.pool);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
    return sets;
}

std::vector<CorpusPair> ensure_corpus(const ExperimentConfig& cfg) {
    const char* stage = "corpus";
    PersonaSets sets = ensure_personas(cfg);
    const fs::path corpus_path = artifact(cfg, "corpus.jsonl");
    try {
        if (fs::exists(corpus_path)) {
            std::ifstream is(corpus_path);
            if (!is) throw std::runtime_error("cannot open " + corpus_path.string());
            std::vector<Trajectory> trajs = read_trajectories(is);
            std::map<int, const PersonaProfile*> by_id;
            for (const PersonaProfile& p : sets.train) by_id[p.profile_id] = &p;
            std::vector<CorpusPair> corpus;
            for (Trajectory& t : trajs) {
                if (!t.persona_id || by_id.find(*t.persona_id) == by_id.end())
                    throw std::runtime_error("corpus trajectory references unknown persona");
                corpus.emplace_back(std::move(t), *by_id[*t.persona_id]);
            }
            return corpus;
        }

        const GeneratorParams params = cfg.generator();
        std::vector<CorpusPair> corpus;
        ExpertOraclePolicy expert;
        RandomPolicy random;
        std::uint64_t episode = 0;
        for (const PersonaProfile& persona : sets.train) {
            for (int r = 0; r < cfg.corpus_expert_rollouts; ++r) {
                Rng rng = split_rng(cfg.seed, 0x100000ULL + episode++);
                corpus.emplace_back(run_episode(params, cfg.pool, persona, expert, cfg.t_max, rng),
                                    persona);
            }
            for (int r = 0; r < cfg.corpus_random_rollouts; ++r) {
                Rng rng = split_rng(cfg.seed, 0x100000ULL + episode++);
                corpus.emplace_back(run_episode(params, cfg.pool, persona, random, cfg.t_max, rng),
                                    persona);
            }
        }
        std::ostringstream os;
        for (const CorpusPair& pair : corpus) os << to_json_line(pair.first) << '\n';
        write_text_file(corpus_path, os.str(), stage);
        return corpus;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

EmbeddingModel ensure_identifier(const ExperimentConfig& cfg) {
    const char* stage = "train-identifier";
    const fs::path ckpt = artifact(cfg, "identifier.ckpt");
    try {
        if (fs::exists(ckpt)) return load_identifier(ckpt.string(), cfg.pool);
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
    std::vector<CorpusPair> corpus = ensure_corpus(cfg);
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        IdentifierConfig id_cfg = cfg.identifier;
        id_cfg.seed = splitmix64(cfg.seed ^ 0x1d3ULL);
        TrainedIdentifier trained = train_identifier(corpus, pool, cfg.pool, id_cfg);

        std::ostringstream curve;
        curve << "epoch,mean_triplet_loss\n";
        for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e)
            curve << e << ',' << fmt_g(trained.epoch_loss[e]) << '\n';
        write_text_file(artifact(cfg, "identifier_curve.csv"), curve.str(), stage);
        save_identifier(ckpt.string(), trained.model, cfg.pool);
        return trained.model;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

QPolicy ensure_pretrained_verifier(const ExperimentConfig& cfg) {
    const char* stage = "pretrain-verifier";
    const fs::path ckpt = artifact(cfg, "verifier_pretrained.ckpt");
    try {
        if (fs::exists(ckpt)) return load_policy(ckpt.string());
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
    EmbeddingModel model = ensure_identifier(cfg);
    PersonaSets sets = ensure_personas(cfg);
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        QPolicy policy = QPolicy::make(model.d_emb + kNumTopics + 1, cfg.verifier_hidden,
                                       cfg.verifier_dropout, splitmix64(cfg.seed ^ 0x9f1ULL));
        policy.eps = cfg.eps;
        const std::vector<TransitionTuple> transitions =
            generate_expert_transitions(cfg.generator(), cfg.pool, pool, model, sets.train,
                                        cfg.pretrain_episodes, splitmix64(cfg.seed ^ 0xe25ULL));
        PretrainConfig pre_cfg;
        pre_cfg.epochs = cfg.pretrain_epochs;
        pre_cfg.batch = cfg.verifier_batch;
        pre_cfg.lr = cfg.pretrain_lr;
        pre_cfg.seed = splitmix64(cfg.seed ^ 0xa11ULL);
        const PretrainResult result = imitation_pretrain(policy, transitions, pre_cfg);

        std::ostringstream curve;
        curve << "epoch,mean_imitation_loss\n";
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
            curve << e << ',' << fmt_g(result.epoch_loss[e]) << '\n';
        write_text_file(artifact(cfg, "pretrain_curve.csv"), curve.str(), stage);
        save_policy(ckpt.string(), policy);
        return policy;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

QPolicy ensure_verifier(const ExperimentConfig& cfg) {
    const char* stage = "train-verifier";
    const fs::path ckpt = artifact(cfg, "verifier.ckpt");
    try {
        if (fs::exists(ckpt)) return load_policy(ckpt.string());
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
    QPolicy policy = ensure_pretrained_verifier(cfg);
    EmbeddingModel model = ensure_identifier(cfg);
    PersonaSets sets = ensure_personas(cfg);
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        VerifierTrainConfig train_cfg;
        train_cfg.episodes = cfg.episodes;
        train_cfg.batch = cfg.verifier_batch;
        train_cfg.epochs_per_episode = cfg.epochs_per_episode;
        train_cfg.buffer_capacity = cfg.buffer_capacity;
        train_cfg.lr = cfg.verifier_lr;
        train_cfg.seed = splitmix64(cfg.seed ^ 0x7d2ULL);
        const std::vector<EpisodeLogRow> log =
            train_verifier(policy, cfg.generator(), cfg.pool, pool, model, sets.train, train_cfg);

        std::ostringstream os;
        os << "episode,persona_id,mean_reward,epsilon,td_loss\n";
        for (const EpisodeLogRow& row : log) {
            os << row.episode << ',' << row.persona_id << ',' << fmt_g(row.mean_reward) << ','
               << fmt_g(row.eps_value) << ',' << fmt_g(row.td_loss) << '\n';
        }
        write_text_file(artifact(cfg, "verifier_log.csv"), os.str(), stage);
        save_policy(ckpt.string(), policy);
        return policy;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

namespace {

ComparisonRow aggregate_rows(const std::string& name, const std::vector<EvalRow>& rows) {
    ComparisonRow agg{name, 0.0, 0.0, 0.0, 0.0};
    for (const EvalRow& r : rows) {
        agg.prec1 += r.prec1;
        agg.prec5 += r.prec5;
        agg.rec5 += r.rec5;
        agg.rec10 += r.rec10;
    }
    const double n = static_cast<double>(rows.size());
    agg.prec1 /= n;
    agg.prec5 /= n;
    agg.rec5 /= n;
    agg.rec10 /= n;
    return agg;
}

void append_eval_csv(std::ostringstream& os, const std::vector<EvalRow>& rows) {
    for (const EvalRow& r : rows) {
        os << r.policy << ',' << r.persona_id << ',' << fmt_g(r.prec1) << ',' << fmt_g(r.prec5) << ','
           << fmt_g(r.rec5) << ',' << fmt_g(r.rec10) << ',' << r.seed << '\n';
    }
}

}  // namespace

std::vector<ComparisonRow> run_policy_comparison(const ExperimentConfig& cfg) {
    const char* stage = "evaluate";
    QPolicy qpolicy = ensure_verifier(cfg);
    EmbeddingModel model = ensure_identifier(cfg);
    PersonaSets sets = ensure_personas(cfg);
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        const GeneratorParams params = cfg.generator();
        const std::uint64_t eval_seed = splitmix64(cfg.seed ^ 0xec01ULL);

        std::vector<std::pair<std::string, std::unique_ptr<QuestionPolicy>>> policies;
        policies.emplace_back("learned", std::make_unique<LearnedPolicy>(qpolicy, model, cfg.pool));
        policies.emplace_back("expert_oracle", std::make_unique<ExpertOraclePolicy>());
        policies.emplace_back("random", std::make_unique<RandomPolicy>());
        policies.emplace_back("lm_proxy", std::make_unique<LmProxyPolicy>());
        policies.emplace_back("selfplay_proxy",
                              std::make_unique<SelfplayProxyPolicy>(pool, cfg.pool, cfg.profile));

        std::ostringstream eval_os;
        eval_os << "policy,persona_id,prec@1,prec@5,rec@5,rec@10,seed\n";
        std::vector<ComparisonRow> table;
        for (auto& [name, policy] : policies) {
            const std::vector<EvalRow> rows =
                evaluate_policy(name, *policy, params, cfg.pool, pool, model, sets.test,
                                cfg.eval_episodes_per_persona, eval_seed);
            append_eval_csv(eval_os, rows);
            table.push_back(aggregate_rows(name, rows));
        }
        write_text_file(artifact(cfg, "metrics_eval.csv"), eval_os.str(), stage);

        std::ostringstream cmp_os;
        cmp_os << "policy,prec@1,prec@5,rec@5,rec@10\n";
        for (const ComparisonRow& r : table) {
            cmp_os << r.policy << ',' << fmt_g(r.prec1) << ',' << fmt_g(r.prec5) << ','
                   << fmt_g(r.rec5) << ',' << fmt_g(r.rec10) << '\n';
        }
        write_text_file(artifact(cfg, "comparison.csv"), cmp_os.str(), stage);
        return table;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg) {
    const char* stage = "ablation";
    QPolicy qpolicy = ensure_verifier(cfg);
    EmbeddingModel model = ensure_identifier(cfg);
    PersonaSets sets = ensure_personas(cfg);
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        double mean_facts = 0.0;
        for (const PersonaProfile& p : sets.test) mean_facts += static_cast<double>(p.facts.size());
        mean_facts /= static_cast<double>(sets.test.size());
        const double chance_prec1 = mean_facts / static_cast<double>(cfg.pool.pool_size());
        const std::uint64_t eval_seed = splitmix64(cfg.seed ^ 0xab1aULL);

        std::vector<AblationRow> table;
        std::ostringstream os;
        os << "variant,prec@1,prec@5,rec@5,rec@10,chance_prec@1\n";
        for (GenVariant variant : {GenVariant::full, GenVariant::weak, GenVariant::transition}) {
            ExperimentConfig variant_cfg = cfg;
            variant_cfg.variant = variant;
            LearnedPolicy policy(qpolicy, model, cfg.pool);
            const std::vector<EvalRow> rows =
                evaluate_policy(variant_name(variant), policy, variant_cfg.generator(), cfg.pool, pool,
                                model, sets.test, cfg.eval_episodes_per_persona, eval_seed);
            const ComparisonRow agg = aggregate_rows(variant_name(variant), rows);
            table.push_back(AblationRow{agg.policy, agg.prec1, agg.prec5, agg.rec5, agg.rec10,
                                        chance_prec1});
            os << agg.policy << ',' << fmt_g(agg.prec1) << ',' << fmt_g(agg.prec5) << ','
               << fmt_g(agg.rec5) << ',' << fmt_g(agg.rec10) << ',' << fmt_g(chance_prec1) << '\n';
        }
        write_text_file(artifact(cfg, "ablation.csv"), os.str(), stage);
        return table;
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void run_density_check(const ExperimentConfig& cfg) {
    const char* stage = "density-check";
    ensure_out_dir(cfg);
    try {
        const DensityOracle oracle = gaussian_oracle(1);
        const Vec center{0.0};
        std::vector<std::uint64_t> seeds;
        for (int s = 0; s < cfg.density_seeds; ++s)
            seeds.push_back(splitmix64(cfg.seed ^ (0xd500ULL + static_cast<std::uint64_t>(s))));

        const RadiusSchedule shrinking(cfg.density_c0, 0.5, 1);
        const ConvergenceResult valid =
            convergence_experiment(oracle, center, shrinking, cfg.density_n_grid, seeds);
        std::ostringstream os_valid;
        write_convergence_csv(os_valid, valid);
        write_text_file(artifact(cfg, "density_d1_default.csv"), os_valid.str(), stage);

        const RadiusSchedule constant(cfg.density_constant_radius, 0.0, 1);
        const ConvergenceResult degenerate =
            convergence_experiment(oracle, center, constant, cfg.density_n_grid, seeds);
        std::ostringstream os_const;
        write_convergence_csv(os_const, degenerate);
        write_text_file(artifact(cfg, "density_d1_constant.csv"), os_const.str(), stage);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void run_mi_check(const ExperimentConfig& cfg) {
    const char* stage = "mi-check";
    ensure_out_dir(cfg);
    try {
        const FactPool pool = make_fact_pool(cfg.pool);
        // two personas over disjoint topics, payload 0: the cleanest pool on
        // which expert questioning separates personas within two turns
        PersonaProfile a, b;
        a.profile_id = 0;
        b.profile_id = 1;
        for (int topic = 0; topic < 3; ++topic)
            a.facts.push_back(pool[static_cast<std::size_t>(topic * cfg.pool.payloads_per_topic)]);
        for (int topic = 3; topic < 6; ++topic)
            b.facts.push_back(pool[static_cast<std::size_t>(topic * cfg.pool.payloads_per_topic)]);

        MiSetup setup;
        setup.params = cfg.generator();
        setup.cfg = cfg.pool;
        setup.personas = {a, b};
        setup.t_max = cfg.mi_t_max;

        std::ostringstream os;
        os << "policy,variant,t_max,method,rollouts,value,seed\n";
        const std::string variant = variant_name(setup.params.variant);

        const double exact_expert = exact_mutual_information(setup, enumerable_expert());
        os << "expert," << variant << ',' << setup.t_max << ",exact,0," << fmt_g(exact_expert)
           << ",0\n";
        const double exact_random = exact_mutual_information(setup, enumerable_random());
        os << "random," << variant << ',' << setup.t_max << ",exact,0," << fmt_g(exact_random)
           << ",0\n";

        const std::uint64_t mc_seed = splitmix64(cfg.seed ^ 0x313aULL);
        RandomPolicy random;
        const double mc_random = estimate_mutual_information(setup, random, cfg.mi_rollouts,
                                                             make_rng(mc_seed));
        os << "random," << variant << ',' << setup.t_max << ",mc," << cfg.mi_rollouts << ','
           << fmt_g(mc_random) << ',' << mc_seed << '\n';

        MiSetup transition_setup = setup;
        transition_setup.params = GeneratorParams::preset(GenVariant::transition);
        const double mc_transition = estimate_mutual_information(transition_setup, random,
                                                                 cfg.mi_rollouts, make_rng(mc_seed));
        os << "random,transition," << setup.t_max << ",mc," << cfg.mi_rollouts << ','
           << fmt_g(mc_transition) << ',' << mc_seed << '\n';

        write_text_file(artifact(cfg, "mi.csv"), os.str(), stage);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void write_manifest(const ExperimentConfig& cfg) {
    const char* stage = "manifest";
    ensure_out_dir(cfg);
    try {
        write_text_file(artifact(cfg, "config.ini"), dump_config(cfg), stage);
        json files = json::object();
        for (const std::string& name : artifact_names()) {
            const fs::path path = artifact(cfg, name);
            if (fs::exists(path)) files[name] = hex64(file_hash(path.string()));
        }
        const json manifest{{"config_hash", hex64(config_hash(cfg))}, {"files", files}};
        write_text_file(artifact(cfg, "manifest.json"), manifest.dump(2) + "\n", stage);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void run_pipeline(const ExperimentConfig& cfg) {
    ensure_personas(cfg);
    ensure_corpus(cfg);
    ensure_identifier(cfg);
    ensure_pretrained_verifier(cfg);
    ensure_verifier(cfg);
    run_policy_comparison(cfg);
    run_ablation(cfg);
    run_density_check(cfg);
    run_mi_check(cfg);
    write_manifest(cfg);
}

std::string canonical_fact_string(const PersonaFact& fact) {
    return "t" + std::to_string(fact.topic) + ".p" + std::to_string(fact.payload);
}

void write_fact_map(const std::string& path, const PoolConfig& cfg) {
    const FactPool pool = make_fact_pool(cfg);
    json map = json::object();
    for (const PersonaFact& f : pool) map[canonical_fact_string(f)] = f.fact_id;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_fact_map: cannot open " + path);
    os << map.dump(2) << '\n';
}

IngestResult ingest_corpus(const std::string& path, const std::string& mapping_path,
                           const PoolConfig& cfg) {
    std::ifstream map_is(mapping_path);
    if (!map_is) throw std::runtime_error("ingest_corpus: cannot open mapping " + mapping_path);
    json map_json;
    try {
        map_is >> map_json;
    } catch (const std::exception& e) {
        throw std::runtime_error("ingest_corpus: bad mapping file: " + std::string(e.what()));
    }
    std::map<std::string, int> fact_map;
    for (auto it = map_json.begin(); it != map_json.end(); ++it)
        fact_map[it.key()] = it.value().get<int>();
    const FactPool pool = make_fact_pool(cfg);

    std::ifstream is(path);
    if (!is) throw std::runtime_error("ingest_corpus: cannot open " + path);

    IngestResult result;
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("ingest_corpus: line " + std::to_string(line_no) +
                                     ": malformed record: " + e.what());
        }
        try {
            PersonaProfile profile;
            profile.profile_id =
                j.contains("profile_id") ? j.at("profile_id").get<int>() : static_cast<int>(line_no) - 1;
            bool rejected = false;
            for (const json& jf : j.at("persona")) {
                const std::string fact_str = jf.get<std::string>();
                const auto it = fact_map.find(fact_str);
                if (it == fact_map.end()) {
                    result.rejections.push_back(IngestRejection{line_no, fact_str});
                    rejected = true;
                    continue;
                }
                profile.facts.push_back(pool.at(static_cast<std::size_t>(it->second)));
            }

            Trajectory traj;
            traj.t_max = j.contains("T_max") ? j.at("T_max").get<int>() : 8;
            traj.persona_id = profile.profile_id;
            for (const json& jt : j.at("turns")) {
                Turn turn;
                turn.question = Utterance{Speaker::questioner, jt.at("q").get<int>(), 0.0};
                int symbol = 0;
                const json& r = jt.at("r");
                if (r.is_string()) {
                    const std::string rs = r.get<std::string>();
                    if (!rs.empty() && rs.front() == 'g') {
                        symbol = generic_symbol(std::stoi(rs.substr(1)));
                    } else {
                        const auto it = fact_map.find(rs);
                        if (it == fact_map.end()) {
                            result.rejections.push_back(IngestRejection{line_no, rs});
                            rejected = true;
                            continue;
                        }
                        symbol = reveal_symbol(it->second);
                    }
                } else {
                    symbol = r.get<int>();
                }
                const double ll = jt.contains("ll") ? jt.at("ll").get<double>() : 0.0;
                turn.response = Utterance{Speaker::agent, symbol, ll};
                traj.turns.push_back(turn);
            }
            if (rejected) continue;
            validate_trajectory(traj);
            result.records.emplace_back(std::move(traj), std::move(profile));
        } catch (const std::exception& e) {
            throw std::runtime_error("ingest_corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return result;
}

void export_ingest_corpus(const std::string& path, std::span<const CorpusPair> pairs,
                          const PoolConfig& cfg) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("export_ingest_corpus: cannot open " + path);
    for (const CorpusPair& pair : pairs) {
        json persona = json::array();
        for (const PersonaFact& f : pair.second.facts) persona.push_back(canonical_fact_string(f));
        json turns = json::array();
        for (const Turn& turn : pair.first.turns) {
            json jt{{"q", turn.question.symbol}, {"ll", turn.response.log_likelihood}};
            if (is_generic(turn.response.symbol)) {
                jt["r"] = "g" + std::to_string(generic_index(turn.response.symbol));
            } else {
                const PersonaFact f{turn.response.symbol, turn.response.symbol / cfg.payloads_per_topic,
                                    turn.response.symbol % cfg.payloads_per_topic};
                jt["r"] = canonical_fact_string(f);
            }
            turns.push_back(std::move(jt));
        }
        const json record{{"profile_id", pair.second.profile_id},
                          {"persona", std::move(persona)},
                          {"T_max", pair.first.t_max},
                          {"turns", std::move(turns)}};
        os << record.dump() << '\n';
    }
}

}  // namespace pauth
