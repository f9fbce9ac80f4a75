#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "pauth/core.hpp"
#include "pauth/density.hpp"
#include "pauth/envsim.hpp"
#include "pauth/identifier.hpp"
#include "pauth/verifier.hpp"

namespace pauth {

// Full experiment configuration. One flat struct, serialized as a sectioned
// key = value text file; dump/load round-trip exactly.
struct ExperimentConfig {
    // [run]
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    int t_max = 8;
    // [env]
    GenVariant variant = GenVariant::full;
    double beta = 1.0;
    // Temperature for the weak ablation variant, scaled to the logit gaps
    // below (see GeneratorParams): low enough that matched reveals fail
    // noticeably, high enough that volunteering stays rare.
    double beta_weak = 0.05;
    double b_match = 70.0;
    double b_own = -60.0;
    double g_base = 0.0;
    // [pool]
    PoolConfig pool;
    // [personas]
    // Identifier quality is bound by how densely the train split covers fact
    // co-occurrence; below roughly a thousand personas the fact encoder tunes
    // itself to the specific train-time fact pairings and held-out retrieval
    // drops hard.
    int train_personas = 2400;
    int test_personas = 40;
    ProfileOptions profile;
    // [identifier]
    IdentifierConfig identifier;
    // Expert-only corpus: random-policy rollouts leave roughly half of each
    // persona's facts unrevealed, and those positives put a floor under the
    // mean triplet loss that no generalizing encoder can cross.
    int corpus_expert_rollouts = 2;
    int corpus_random_rollouts = 0;
    // [verifier]
    std::vector<int> verifier_hidden = {128, 128};
    double verifier_dropout = 0.1;
    EpsSchedule eps;
    std::size_t buffer_capacity = 100000;
    int verifier_batch = 64;
    int episodes = 600;
    // Warmup turns shrink the per-episode tuple yield, and the cloned policy
    // is what Q-learning refines, so the imitation stage gets extra data and
    // passes rather than leaning on the Q phase to repair a weak clone.
    int pretrain_episodes = 600;
    int pretrain_epochs = 12;
    int epochs_per_episode = 3;
    double pretrain_lr = 1e-3;
    // The Q phase fine-tunes a clone that is already near the enumeration
    // optimum, and return gaps between questions are a fraction of a nat, so
    // it runs an order of magnitude cooler than the imitation phase.
    double verifier_lr = 1e-4;
    // [density]
    double density_c0 = 4.0;
    double density_constant_radius = 1.0;
    std::vector<long> density_n_grid = {1000, 10000, 100000};
    int density_seeds = 10;
    // [evaluate]
    // Sized so rare per-episode events (a weak-variant trajectory revealing
    // nothing) show up reliably in the variant comparison: 40 test personas
    // give 1000 evaluation episodes per policy and per variant.
    int eval_episodes_per_persona = 25;
    // [mi]
    long mi_rollouts = 20000;
    int mi_t_max = 2;

    GeneratorParams generator() const;
};

// desk: CI-sized defaults above. paper-scale: full-size persona counts and
// network widths (long-running; not exercised by the test suite).
void apply_preset(ExperimentConfig& cfg, const std::string& preset);

std::string dump_config(const ExperimentConfig& cfg);
void parse_config(std::istream& is, ExperimentConfig& cfg);  // overlays onto cfg
ExperimentConfig load_config_file(const std::string& path, const ExperimentConfig& base);

// FNV-1a 64 over the canonical dump; changes iff some field changes.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t file_hash(const std::string& path);

// Stage failures carry the stage tag so the CLI can report it and return a
// nonzero exit code.
class StageError : public std::runtime_error {
  public:
    StageError(std::string stage, const std::string& message)
        : std::runtime_error("[stage=" + stage + "] " + message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

  private:
    std::string stage_;
};

struct PersonaSets {
    std::vector<PersonaProfile> train;
    std::vector<PersonaProfile> test;
};

// Every stage loads its artifact from out_dir when present and otherwise
// computes and persists it, so each CLI subcommand is independently runnable.
PersonaSets ensure_personas(const ExperimentConfig& cfg);
std::vector<CorpusPair> ensure_corpus(const ExperimentConfig& cfg);
EmbeddingModel ensure_identifier(const ExperimentConfig& cfg);
QPolicy ensure_pretrained_verifier(const ExperimentConfig& cfg);
QPolicy ensure_verifier(const ExperimentConfig& cfg);

struct ComparisonRow {
    std::string policy;
    double prec1;
    double prec5;
    double rec5;
    double rec10;
};

// Evaluates learned + baseline policies on the held-out personas; writes
// metrics_eval.csv (per persona) and comparison.csv (aggregate).
std::vector<ComparisonRow> run_policy_comparison(const ExperimentConfig& cfg);

struct AblationRow {
    std::string variant;
    double prec1;
    double prec5;
    double rec5;
    double rec10;
    double chance_prec1;  // analytic chance level mean(|facts|) / pool size
};

// Learned policy (trained on the full variant) evaluated against each input
// model variant; writes ablation.csv.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg);

// Convergence experiment on the 1-D Gaussian oracle, with both the default
// shrinking schedule and the degenerate constant-radius one; writes
// density_d1_default.csv / density_d1_constant.csv.
void run_density_check(const ExperimentConfig& cfg);

// Exact-enumeration and Monte Carlo mutual-information sanity runs on an
// engineered two-persona pool; writes mi.csv.
void run_mi_check(const ExperimentConfig& cfg);

// All stages in order, then the manifest.
void run_pipeline(const ExperimentConfig& cfg);

// config.ini + manifest.json (config hash and per-file content hashes of
// every artifact present in out_dir that the pipeline knows about).
void write_manifest(const ExperimentConfig& cfg);

struct IngestRejection {
    long line;
    std::string fact;
};

struct IngestResult {
    std::vector<CorpusPair> records;
    std::vector<IngestRejection> rejections;  // unmapped facts, by input line
};

// External PersonaChat-shaped corpus: one JSON object per line with
// "persona" (fact strings) and "turns" ([{q, r, ll?}]). Fact strings resolve
// through an explicit string -> fact_id mapping file. Records with unmapped
// facts are rejected (collected in the report); malformed lines throw.
IngestResult ingest_corpus(const std::string& path, const std::string& mapping_path,
                           const PoolConfig& cfg);

// Inverse of ingest_corpus for synthetic data; ingesting the export yields
// the same records.
void export_ingest_corpus(const std::string& path, std::span<const CorpusPair> pairs,
                          const PoolConfig& cfg);
void write_fact_map(const std::string& path, const PoolConfig& cfg);
std::string canonical_fact_string(const PersonaFact& fact);

}  // namespace pauth
