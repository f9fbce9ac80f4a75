#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pauth/core.hpp"
#include "pauth/numerics.hpp"
#include "pauth/rng.hpp"

namespace pauth {

// Order-invariant trajectory summary consumed by the trajectory encoder:
// agent response-symbol counts, question-code counts, and the turn count.
struct TrajectoryFeatures {
    Vec counts;           // vocab_size entries
    Vec question_counts;  // kNumTopics entries
    double turn = 0.0;

    Vec concat() const;
    static int dim(const PoolConfig& cfg) { return cfg.vocab_size() + kNumTopics + 1; }
};

TrajectoryFeatures featurize(const Trajectory& traj, const PoolConfig& cfg);

// One-hot topic + one-hot payload encoding of a fact.
Vec fact_features(const PersonaFact& fact, const PoolConfig& cfg);
inline int fact_feature_dim(const PoolConfig& cfg) { return kNumTopics + cfg.payloads_per_topic; }

// Contrastive embedding pair: phi embeds trajectories, psi embeds facts,
// both into the same d_emb space (optionally L2-normalized).
struct EmbeddingModel {
    DenseNet phi;
    DenseNet psi;
    double margin = 0.5;
    int d_emb = 32;
    bool normalize = true;
};

Vec embed_trajectory(const EmbeddingModel& model, const Trajectory& traj, const PoolConfig& cfg);
Vec embed_fact(const EmbeddingModel& model, const PersonaFact& fact, const PoolConfig& cfg);

// Hinge on margin + d(anchor, pos) - d(anchor, neg), averaged over negatives.
double triplet_loss(const EmbeddingModel& model, const Trajectory& traj, const PersonaFact& pos,
                    std::span<const PersonaFact> negs, const PoolConfig& cfg);

// Mean triplet loss over the persona's facts as positives, minus the
// trajectory log-likelihood. Always >= 0.
double authentication_loss(const EmbeddingModel& model, const Trajectory& traj,
                           const PersonaProfile& persona, std::span<const PersonaFact> negs,
                           const PoolConfig& cfg);

// k facts drawn uniformly without replacement from pool minus persona facts.
std::vector<PersonaFact> sample_negatives(const FactPool& pool, const PersonaProfile& persona,
                                          int k, Rng& rng);

// Value and analytic parameter gradients of one triplet term, for gradient
// verification against finite differences. Runs an evaluation pass (no
// dropout), so the value is a deterministic function of the parameters.
struct TripletGradients {
    double loss = 0.0;
    Vec phi;  // layout of model.phi.params()
    Vec psi;  // layout of model.psi.params()
};

TripletGradients triplet_loss_gradients(const EmbeddingModel& model, const Trajectory& traj,
                                        const PersonaFact& pos, std::span<const PersonaFact> negs,
                                        const PoolConfig& cfg);

struct IdentifierConfig {
    int d_emb = 64;
    double margin = 0.25;
    bool normalize = true;
    // Empty phi_hidden makes the trajectory encoder a single linear map, which
    // generalizes across reveal subsets by additivity instead of memorizing
    // training count vectors. The fact encoder keeps one hidden layer wide
    // enough for a unit per topic-payload conjunction.
    std::vector<int> phi_hidden = {};
    std::vector<int> psi_hidden = {220};
    double dropout = 0.0;
    double lr = 2e-3;
    // Per-epoch multiplier on the Adam step size. The mean hinge plateaus at
    // a minibatch-noise floor proportional to the step size, so reaching a
    // tight loss target needs the tail of training to run cooler.
    double lr_decay = 0.96;
    // Decoupled per-step decay, off by default; normalized embeddings make
    // plain L2 shrinkage mostly a no-op.
    double weight_decay = 0.0;
    int epochs = 70;
    int negatives = 8;
    int batch = 32;
    std::uint64_t seed = 0;
};

using CorpusPair = std::pair<Trajectory, PersonaProfile>;

struct TrainedIdentifier {
    EmbeddingModel model;
    std::vector<double> epoch_loss;  // mean triplet term per epoch
};

// Minimizes the mean triplet term with Adam over minibatches; negatives are
// resampled per positive each epoch. Throws if a loss goes non-finite.
TrainedIdentifier train_identifier(std::span<const CorpusPair> corpus, const FactPool& pool,
                                   const PoolConfig& cfg, const IdentifierConfig& train_cfg);

// Per-corpus-pair mean triplet loss at fixed parameters (no dropout).
double mean_triplet_loss(const EmbeddingModel& model, std::span<const CorpusPair> corpus,
                         const FactPool& pool, const PoolConfig& cfg, int negatives, Rng& rng);

// Pool facts ranked by embedding distance to the trajectory, ascending;
// ties break toward the lower fact_id. k must not exceed the pool size.
std::vector<PersonaFact> retrieve_topk(const EmbeddingModel& model, const Trajectory& traj,
                                       const FactPool& pool, int k, const PoolConfig& cfg);

// Fraction of the first k retrieved facts that the persona owns.
double prec_at_k(std::span<const PersonaFact> retrieved, const PersonaProfile& truth, int k);
// Fraction of the persona's facts present in the first k retrieved.
double rec_at_k(std::span<const PersonaFact> retrieved, const PersonaProfile& truth, int k);

// Checkpoint: both nets plus embedding metadata (margin, d_emb, normalize,
// feature schema) in one file.
void save_identifier(const std::string& path, const EmbeddingModel& model, const PoolConfig& cfg);
EmbeddingModel load_identifier(const std::string& path, const PoolConfig& expected_cfg);

}  // namespace pauth
