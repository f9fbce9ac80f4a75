#include "pauth/identifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace pauth {

using nlohmann::json;

Vec TrajectoryFeatures::concat() const {
    Vec out;
    out.reserve(counts.size() + question_counts.size() + 1);
    out.insert(out.end(), counts.begin(), counts.end());
    out.insert(out.end(), question_counts.begin(), question_counts.end());
    out.push_back(turn);
    return out;
}

TrajectoryFeatures featurize(const Trajectory& traj, const PoolConfig& cfg) {
    TrajectoryFeatures f;
    f.counts.assign(static_cast<std::size_t>(cfg.vocab_size()), 0.0);
    f.question_counts.assign(static_cast<std::size_t>(kNumTopics), 0.0);
    for (const Turn& turn : traj.turns) {
        f.counts[static_cast<std::size_t>(symbol_flat_index(turn.response.symbol, cfg))] += 1.0;
        f.question_counts[static_cast<std::size_t>(turn.question.symbol)] += 1.0;
    }
    f.turn = static_cast<double>(traj.turns.size());
    return f;
}

Vec fact_features(const PersonaFact& fact, const PoolConfig& cfg) {
    if (fact.topic < 0 || fact.topic >= kNumTopics) throw std::invalid_argument("fact_features: bad topic");
    if (fact.payload < 0 || fact.payload >= cfg.payloads_per_topic)
        throw std::invalid_argument("fact_features: bad payload");
    Vec out(static_cast<std::size_t>(fact_feature_dim(cfg)), 0.0);
    out[static_cast<std::size_t>(fact.topic)] = 1.0;
    out[static_cast<std::size_t>(kNumTopics + fact.payload)] = 1.0;
    return out;
}

namespace {

Vec l2_normalize(const Vec& v) {
    const double n = l2_norm(v);
    if (n < 1e-300) throw std::runtime_error("l2_normalize: zero-norm embedding");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

// dL/dx for y = x / ||x||, given dL/dy.
Vec l2_normalize_backward(const Vec& raw, const Vec& normalized, const Vec& grad_y) {
    const double n = l2_norm(raw);
    const double proj = dot(normalized, grad_y);
    Vec out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (grad_y[i] - normalized[i] * proj) / n;
    return out;
}

}  // namespace

Vec embed_trajectory(const EmbeddingModel& model, const Trajectory& traj, const PoolConfig& cfg) {
    Vec emb = forward(model.phi, featurize(traj, cfg).concat());
    return model.normalize ? l2_normalize(emb) : emb;
}

Vec embed_fact(const EmbeddingModel& model, const PersonaFact& fact, const PoolConfig& cfg) {
    Vec emb = forward(model.psi, fact_features(fact, cfg));
    return model.normalize ? l2_normalize(emb) : emb;
}

double triplet_loss(const EmbeddingModel& model, const Trajectory& traj, const PersonaFact& pos,
                    std::span<const PersonaFact> negs, const PoolConfig& cfg) {
    if (negs.empty()) throw std::invalid_argument("triplet_loss: empty negative set");
    const Vec anchor = embed_trajectory(model, traj, cfg);
    const Vec pos_emb = embed_fact(model, pos, cfg);
    const double d_pos = euclidean_distance(anchor, pos_emb);
    double total = 0.0;
    for (const PersonaFact& neg : negs) {
        const double d_neg = euclidean_distance(anchor, embed_fact(model, neg, cfg));
        total += std::max(0.0, model.margin + d_pos - d_neg);
    }
    return total / static_cast<double>(negs.size());
}

double authentication_loss(const EmbeddingModel& model, const Trajectory& traj,
                           const PersonaProfile& persona, std::span<const PersonaFact> negs,
                           const PoolConfig& cfg) {
    if (persona.facts.empty()) throw std::invalid_argument("authentication_loss: persona has no facts");
    double triplet = 0.0;
    for (const PersonaFact& pos : persona.facts) triplet += triplet_loss(model, traj, pos, negs, cfg);
    triplet /= static_cast<double>(persona.facts.size());
    return triplet - trajectory_log_likelihood(traj);
}

std::vector<PersonaFact> sample_negatives(const FactPool& pool, const PersonaProfile& persona,
                                          int k, Rng& rng) {
    std::vector<int> candidates;
    candidates.reserve(pool.size());
    for (const PersonaFact& f : pool) {
        if (!persona.owns_fact(f.fact_id)) candidates.push_back(f.fact_id);
    }
    if (k > static_cast<int>(candidates.size()))
        throw std::invalid_argument("sample_negatives: not enough non-persona facts");
    std::vector<int> picks = sample_without_replacement(rng, static_cast<int>(candidates.size()), k);
    std::vector<PersonaFact> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i : picks) out.push_back(pool[static_cast<std::size_t>(candidates[static_cast<std::size_t>(i)])]);
    return out;
}

namespace {

struct EmbedCapture {
    ForwardCache cache;
    Vec raw;
    Vec emb;       // normalized when requested
    Vec grad_emb;  // accumulated dL/d emb
};

EmbedCapture embed_with_cache(const DenseNet& net, const Vec& input, bool normalize, bool train,
                              Rng* rng) {
    EmbedCapture cap;
    cap.raw = forward(net, input, train, rng, &cap.cache);
    cap.emb = normalize ? l2_normalize(cap.raw) : cap.raw;
    cap.grad_emb.assign(cap.emb.size(), 0.0);
    return cap;
}

bool all_zero(const Vec& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

// Routes the accumulated embedding gradient through the (optional)
// normalization and the network, adding into grad_params.
void flush_capture(const DenseNet& net, EmbedCapture& cap, bool normalize, Vec& grad_params) {
    if (all_zero(cap.grad_emb)) return;
    const Vec grad_raw =
        normalize ? l2_normalize_backward(cap.raw, cap.emb, cap.grad_emb) : cap.grad_emb;
    const Gradients g = backward(net, cap.cache, grad_raw);
    for (std::size_t i = 0; i < grad_params.size(); ++i) grad_params[i] += g.params[i];
}

// d(a, b) gradient: accumulates w * d d(a,b)/d a into ga and the mirror term
// into gb. Near-coincident points get subgradient zero.
void add_distance_grad(Vec& ga, Vec& gb, const Vec& a, const Vec& b, double dist, double w) {
    if (dist < 1e-12) return;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double g = w * (a[i] - b[i]) / dist;
        ga[i] += g;
        gb[i] -= g;
    }
}

}  // namespace

TripletGradients triplet_loss_gradients(const EmbeddingModel& model, const Trajectory& traj,
                                        const PersonaFact& pos, std::span<const PersonaFact> negs,
                                        const PoolConfig& cfg) {
    if (negs.empty()) throw std::invalid_argument("triplet_loss_gradients: empty negative set");
    TripletGradients out;
    out.phi.assign(model.phi.params().size(), 0.0);
    out.psi.assign(model.psi.params().size(), 0.0);

    EmbedCapture anchor =
        embed_with_cache(model.phi, featurize(traj, cfg).concat(), model.normalize, false, nullptr);
    EmbedCapture pos_cap =
        embed_with_cache(model.psi, fact_features(pos, cfg), model.normalize, false, nullptr);
    const double d_pos = euclidean_distance(anchor.emb, pos_cap.emb);
    const double inv = 1.0 / static_cast<double>(negs.size());

    for (const PersonaFact& neg : negs) {
        EmbedCapture neg_cap =
            embed_with_cache(model.psi, fact_features(neg, cfg), model.normalize, false, nullptr);
        const double d_neg = euclidean_distance(anchor.emb, neg_cap.emb);
        const double hinge = model.margin + d_pos - d_neg;
        if (hinge > 0.0) {
            out.loss += inv * hinge;
            add_distance_grad(anchor.grad_emb, pos_cap.grad_emb, anchor.emb, pos_cap.emb, d_pos, inv);
            add_distance_grad(anchor.grad_emb, neg_cap.grad_emb, anchor.emb, neg_cap.emb, d_neg, -inv);
        }
        flush_capture(model.psi, neg_cap, model.normalize, out.psi);
    }
    flush_capture(model.psi, pos_cap, model.normalize, out.psi);
    flush_capture(model.phi, anchor, model.normalize, out.phi);
    return out;
}

TrainedIdentifier train_identifier(std::span<const CorpusPair> corpus, const FactPool& pool,
                                   const PoolConfig& cfg, const IdentifierConfig& train_cfg) {
    if (corpus.empty()) throw std::invalid_argument("train_identifier: empty corpus");
    if (train_cfg.negatives < 1) throw std::invalid_argument("train_identifier: negatives must be >= 1");
    if (train_cfg.batch < 1) throw std::invalid_argument("train_identifier: batch must be >= 1");

    TrainedIdentifier out;
    out.model.margin = train_cfg.margin;
    out.model.d_emb = train_cfg.d_emb;
    out.model.normalize = train_cfg.normalize;
    out.model.phi = DenseNet(TrajectoryFeatures::dim(cfg), train_cfg.phi_hidden, train_cfg.d_emb,
                             Activation::relu, Activation::identity, train_cfg.dropout,
                             splitmix64(train_cfg.seed ^ 0x70686900ULL));
    out.model.psi = DenseNet(fact_feature_dim(cfg), train_cfg.psi_hidden, train_cfg.d_emb,
                             Activation::relu, Activation::identity, train_cfg.dropout,
                             splitmix64(train_cfg.seed ^ 0x70736900ULL));
    EmbeddingModel& model = out.model;

    AdamState phi_opt(model.phi.params().size(), train_cfg.lr);
    AdamState psi_opt(model.psi.params().size(), train_cfg.lr);
    Rng order_rng = split_rng(train_cfg.seed, 1);
    Rng neg_rng = split_rng(train_cfg.seed, 2);
    Rng dropout_rng = split_rng(train_cfg.seed, 3);
    Rng curve_rng = split_rng(train_cfg.seed, 4);

    // Features never change across epochs; compute them once.
    std::vector<Vec> traj_feats;
    traj_feats.reserve(corpus.size());
    for (const CorpusPair& pair : corpus) traj_feats.push_back(featurize(pair.first, cfg).concat());
    std::vector<Vec> pool_feats;
    pool_feats.reserve(pool.size());
    int max_fact_id = 0;
    for (const PersonaFact& f : pool) {
        pool_feats.push_back(fact_features(f, cfg));
        max_fact_id = std::max(max_fact_id, f.fact_id);
    }
    std::vector<std::size_t> pool_slot(static_cast<std::size_t>(max_fact_id) + 1, SIZE_MAX);
    for (std::size_t i = 0; i < pool.size(); ++i)
        pool_slot[static_cast<std::size_t>(pool[i].fact_id)] = i;

    // Without dropout every embedding of a fact inside one optimizer step is
    // identical, so the whole pool is embedded once per step and the captures
    // are shared across the batch. Dropout needs a fresh mask per use and
    // keeps the per-use path.
    const bool shared_psi = train_cfg.dropout == 0.0;

    std::vector<int> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        phi_opt.lr = train_cfg.lr * std::pow(train_cfg.lr_decay, epoch);
        psi_opt.lr = phi_opt.lr;

        // Fisher-Yates with our own rng keeps the schedule reproducible.
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rand_index(order_rng, i + 1))]);
        }

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train_cfg.batch)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(train_cfg.batch));
            Vec phi_grad(model.phi.params().size(), 0.0);
            Vec psi_grad(model.psi.params().size(), 0.0);
            const double pair_w = 1.0 / static_cast<double>(stop - start);

            std::vector<EmbedCapture> shared_caps;
            if (shared_psi) {
                shared_caps.reserve(pool.size());
                for (const Vec& x : pool_feats)
                    shared_caps.push_back(embed_with_cache(model.psi, x, model.normalize, true, &dropout_rng));
            }

            for (std::size_t bi = start; bi < stop; ++bi) {
                const CorpusPair& pair = corpus[static_cast<std::size_t>(order[bi])];
                const PersonaProfile& persona = pair.second;
                if (persona.facts.empty()) throw std::invalid_argument("train_identifier: persona has no facts");

                EmbedCapture anchor = embed_with_cache(model.phi, traj_feats[static_cast<std::size_t>(order[bi])],
                                                       model.normalize, true, &dropout_rng);
                const double pos_w = pair_w / static_cast<double>(persona.facts.size());

                std::vector<EmbedCapture> local_caps;
                for (const PersonaFact& pos : persona.facts) {
                    EmbedCapture* pos_cap;
                    if (shared_psi) {
                        pos_cap = &shared_caps[pool_slot[static_cast<std::size_t>(pos.fact_id)]];
                    } else {
                        local_caps.push_back(embed_with_cache(model.psi, pool_feats[pool_slot[static_cast<std::size_t>(pos.fact_id)]],
                                                              model.normalize, true, &dropout_rng));
                        pos_cap = &local_caps.back();
                    }
                    const std::vector<PersonaFact> negs =
                        sample_negatives(pool, persona, train_cfg.negatives, neg_rng);
                    const double d_pos = euclidean_distance(anchor.emb, pos_cap->emb);
                    const double neg_w = pos_w / static_cast<double>(negs.size());

                    for (const PersonaFact& neg : negs) {
                        EmbedCapture* neg_cap;
                        if (shared_psi) {
                            neg_cap = &shared_caps[pool_slot[static_cast<std::size_t>(neg.fact_id)]];
                        } else {
                            local_caps.push_back(embed_with_cache(model.psi, pool_feats[pool_slot[static_cast<std::size_t>(neg.fact_id)]],
                                                                  model.normalize, true, &dropout_rng));
                            neg_cap = &local_caps.back();
                        }
                        const double d_neg = euclidean_distance(anchor.emb, neg_cap->emb);
                        const double hinge = model.margin + d_pos - d_neg;
                        if (hinge > 0.0) {
                            add_distance_grad(anchor.grad_emb, pos_cap->grad_emb, anchor.emb, pos_cap->emb,
                                              d_pos, neg_w);
                            add_distance_grad(anchor.grad_emb, neg_cap->grad_emb, anchor.emb, neg_cap->emb,
                                              d_neg, -neg_w);
                        }
                    }
                }
                for (EmbedCapture& cap : local_caps) flush_capture(model.psi, cap, model.normalize, psi_grad);
                flush_capture(model.phi, anchor, model.normalize, phi_grad);
            }
            for (EmbedCapture& cap : shared_caps) flush_capture(model.psi, cap, model.normalize, psi_grad);

            adam_step(model.phi.mutable_params(), phi_grad, phi_opt);
            adam_step(model.psi.mutable_params(), psi_grad, psi_opt);
            if (train_cfg.weight_decay > 0.0) {
                const double keep = 1.0 - train_cfg.lr * train_cfg.weight_decay;
                for (double& p : model.phi.mutable_params()) p *= keep;
                for (double& p : model.psi.mutable_params()) p *= keep;
            }
        }

        out.epoch_loss.push_back(
            mean_triplet_loss(model, corpus, pool, cfg, train_cfg.negatives, curve_rng));
        if (!std::isfinite(out.epoch_loss.back()))
            throw std::runtime_error("train_identifier: non-finite loss (diverged)");
    }
    return out;
}

double mean_triplet_loss(const EmbeddingModel& model, std::span<const CorpusPair> corpus,
                         const FactPool& pool, const PoolConfig& cfg, int negatives, Rng& rng) {
    if (corpus.empty()) throw std::invalid_argument("mean_triplet_loss: empty corpus");
    // Fact embeddings are trajectory-independent; one pass over the pool
    // serves every triplet.
    int max_fact_id = 0;
    for (const PersonaFact& f : pool) max_fact_id = std::max(max_fact_id, f.fact_id);
    std::vector<Vec> fact_embs(static_cast<std::size_t>(max_fact_id) + 1);
    for (const PersonaFact& f : pool)
        fact_embs[static_cast<std::size_t>(f.fact_id)] = embed_fact(model, f, cfg);

    double total = 0.0;
    for (const CorpusPair& pair : corpus) {
        if (pair.second.facts.empty())
            throw std::invalid_argument("mean_triplet_loss: persona has no facts");
        const Vec anchor = embed_trajectory(model, pair.first, cfg);
        double pair_loss = 0.0;
        for (const PersonaFact& pos : pair.second.facts) {
            const std::vector<PersonaFact> negs = sample_negatives(pool, pair.second, negatives, rng);
            const double d_pos =
                euclidean_distance(anchor, fact_embs[static_cast<std::size_t>(pos.fact_id)]);
            double pos_loss = 0.0;
            for (const PersonaFact& neg : negs) {
                const double d_neg =
                    euclidean_distance(anchor, fact_embs[static_cast<std::size_t>(neg.fact_id)]);
                pos_loss += std::max(0.0, model.margin + d_pos - d_neg);
            }
            pair_loss += pos_loss / static_cast<double>(negs.size());
        }
        total += pair_loss / static_cast<double>(pair.second.facts.size());
    }
    return total / static_cast<double>(corpus.size());
}

std::vector<PersonaFact> retrieve_topk(const EmbeddingModel& model, const Trajectory& traj,
                                       const FactPool& pool, int k, const PoolConfig& cfg) {
    if (k < 1 || k > static_cast<int>(pool.size()))
        throw std::invalid_argument("retrieve_topk: k outside [1, pool size]");
    const Vec anchor = embed_trajectory(model, traj, cfg);
    std::vector<std::pair<double, int>> ranked;  // (distance, fact_id)
    ranked.reserve(pool.size());
    for (const PersonaFact& f : pool)
        ranked.emplace_back(euclidean_distance(anchor, embed_fact(model, f, cfg)), f.fact_id);
    std::sort(ranked.begin(), ranked.end());  // ties fall back to fact_id order
    std::vector<PersonaFact> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int fact_id = ranked[static_cast<std::size_t>(i)].second;
        auto it = std::find_if(pool.begin(), pool.end(),
                               [&](const PersonaFact& f) { return f.fact_id == fact_id; });
        out.push_back(*it);
    }
    return out;
}

double prec_at_k(std::span<const PersonaFact> retrieved, const PersonaProfile& truth, int k) {
    if (truth.facts.empty()) throw std::invalid_argument("prec_at_k: empty truth set");
    if (k < 1 || k > static_cast<int>(retrieved.size()))
        throw std::invalid_argument("prec_at_k: k outside [1, retrieved size]");
    int hits = 0;
    for (int i = 0; i < k; ++i) {
        if (truth.owns_fact(retrieved[static_cast<std::size_t>(i)].fact_id)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(k);
}

double rec_at_k(std::span<const PersonaFact> retrieved, const PersonaProfile& truth, int k) {
    if (truth.facts.empty()) throw std::invalid_argument("rec_at_k: empty truth set");
    if (k < 1 || k > static_cast<int>(retrieved.size()))
        throw std::invalid_argument("rec_at_k: k outside [1, retrieved size]");
    int hits = 0;
    for (int i = 0; i < k; ++i) {
        if (truth.owns_fact(retrieved[static_cast<std::size_t>(i)].fact_id)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(truth.facts.size());
}

void save_identifier(const std::string& path, const EmbeddingModel& model, const PoolConfig& cfg) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_identifier: cannot open " + path);
    const json meta{{"margin", model.margin},
                    {"d_emb", model.d_emb},
                    {"normalize", model.normalize},
                    {"payloads_per_topic", cfg.payloads_per_topic},
                    {"generic_symbols", cfg.generic_symbols}};
    os << "PAUTHID 1\n" << meta.dump() << '\n';
    save_net(os, model.phi);
    save_net(os, model.psi);
}

EmbeddingModel load_identifier(const std::string& path, const PoolConfig& expected_cfg) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_identifier: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "PAUTHID 1")
        throw std::runtime_error("load_identifier: bad magic or schema version");
    if (!std::getline(is, line)) throw std::runtime_error("load_identifier: missing metadata");
    const json meta = json::parse(line);
    PoolConfig stored;
    stored.payloads_per_topic = meta.at("payloads_per_topic").get<int>();
    stored.generic_symbols = meta.at("generic_symbols").get<int>();
    if (!(stored == expected_cfg))
        throw std::runtime_error("load_identifier: checkpoint was trained with a different fact pool");
    EmbeddingModel model;
    model.margin = meta.at("margin").get<double>();
    model.d_emb = meta.at("d_emb").get<int>();
    model.normalize = meta.at("normalize").get<bool>();
    model.phi = load_net(is);
    model.psi = load_net(is);
    if (model.phi.input_dim() != TrajectoryFeatures::dim(expected_cfg) ||
        model.psi.input_dim() != fact_feature_dim(expected_cfg))
        throw std::runtime_error("load_identifier: feature schema mismatch");
    return model;
}

}  // namespace pauth
