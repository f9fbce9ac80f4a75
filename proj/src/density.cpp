#include "pauth/density.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace pauth {

RadiusSchedule::RadiusSchedule(double c0_in, double alpha_in, int dim_in)
    : c0(c0_in), alpha(alpha_in), dim(dim_in) {
    if (dim < 1) throw std::invalid_argument("RadiusSchedule: dim must be >= 1");
    if (c0 <= 0.0) throw std::invalid_argument("RadiusSchedule: c0 must be positive");
    if (alpha < 0.0) throw std::invalid_argument("RadiusSchedule: alpha must be non-negative");
    if (alpha * dim >= 1.0)
        throw std::invalid_argument("RadiusSchedule: alpha * dim must be < 1 (k/n would not vanish)");
}

double RadiusSchedule::radius(long n) const {
    if (n < 1) throw std::invalid_argument("RadiusSchedule: n must be >= 1");
    return c0 * std::pow(static_cast<double>(n), -alpha);
}

RadiusSchedule RadiusSchedule::defaults(int dim) {
    return RadiusSchedule(4.0, 1.0 / (2.0 * dim), dim);
}

int kernel(double distance, double radius) {
    if (distance < 0.0) throw std::invalid_argument("kernel: negative distance");
    if (radius <= 0.0) throw std::invalid_argument("kernel: radius must be positive");
    return distance <= radius ? 1 : 0;
}

double ball_volume(int dim, double radius) {
    if (dim < 1) throw std::invalid_argument("ball_volume: dim must be >= 1");
    if (radius <= 0.0) throw std::invalid_argument("ball_volume: radius must be positive");
    const double half_d = static_cast<double>(dim) / 2.0;
    return std::pow(M_PI, half_d) / std::tgamma(half_d + 1.0) * std::pow(radius, dim);
}

DensityEstimate estimate_density(std::span<const Vec> samples, const Vec& center, double radius) {
    if (samples.empty()) throw std::invalid_argument("estimate_density: no samples");
    if (center.empty()) throw std::invalid_argument("estimate_density: empty center");
    DensityEstimate est;
    est.n = static_cast<long>(samples.size());
    est.radius = radius;
    est.volume = ball_volume(static_cast<int>(center.size()), radius);
    for (const Vec& s : samples) {
        if (s.size() != center.size()) throw std::invalid_argument("estimate_density: dimension mismatch");
        est.k_count += kernel(euclidean_distance(s, center), radius);
    }
    est.value = static_cast<double>(est.k_count) / (static_cast<double>(est.n) * est.volume);
    return est;
}

DensityOracle gaussian_oracle(int dim) {
    if (dim < 1) throw std::invalid_argument("gaussian_oracle: dim must be >= 1");
    DensityOracle oracle;
    oracle.dim = dim;
    oracle.density = [dim](const Vec& x) {
        if (static_cast<int>(x.size()) != dim)
            throw std::invalid_argument("gaussian_oracle: dimension mismatch");
        double q = 0.0;
        for (double v : x) q += v * v;
        return std::exp(-0.5 * q) / std::pow(2.0 * M_PI, static_cast<double>(dim) / 2.0);
    };
    oracle.sample = [dim](Rng& rng) {
        Vec x(static_cast<std::size_t>(dim));
        for (double& v : x) v = rand_normal(rng);
        return x;
    };
    return oracle;
}

double gaussian_ball_bias_1d(double center, double radius) {
    if (radius <= 0.0) throw std::invalid_argument("gaussian_ball_bias_1d: radius must be positive");
    const auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    const double mass = cdf(center + radius) - cdf(center - radius);
    const double ball_avg = mass / (2.0 * radius);
    const double at_center = std::exp(-0.5 * center * center) / std::sqrt(2.0 * M_PI);
    return std::abs(at_center - ball_avg);
}

ConvergenceResult convergence_experiment(const DensityOracle& oracle, const Vec& center,
                                         const RadiusSchedule& schedule, std::span<const long> n_grid,
                                         std::span<const std::uint64_t> seeds) {
    if (static_cast<int>(center.size()) != oracle.dim)
        throw std::invalid_argument("convergence_experiment: center dimension mismatch");
    if (schedule.dim != oracle.dim)
        throw std::invalid_argument("convergence_experiment: schedule dimension mismatch");
    if (n_grid.empty() || seeds.empty())
        throw std::invalid_argument("convergence_experiment: empty n grid or seed list");

    ConvergenceResult result;
    result.n_grid.assign(n_grid.begin(), n_grid.end());
    const double truth = oracle.density(center);
    for (long n : n_grid) {
        const double radius = schedule.radius(n);
        double err_sum = 0.0;
        double k_sum = 0.0;
        for (std::uint64_t seed : seeds) {
            Rng rng = make_rng(seed);
            std::vector<Vec> samples;
            samples.reserve(static_cast<std::size_t>(n));
            for (long i = 0; i < n; ++i) samples.push_back(oracle.sample(rng));
            const DensityEstimate est = estimate_density(samples, center, radius);
            ConvergenceRow row;
            row.n = n;
            row.radius = radius;
            row.volume = est.volume;
            row.k = est.k_count;
            row.estimate = est.value;
            row.truth = truth;
            row.abs_err = std::abs(est.value - truth);
            row.seed = seed;
            result.rows.push_back(row);
            err_sum += row.abs_err;
            k_sum += static_cast<double>(est.k_count) / static_cast<double>(n);
        }
        result.mean_abs_err.push_back(err_sum / static_cast<double>(seeds.size()));
        result.mean_k_over_n.push_back(k_sum / static_cast<double>(seeds.size()));
    }
    return result;
}

void write_convergence_csv(std::ostream& os, const ConvergenceResult& result) {
    os << "n,C_n,V,k,estimate,truth,abs_err,seed\n";
    char buf[512];
    for (const ConvergenceRow& r : result.rows) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%ld,%.10g,%.10g,%.10g,%llu\n", r.n, r.radius,
                      r.volume, r.k, r.estimate, r.truth, r.abs_err,
                      static_cast<unsigned long long>(r.seed));
        os << buf;
    }
}

namespace {

// ln p(responses of traj | persona): product of per-turn response
// probabilities under this persona for the questions actually asked.
double response_log_likelihood(const Trajectory& traj, const PersonaProfile& persona,
                               const GeneratorParams& params, const PoolConfig& cfg) {
    double ll = 0.0;
    for (const Turn& turn : traj.turns) {
        const Vec dist = response_distribution(params, cfg, persona, turn.question.symbol);
        const double p = dist[static_cast<std::size_t>(symbol_flat_index(turn.response.symbol, cfg))];
        if (p <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += std::log(p);
    }
    return ll;
}

}  // namespace

double estimate_mutual_information(const MiSetup& setup, QuestionPolicy& policy, long n_rollouts,
                                   Rng rng) {
    if (setup.personas.empty()) throw std::invalid_argument("estimate_mutual_information: empty persona pool");
    if (n_rollouts < 1) throw std::invalid_argument("estimate_mutual_information: n_rollouts must be >= 1");
    const double m = static_cast<double>(setup.personas.size());
    double total = 0.0;
    for (long i = 0; i < n_rollouts; ++i) {
        const PersonaProfile& persona =
            setup.personas[static_cast<std::size_t>(rand_index(rng, static_cast<int>(setup.personas.size())))];
        const Trajectory traj =
            run_episode(setup.params, setup.cfg, persona, policy, setup.t_max, Rng(rng()));
        const double ll_true = trajectory_log_likelihood(traj);
        // log of the pool-average likelihood, log-sum-exp over personas
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> lls;
        lls.reserve(setup.personas.size());
        for (const PersonaProfile& other : setup.personas) {
            lls.push_back(response_log_likelihood(traj, other, setup.params, setup.cfg));
            mx = std::max(mx, lls.back());
        }
        double acc = 0.0;
        for (double ll : lls) acc += std::exp(ll - mx);
        const double log_mean = mx + std::log(acc) - std::log(m);
        total += ll_true - log_mean;
    }
    return total / static_cast<double>(n_rollouts);
}

EnumerablePolicy enumerable_random() {
    EnumerablePolicy p;
    p.action_dist = [](const Trajectory&, const PersonaProfile&) {
        std::vector<std::pair<int, double>> out;
        for (int q = 0; q < kNumTopics; ++q) out.emplace_back(q, 1.0 / kNumTopics);
        return out;
    };
    return p;
}

EnumerablePolicy enumerable_expert() {
    EnumerablePolicy p;
    p.action_dist = [](const Trajectory& traj, const PersonaProfile& hidden) {
        const AskedSet asked = asked_topics(traj);
        // mirror expert_policy's deterministic branches; the uniform tail
        // only triggers past 11 turns, which enumeration never reaches
        for (int topic = 0; topic < kNumTopics; ++topic) {
            if (!asked.test(static_cast<std::size_t>(topic)) && hidden.owns_topic(topic))
                return std::vector<std::pair<int, double>>{{topic, 1.0}};
        }
        for (int topic = 0; topic < kNumTopics; ++topic) {
            if (!asked.test(static_cast<std::size_t>(topic)))
                return std::vector<std::pair<int, double>>{{topic, 1.0}};
        }
        std::vector<std::pair<int, double>> out;
        for (int q = 0; q < kNumTopics; ++q) out.emplace_back(q, 1.0 / kNumTopics);
        return out;
    };
    return p;
}

namespace {

struct EnumAccumulator {
    const MiSetup* setup;
    const EnumerablePolicy* policy;
    double info = 0.0;

    // weight: path probability under the generating persona (questions and
    // responses); resp_ll: ln p(responses | generating persona)
    void walk(const PersonaProfile& persona, Trajectory& traj, double weight, double resp_ll) {
        if (weight <= 0.0) return;
        if (static_cast<int>(traj.turns.size()) == setup->t_max) {
            const double m = static_cast<double>(setup->personas.size());
            double mean_p = 0.0;
            for (const PersonaProfile& other : setup->personas) {
                const double ll = response_log_likelihood(traj, other, setup->params, setup->cfg);
                mean_p += std::isinf(ll) ? 0.0 : std::exp(ll);
            }
            mean_p /= m;
            info += weight * (resp_ll - std::log(mean_p));
            return;
        }
        for (const auto& [q, pq] : policy->action_dist(traj, persona)) {
            if (pq <= 0.0) continue;
            const Vec dist = response_distribution(setup->params, setup->cfg, persona, q);
            for (int flat = 0; flat < setup->cfg.vocab_size(); ++flat) {
                const double pr = dist[static_cast<std::size_t>(flat)];
                if (pr <= 0.0) continue;
                Turn turn;
                turn.question = Utterance{Speaker::questioner, q, 0.0};
                turn.response =
                    Utterance{Speaker::agent, symbol_from_flat_index(flat, setup->cfg), std::log(pr)};
                traj.turns.push_back(turn);
                walk(persona, traj, weight * pq * pr, resp_ll + std::log(pr));
                traj.turns.pop_back();
            }
        }
    }
};

}  // namespace

double exact_mutual_information(const MiSetup& setup, const EnumerablePolicy& policy) {
    if (setup.personas.empty()) throw std::invalid_argument("exact_mutual_information: empty persona pool");
    if (setup.t_max > 3) throw std::invalid_argument("exact_mutual_information: t_max too large to enumerate");
    EnumAccumulator acc;
    acc.setup = &setup;
    acc.policy = &policy;
    double info = 0.0;
    for (const PersonaProfile& persona : setup.personas) {
        acc.info = 0.0;
        Trajectory traj;
        traj.t_max = setup.t_max;
        acc.walk(persona, traj, 1.0, 0.0);
        info += acc.info;
    }
    return info / static_cast<double>(setup.personas.size());
}

}  // namespace pauth
