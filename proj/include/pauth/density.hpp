#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "pauth/core.hpp"
#include "pauth/envsim.hpp"
#include "pauth/numerics.hpp"
#include "pauth/rng.hpp"

namespace pauth {

// Shrinking-radius rule C_n = c0 * n^-alpha. Construction rejects schedules
// with alpha * dim >= 1 (the per-ball expected count k = n * P_N would not
// grow); alpha = 0 is admitted as the deliberately degenerate constant-radius
// schedule used to demonstrate bias plateaus.
struct RadiusSchedule {
    double c0;
    double alpha;
    int dim;

    RadiusSchedule(double c0_in, double alpha_in, int dim_in);
    double radius(long n) const;
    // True when the estimator is consistent under this schedule:
    // V(C_n) -> 0, n V(C_n) -> inf, and E[k]/n -> 0.
    bool consistent() const { return alpha > 0.0 && alpha * dim < 1.0; }
    static RadiusSchedule defaults(int dim);  // c0 = 4, alpha = 1 / (2 dim)
};

// Indicator kernel: 1 inside or on the ball boundary, else 0.
int kernel(double distance, double radius);

// Exact d-ball volume pi^(d/2) / Gamma(d/2 + 1) * C^d.
double ball_volume(int dim, double radius);

struct DensityEstimate {
    long n = 0;
    long k_count = 0;
    double radius = 0.0;
    double volume = 0.0;
    double value = 0.0;
};

// P~ = k / (n V(C)) with k the number of samples within radius of center.
DensityEstimate estimate_density(std::span<const Vec> samples, const Vec& center, double radius);

// Ground-truth density with an exact sampler, for convergence experiments.
struct DensityOracle {
    int dim = 1;
    std::function<double(const Vec&)> density;
    std::function<Vec(Rng&)> sample;
};

DensityOracle gaussian_oracle(int dim);  // standard normal, iid coordinates

// |density(center) - ball-average density| for the standard normal in 1-D;
// the asymptotic error floor of a constant-radius estimator.
double gaussian_ball_bias_1d(double center, double radius);

struct ConvergenceRow {
    long n;
    double radius;
    double volume;
    long k;
    double estimate;
    double truth;
    double abs_err;
    std::uint64_t seed;
};

struct ConvergenceResult {
    std::vector<ConvergenceRow> rows;      // n-major, seed-minor
    std::vector<long> n_grid;
    std::vector<double> mean_abs_err;      // per n, averaged over seeds
    std::vector<double> mean_k_over_n;     // per n; must trend to 0 for valid schedules
};

ConvergenceResult convergence_experiment(const DensityOracle& oracle, const Vec& center,
                                         const RadiusSchedule& schedule, std::span<const long> n_grid,
                                         std::span<const std::uint64_t> seeds);

void write_convergence_csv(std::ostream& os, const ConvergenceResult& result);

// Dialog-side mutual information I(tau; P) between trajectories and personas
// drawn uniformly from a finite pool. Likelihoods cover agent responses only:
// the question policy is fixed and treated as exogenous.
struct MiSetup {
    GeneratorParams params;
    PoolConfig cfg;
    std::vector<PersonaProfile> personas;
    int t_max = 2;
};

// Monte Carlo estimate over rollouts of policy against random personas.
double estimate_mutual_information(const MiSetup& setup, QuestionPolicy& policy, long n_rollouts,
                                   Rng rng);

// A policy whose per-state action distribution can be enumerated, enabling
// the exact computation below. Kept independent of the sampling path.
struct EnumerablePolicy {
    // (question_id, probability) support at this history under this persona
    std::function<std::vector<std::pair<int, double>>(const Trajectory&, const PersonaProfile&)>
        action_dist;
};

EnumerablePolicy enumerable_random();
EnumerablePolicy enumerable_expert();

// Exact I(tau; P) by full enumeration of question/response sequences.
// Cost grows exponentially in t_max; intended for t_max <= 3.
double exact_mutual_information(const MiSetup& setup, const EnumerablePolicy& policy);

}  // namespace pauth
