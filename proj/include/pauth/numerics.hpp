#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "pauth/rng.hpp"

namespace pauth {

using Vec = std::vector<double>;

enum class Activation { identity, tanh, relu };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Fully connected float64 network with a single flat parameter vector
// (per layer: row-major weights, then biases). Hidden activations share one
// nonlinearity; inverted dropout is applied after each hidden activation.
class DenseNet {
  public:
    DenseNet() = default;
    DenseNet(int input_dim, const std::vector<int>& hidden_dims, int output_dim,
             Activation hidden_act, Activation output_act, double dropout_rate,
             std::uint64_t seed);

    int input_dim() const { return dims_.empty() ? 0 : dims_.front(); }
    int output_dim() const { return dims_.empty() ? 0 : dims_.back(); }
    int n_layers() const { return static_cast<int>(acts_.size()); }
    const std::vector<int>& dims() const { return dims_; }
    Activation activation(int layer) const { return acts_[static_cast<std::size_t>(layer)]; }
    double dropout_rate() const { return dropout_rate_; }
    std::uint64_t seed() const { return seed_; }

    const Vec& params() const { return params_; }
    // Mutable access bumps the parameter version; forward caches taken before
    // the access are rejected by backward().
    Vec& mutable_params() {
        ++version_;
        return params_;
    }
    std::uint64_t version() const { return version_; }

    // Offset of layer's weight block / bias block in params().
    std::size_t weight_offset(int layer) const;
    std::size_t bias_offset(int layer) const;

    static DenseNet from_parts(std::vector<int> dims, std::vector<Activation> acts,
                               double dropout_rate, std::uint64_t seed, Vec params);

  private:
    std::vector<int> dims_;
    std::vector<Activation> acts_;
    double dropout_rate_ = 0.0;
    std::uint64_t seed_ = 0;
    Vec params_;
    std::uint64_t version_ = 0;
};

// Intermediate activations captured by forward() for a later backward().
struct ForwardCache {
    Vec input;
    std::vector<Vec> pre;    // pre-activation per layer
    std::vector<Vec> post;   // post-activation (and post-dropout) per layer
    std::vector<Vec> mask;   // inverted-dropout scale per hidden layer; empty in eval mode
    bool train = false;
    std::uint64_t version = 0;
};

// Evaluation-mode forward pass (no dropout). Deterministic given inputs.
Vec forward(const DenseNet& net, const Vec& x);
// Training-mode pass; rng is required when dropout_rate > 0. Pass a cache to
// enable backward().
Vec forward(const DenseNet& net, const Vec& x, bool train, Rng* rng, ForwardCache* cache);

struct Gradients {
    Vec params;  // same layout as DenseNet::params()
    Vec input;   // gradient wrt the network input
};

// Backpropagates grad_out (dL/d output) through the cached pass. Throws if
// the cache predates a parameter mutation.
Gradients backward(const DenseNet& net, const ForwardCache& cache, const Vec& grad_out);

struct AdamState {
    Vec m;
    Vec v;
    long step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    AdamState() = default;
    explicit AdamState(std::size_t n, double lr_in = 1e-3) : m(n, 0.0), v(n, 0.0), lr(lr_in) {}
};

// In-place bias-corrected Adam update. Throws on shape mismatch or
// non-finite gradients.
void adam_step(Vec& params, const Vec& grads, AdamState& state);

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    int checked = 0;
    int skipped = 0;  // coordinates rejected as non-smooth (hinge kinks)
};

// Central-difference check of analytic_grad against loss() on n_coords
// randomly chosen coordinates. A coordinate whose one-sided slopes disagree
// (a kink) is skipped, not failed.
GradCheckReport finite_diff_check(const std::function<double(const Vec&)>& loss,
                                  const Vec& analytic_grad, const Vec& params, double tol,
                                  int n_coords, Rng& rng, double step = 1e-5);

// Numerically stable softmax; output is non-negative and sums to 1.
Vec softmax(const Vec& logits);
Vec log_softmax(const Vec& logits);

double dot(const Vec& a, const Vec& b);
double l2_norm(const Vec& v);
double euclidean_distance(const Vec& a, const Vec& b);

// Checkpoint container: text header (schema version, dims, activations,
// dropout, seed, one-line metadata) followed by little-endian float64 params.
void save_net(std::ostream& os, const DenseNet& net, const std::string& meta = "");
DenseNet load_net(std::istream& is, std::string* meta = nullptr);

}  // namespace pauth
