#include "pauth/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace pauth {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    throw std::logic_error("activation_name: unknown activation");
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw std::invalid_argument("activation_from_name: unknown activation '" + name + "'");
}

namespace {

double apply_act(Activation a, double x) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::tanh: return std::tanh(x);
        case Activation::relu: return x > 0.0 ? x : 0.0;
    }
    return x;
}

// derivative in terms of pre-activation x and post-activation y
double act_grad(Activation a, double x, double y) {
    switch (a) {
        case Activation::identity: return 1.0;
        case Activation::tanh: return 1.0 - y * y;
        case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

std::size_t param_count(const std::vector<int>& dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        n += static_cast<std::size_t>(dims[l]) * static_cast<std::size_t>(dims[l + 1]);
        n += static_cast<std::size_t>(dims[l + 1]);
    }
    return n;
}

}  // namespace

DenseNet::DenseNet(int input_dim, const std::vector<int>& hidden_dims, int output_dim,
                   Activation hidden_act, Activation output_act, double dropout_rate,
                   std::uint64_t seed)
    : dropout_rate_(dropout_rate), seed_(seed) {
    if (input_dim <= 0 || output_dim <= 0) throw std::invalid_argument("DenseNet: non-positive layer width");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("DenseNet: dropout rate outside [0, 1)");
    dims_.push_back(input_dim);
    for (int h : hidden_dims) {
        if (h <= 0) throw std::invalid_argument("DenseNet: non-positive layer width");
        dims_.push_back(h);
        acts_.push_back(hidden_act);
    }
    dims_.push_back(output_dim);
    acts_.push_back(output_act);

    params_.assign(param_count(dims_), 0.0);
    Rng rng = make_rng(seed);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const int fan_in = dims_[l];
        const int fan_out = dims_[l + 1];
        double scale;
        if (acts_[l] == Activation::relu) {
            scale = std::sqrt(2.0 / fan_in);  // He
        } else {
            scale = std::sqrt(6.0 / (fan_in + fan_out));  // Xavier uniform bound
        }
        const std::size_t w_count = static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out);
        for (std::size_t i = 0; i < w_count; ++i) {
            if (acts_[l] == Activation::relu) {
                params_[off + i] = rand_normal(rng) * scale;
            } else {
                params_[off + i] = (2.0 * rand_uniform(rng) - 1.0) * scale;
            }
        }
        off += w_count + static_cast<std::size_t>(fan_out);  // biases stay zero
    }
}

std::size_t DenseNet::weight_offset(int layer) const {
    std::size_t off = 0;
    for (int l = 0; l < layer; ++l) {
        off += static_cast<std::size_t>(dims_[static_cast<std::size_t>(l)]) *
                   static_cast<std::size_t>(dims_[static_cast<std::size_t>(l) + 1]) +
               static_cast<std::size_t>(dims_[static_cast<std::size_t>(l) + 1]);
    }
    return off;
}

std::size_t DenseNet::bias_offset(int layer) const {
    return weight_offset(layer) + static_cast<std::size_t>(dims_[static_cast<std::size_t>(layer)]) *
                                      static_cast<std::size_t>(dims_[static_cast<std::size_t>(layer) + 1]);
}

DenseNet DenseNet::from_parts(std::vector<int> dims, std::vector<Activation> acts,
                              double dropout_rate, std::uint64_t seed, Vec params) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw std::invalid_argument("from_parts: inconsistent dims/activations");
    if (params.size() != param_count(dims)) throw std::invalid_argument("from_parts: wrong parameter count");
    DenseNet net;
    net.dims_ = std::move(dims);
    net.acts_ = std::move(acts);
    net.dropout_rate_ = dropout_rate;
    net.seed_ = seed;
    net.params_ = std::move(params);
    return net;
}

Vec forward(const DenseNet& net, const Vec& x) { return forward(net, x, false, nullptr, nullptr); }

Vec forward(const DenseNet& net, const Vec& x, bool train, Rng* rng, ForwardCache* cache) {
    if (static_cast<int>(x.size()) != net.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    const bool dropout_active = train && net.dropout_rate() > 0.0;
    if (dropout_active && rng == nullptr)
        throw std::invalid_argument("forward: training with dropout requires an rng");

    const int n_layers = net.n_layers();
    if (cache) {
        cache->input = x;
        cache->pre.assign(static_cast<std::size_t>(n_layers), Vec{});
        cache->post.assign(static_cast<std::size_t>(n_layers), Vec{});
        cache->mask.assign(static_cast<std::size_t>(n_layers), Vec{});
        cache->train = train;
        cache->version = net.version();
    }

    const Vec& p = net.params();
    Vec cur = x;
    for (int l = 0; l < n_layers; ++l) {
        const int in_dim = net.dims()[static_cast<std::size_t>(l)];
        const int out_dim = net.dims()[static_cast<std::size_t>(l) + 1];
        const std::size_t w_off = net.weight_offset(l);
        const std::size_t b_off = net.bias_offset(l);
        Vec pre(static_cast<std::size_t>(out_dim));
        for (int j = 0; j < out_dim; ++j) {
            const double* w_row = &p[w_off + static_cast<std::size_t>(j) * static_cast<std::size_t>(in_dim)];
            double acc = p[b_off + static_cast<std::size_t>(j)];
            for (int i = 0; i < in_dim; ++i) acc += w_row[i] * cur[static_cast<std::size_t>(i)];
            pre[static_cast<std::size_t>(j)] = acc;
        }
        Vec post(static_cast<std::size_t>(out_dim));
        const Activation act = net.activation(l);
        for (int j = 0; j < out_dim; ++j)
            post[static_cast<std::size_t>(j)] = apply_act(act, pre[static_cast<std::size_t>(j)]);

        const bool hidden = l + 1 < n_layers;
        if (dropout_active && hidden) {
            const double keep = 1.0 - net.dropout_rate();
            Vec mask(static_cast<std::size_t>(out_dim));
            for (int j = 0; j < out_dim; ++j) {
                const bool kept = rand_uniform(*rng) < keep;
                mask[static_cast<std::size_t>(j)] = kept ? 1.0 / keep : 0.0;
                post[static_cast<std::size_t>(j)] *= mask[static_cast<std::size_t>(j)];
            }
            if (cache) cache->mask[static_cast<std::size_t>(l)] = std::move(mask);
        }

        if (cache) {
            cache->pre[static_cast<std::size_t>(l)] = std::move(pre);
            cache->post[static_cast<std::size_t>(l)] = post;
        }
        cur = std::move(post);
    }
    return cur;
}

Gradients backward(const DenseNet& net, const ForwardCache& cache, const Vec& grad_out) {
    if (cache.version != net.version())
        throw std::logic_error("backward: forward cache is stale (parameters changed)");
    if (static_cast<int>(grad_out.size()) != net.output_dim())
        throw std::invalid_argument("backward: grad_out dimension mismatch");
    if (cache.pre.size() != static_cast<std::size_t>(net.n_layers()))
        throw std::invalid_argument("backward: cache layer count mismatch");

    Gradients g;
    g.params.assign(net.params().size(), 0.0);

    const Vec& p = net.params();
    Vec delta = grad_out;  // dL/d post-activation of current layer
    for (int l = net.n_layers() - 1; l >= 0; --l) {
        const int in_dim = net.dims()[static_cast<std::size_t>(l)];
        const int out_dim = net.dims()[static_cast<std::size_t>(l) + 1];
        const std::size_t w_off = net.weight_offset(l);
        const std::size_t b_off = net.bias_offset(l);
        const Vec& pre = cache.pre[static_cast<std::size_t>(l)];
        const Vec& post = cache.post[static_cast<std::size_t>(l)];
        const Vec& mask = cache.mask[static_cast<std::size_t>(l)];
        const Vec& layer_in = l == 0 ? cache.input : cache.post[static_cast<std::size_t>(l) - 1];
        const Activation act = net.activation(l);

        Vec dpre(static_cast<std::size_t>(out_dim));
        for (int j = 0; j < out_dim; ++j) {
            double d = delta[static_cast<std::size_t>(j)];
            double post_raw = post[static_cast<std::size_t>(j)];
            if (!mask.empty()) {
                d *= mask[static_cast<std::size_t>(j)];  // dropout scale
                const double m = mask[static_cast<std::size_t>(j)];
                post_raw = m > 0.0 ? post_raw / m : apply_act(act, pre[static_cast<std::size_t>(j)]);
            }
            dpre[static_cast<std::size_t>(j)] =
                d * act_grad(act, pre[static_cast<std::size_t>(j)], post_raw);
        }

        Vec dinput(static_cast<std::size_t>(in_dim), 0.0);
        for (int j = 0; j < out_dim; ++j) {
            const double dj = dpre[static_cast<std::size_t>(j)];
            const std::size_t row = w_off + static_cast<std::size_t>(j) * static_cast<std::size_t>(in_dim);
            g.params[b_off + static_cast<std::size_t>(j)] += dj;
            for (int i = 0; i < in_dim; ++i) {
                g.params[row + static_cast<std::size_t>(i)] += dj * layer_in[static_cast<std::size_t>(i)];
                dinput[static_cast<std::size_t>(i)] += dj * p[row + static_cast<std::size_t>(i)];
            }
        }
        delta = std::move(dinput);
    }
    g.input = std::move(delta);
    return g;
}

void adam_step(Vec& params, const Vec& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    for (double g : grads) {
        if (!std::isfinite(g)) throw std::runtime_error("adam_step: non-finite gradient");
    }
    state.step += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double m_hat = state.m[i] / b1t;
        const double v_hat = state.v[i] / b2t;
        params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

GradCheckReport finite_diff_check(const std::function<double(const Vec&)>& loss,
                                  const Vec& analytic_grad, const Vec& params, double tol,
                                  int n_coords, Rng& rng, double step) {
    if (analytic_grad.size() != params.size())
        throw std::invalid_argument("finite_diff_check: gradient/parameter size mismatch");
    if (params.empty()) throw std::invalid_argument("finite_diff_check: empty parameter vector");

    const int n = static_cast<int>(params.size());
    std::vector<int> coords;
    if (n_coords >= n) {
        coords.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
        coords = sample_without_replacement(rng, n, n_coords);
    }

    GradCheckReport report;
    Vec probe = params;
    const double f0 = loss(probe);
    for (int c : coords) {
        const std::size_t i = static_cast<std::size_t>(c);
        const double saved = probe[i];
        probe[i] = saved + step;
        const double f_plus = loss(probe);
        probe[i] = saved - step;
        const double f_minus = loss(probe);
        probe[i] = saved;

        const double fwd = (f_plus - f0) / step;
        const double bwd = (f0 - f_minus) / step;
        // one-sided slopes disagreeing by a non-curvature amount means the
        // loss is kinked at this coordinate; central differences are invalid
        if (std::abs(fwd - bwd) > 0.1 * (std::abs(fwd) + std::abs(bwd)) + 1e-6) {
            ++report.skipped;
            continue;
        }
        const double fd = (f_plus - f_minus) / (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(analytic_grad[i]), 1e-8});
        const double rel = std::abs(fd - analytic_grad[i]) / denom;
        report.max_rel_err = std::max(report.max_rel_err, rel);
        ++report.checked;
    }
    report.pass = report.checked > 0 && report.max_rel_err < tol;
    return report;
}

Vec softmax(const Vec& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

Vec log_softmax(const Vec& logits) {
    if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double v : logits) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    Vec out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double l2_norm(const Vec& v) { return std::sqrt(dot(v, v)); }

double euclidean_distance(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw std::invalid_argument("euclidean_distance: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

namespace {
constexpr char kMagic[] = "PAUTHNET";
constexpr int kSchema = 1;
}  // namespace

void save_net(std::ostream& os, const DenseNet& net, const std::string& meta) {
    if (meta.find('\n') != std::string::npos)
        throw std::invalid_argument("save_net: metadata must be a single line");
    os << kMagic << ' ' << kSchema << '\n';
    os << "dims";
    for (int d : net.dims()) os << ' ' << d;
    os << '\n';
    os << "acts";
    for (int l = 0; l < net.n_layers(); ++l) os << ' ' << activation_name(net.activation(l));
    os << '\n';
    os << "dropout " << net.dropout_rate() << '\n';
    os << "seed " << net.seed() << '\n';
    os << "meta " << (meta.empty() ? "-" : meta) << '\n';
    os << "end\n";
    static_assert(sizeof(double) == 8, "checkpoint format requires 8-byte doubles");
    os.write(reinterpret_cast<const char*>(net.params().data()),
             static_cast<std::streamsize>(net.params().size() * sizeof(double)));
    if (!os) throw std::runtime_error("save_net: write failed");
}

DenseNet load_net(std::istream& is, std::string* meta) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("load_net: empty stream");
    {
        std::istringstream h(line);
        std::string magic;
        int schema = 0;
        h >> magic >> schema;
        if (magic != kMagic || schema != kSchema)
            throw std::runtime_error("load_net: bad magic or unsupported schema version");
    }
    std::vector<int> dims;
    std::vector<Activation> acts;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    std::string meta_line;
    while (std::getline(is, line)) {
        if (line == "end") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "dims") {
            int d;
            while (ls >> d) dims.push_back(d);
        } else if (key == "acts") {
            std::string a;
            while (ls >> a) acts.push_back(activation_from_name(a));
        } else if (key == "dropout") {
            ls >> dropout;
        } else if (key == "seed") {
            ls >> seed;
        } else if (key == "meta") {
            std::getline(ls, meta_line);
            if (!meta_line.empty() && meta_line.front() == ' ') meta_line.erase(0, 1);
            if (meta_line == "-") meta_line.clear();
        } else {
            throw std::runtime_error("load_net: unknown header field '" + key + "'");
        }
    }
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
        throw std::runtime_error("load_net: malformed header");
    Vec params(param_count(dims));
    is.read(reinterpret_cast<char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
    if (is.gcount() != static_cast<std::streamsize>(params.size() * sizeof(double)))
        throw std::runtime_error("load_net: truncated parameter block");
    if (meta) *meta = meta_line;
    return DenseNet::from_parts(std::move(dims), std::move(acts), dropout, seed, std::move(params));
}

}  // namespace pauth
