#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ferret/profile.hpp"
#include "ferret/rng.hpp"
#include "ferret/types.hpp"

namespace ferret {

enum class Activation : int { relu = 0, identity = 1 };

/// One dense layer: out = act(W x + b), W stored row-major (out x in).
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    Activation act = Activation::relu;
    std::vector<double> W;
    std::vector<double> b;
};

/// Flat view of all parameters of one layer, used by the compensators.
struct DenseNet {
    std::vector<DenseLayer> layers;

    std::size_t n_params() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.W.size() + l.b.size();
        return n;
    }

    std::size_t n_inputs() const { return layers.empty() ? 0 : layers.front().in; }
    std::size_t n_outputs() const { return layers.empty() ? 0 : layers.back().out; }

    void validate() const {
        if (layers.empty()) throw ConfigError("net needs at least one layer");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.W.size() != l.in * l.out || l.b.size() != l.out)
                throw ConfigError("layer " + std::to_string(i) + ": parameter shape mismatch");
            if (i > 0 && layers[i - 1].out != l.in)
                throw ConfigError("layer " + std::to_string(i) + ": input width mismatch");
        }
    }
};

/// Glorot-style initialization, deterministic in the seed.
inline DenseNet make_dense_net(const std::vector<std::size_t>& widths, std::uint64_t seed,
                               Activation hidden_act = Activation::relu) {
    if (widths.size() < 2) throw ConfigError("net needs at least input and output widths");
    Rng rng(seed ^ 0xd1b54a32d192ed03ULL);
    DenseNet net;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        DenseLayer l;
        l.in = widths[i];
        l.out = widths[i + 1];
        l.act = (i + 2 == widths.size()) ? Activation::identity : hidden_act;
        const double scale = std::sqrt(2.0 / static_cast<double>(l.in + l.out));
        l.W.resize(l.in * l.out);
        l.b.assign(l.out, 0.0);
        for (auto& v : l.W) v = scale * rng.normal();
        net.layers.push_back(std::move(l));
    }
    return net;
}

struct Sample {
    std::vector<double> x;
    std::size_t label = 0;
};

using Batch = std::vector<Sample>;

/// Per-layer gradients, same shapes as the net.
struct Gradients {
    std::vector<std::vector<double>> W;
    std::vector<std::vector<double>> b;

    static Gradients zeros_like(const DenseNet& net) {
        Gradients g;
        g.W.reserve(net.layers.size());
        g.b.reserve(net.layers.size());
        for (const auto& l : net.layers) {
            g.W.emplace_back(l.W.size(), 0.0);
            g.b.emplace_back(l.b.size(), 0.0);
        }
        return g;
    }
};

namespace detail {

inline void affine_forward(const DenseLayer& l, const std::vector<double>& x,
                           std::vector<double>& z) {
    z.assign(l.out, 0.0);
    for (std::size_t r = 0; r < l.out; ++r) {
        double acc = l.b[r];
        const double* row = l.W.data() + r * l.in;
        for (std::size_t c = 0; c < l.in; ++c) acc += row[c] * x[c];
        z[r] = acc;
    }
}

inline void apply_activation(Activation act, std::vector<double>& z) {
    if (act == Activation::relu)
        for (auto& v : z) v = v > 0.0 ? v : 0.0;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = std::exp(z[i] - m);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

} // namespace detail

/// Forward pass returning post-activation outputs of every layer.
inline std::vector<std::vector<double>> forward_all(const DenseNet& net,
                                                    const std::vector<double>& x) {
    std::vector<std::vector<double>> acts;
    acts.reserve(net.layers.size());
    const std::vector<double>* cur = &x;
    for (const auto& l : net.layers) {
        std::vector<double> z;
        detail::affine_forward(l, *cur, z);
        detail::apply_activation(l.act, z);
        acts.push_back(std::move(z));
        cur = &acts.back();
    }
    return acts;
}

inline std::vector<double> predict_logits(const DenseNet& net, const std::vector<double>& x) {
    auto acts = forward_all(net, x);
    return acts.back();
}

inline std::size_t predict_class(const DenseNet& net, const std::vector<double>& x) {
    const auto logits = predict_logits(net, x);
    return static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
}

/// Mean softmax cross-entropy loss and analytic gradients over a batch.
inline std::pair<double, Gradients> forward_backward(const DenseNet& net, const Batch& batch) {
    net.validate();
    if (batch.empty()) throw std::invalid_argument("forward_backward: empty batch");
    Gradients grads = Gradients::zeros_like(net);
    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& sample : batch) {
        if (sample.x.size() != net.n_inputs())
            throw std::invalid_argument("forward_backward: feature width mismatch");
        if (sample.label >= net.n_outputs())
            throw std::invalid_argument("forward_backward: label out of range");
        const auto acts = forward_all(net, sample.x);
        const auto probs = detail::softmax(acts.back());
        loss -= inv_n * std::log(std::max(probs[sample.label], 1e-300));
        // delta at the logits
        std::vector<double> delta(probs);
        delta[sample.label] -= 1.0;
        for (auto& v : delta) v *= inv_n;
        for (std::size_t li = net.layers.size(); li-- > 0;) {
            const auto& l = net.layers[li];
            const std::vector<double>& input = li == 0 ? sample.x : acts[li - 1];
            if (l.act == Activation::relu)
                for (std::size_t r = 0; r < l.out; ++r)
                    if (acts[li][r] <= 0.0) delta[r] = 0.0;
            auto& gW = grads.W[li];
            auto& gb = grads.b[li];
            for (std::size_t r = 0; r < l.out; ++r) {
                const double d = delta[r];
                gb[r] += d;
                double* grow = gW.data() + r * l.in;
                for (std::size_t c = 0; c < l.in; ++c) grow[c] += d * input[c];
            }
            if (li == 0) break;
            std::vector<double> prev(l.in, 0.0);
            for (std::size_t r = 0; r < l.out; ++r) {
                const double d = delta[r];
                const double* row = l.W.data() + r * l.in;
                for (std::size_t c = 0; c < l.in; ++c) prev[c] += d * row[c];
            }
            delta = std::move(prev);
        }
    }
    return {loss, std::move(grads)};
}

inline void apply_sgd(DenseNet& net, const Gradients& grads, double lr) {
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& l = net.layers[li];
        for (std::size_t i = 0; i < l.W.size(); ++i) l.W[i] -= lr * grads.W[li][i];
        for (std::size_t i = 0; i < l.b.size(); ++i) l.b[i] -= lr * grads.b[li][i];
    }
}

inline constexpr const char* kCheckpointFormat = "ferret-ckpt v1";

inline void write_checkpoint(std::ostream& out, const DenseNet& net) {
    out << kCheckpointFormat << "\n";
    out << "layers " << net.layers.size() << "\n";
    for (const auto& l : net.layers) {
        out << "layer " << l.in << ' ' << l.out << ' '
            << (l.act == Activation::relu ? "relu" : "identity") << "\n";
        out << "W";
        for (double v : l.W) out << ' ' << detail::fmt_double(v);
        out << "\nb";
        for (double v : l.b) out << ' ' << detail::fmt_double(v);
        out << "\n";
    }
}

inline void save_checkpoint(const std::string& path, const DenseNet& net) {
    std::ofstream out(path);
    if (!out) throw SchemaError(path + ": cannot write checkpoint");
    write_checkpoint(out, net);
}

inline DenseNet load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open checkpoint");
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointFormat)
        throw SchemaError(path + ": expected header '" + std::string(kCheckpointFormat) + "'");
    std::size_t n = 0;
    in >> line >> n;
    DenseNet net;
    for (std::size_t i = 0; i < n; ++i) {
        DenseLayer l;
        std::string tag, act;
        in >> tag >> l.in >> l.out >> act;
        if (tag != "layer") throw SchemaError(path + ": malformed layer record");
        l.act = act == "relu" ? Activation::relu : Activation::identity;
        in >> tag;
        if (tag != "W") throw SchemaError(path + ": malformed weight record");
        l.W.resize(l.in * l.out);
        for (auto& v : l.W) in >> v;
        in >> tag;
        if (tag != "b") throw SchemaError(path + ": malformed bias record");
        l.b.resize(l.out);
        for (auto& v : l.b) in >> v;
        net.layers.push_back(std::move(l));
    }
    net.validate();
    return net;
}

/// Cost profile derived from the net's true shapes; times are synthetic,
/// proportional to each layer's multiply count.
inline ModelProfile profile_from_net(const DenseNet& net, double seconds_per_param = 1e-6) {
    ModelProfile p;
    for (const auto& l : net.layers) {
        LayerProfile lp;
        lp.w = l.W.size() + l.b.size();
        lp.a = l.out;
        lp.t_f = seconds_per_param * static_cast<double>(lp.w);
        lp.t_b = 2.0 * lp.t_f;
        p.layers.push_back(lp);
    }
    return p;
}

} // namespace ferret
