#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ferret/compensate.hpp"
#include "ferret/metrics.hpp"
#include "ferret/net.hpp"
#include "ferret/sim.hpp"
#include "ferret/stream.hpp"
#include "ferret/types.hpp"

namespace ferret {

inline constexpr double kLearningRate = 1e-3;
inline constexpr std::size_t kReplayBuffer = 5000;

inline ParamVec flatten(const DenseNet& net) {
    ParamVec out;
    out.reserve(net.n_params());
    for (const auto& l : net.layers) {
        out.insert(out.end(), l.W.begin(), l.W.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
}

inline void unflatten_into(DenseNet& net, const ParamVec& v) {
    std::size_t at = 0;
    for (auto& l : net.layers) {
        std::copy(v.begin() + at, v.begin() + at + l.W.size(), l.W.begin());
        at += l.W.size();
        std::copy(v.begin() + at, v.begin() + at + l.b.size(), l.b.begin());
        at += l.b.size();
    }
}

inline ParamVec flatten_grads(const Gradients& g) {
    ParamVec out;
    for (std::size_t i = 0; i < g.W.size(); ++i) {
        out.insert(out.end(), g.W[i].begin(), g.W[i].end());
        out.insert(out.end(), g.b[i].begin(), g.b[i].end());
    }
    return out;
}

/// Uniform reservoir over seen samples, capacity fixed at construction.
class ReplayBuffer {
  public:
    ReplayBuffer(std::size_t capacity, std::uint64_t seed)
        : capacity_(capacity), rng_(seed ^ 0xbf58476d1ce4e5b9ULL) {}

    void add(const Sample& s) {
        ++seen_;
        if (items_.size() < capacity_) {
            items_.push_back(s);
        } else {
            const std::uint64_t at = rng_.below(seen_);
            if (at < capacity_) items_[static_cast<std::size_t>(at)] = s;
        }
    }

    bool empty() const { return items_.empty(); }

    const Sample& sample() { return items_[static_cast<std::size_t>(rng_.below(items_.size()))]; }

  private:
    std::size_t capacity_;
    Rng rng_;
    std::uint64_t seen_ = 0;
    std::vector<Sample> items_;
};

/// Per-policy compensation context over a flat parameter space.
class Compensator {
  public:
    Compensator(CompensationPolicy policy, std::size_t n_params, double lambda0 = 0.2,
                double eta_lambda = 1e-3, double alpha = 0.99, double nu = 2e-6)
        : policy_(policy) {
        if (policy_ == CompensationPolicy::iter_fisher)
            state_ = CompensatorState::make(n_params, lambda0, eta_lambda, alpha, nu);
        else if (policy_ == CompensationPolicy::fisher)
            fixed_lambda_.assign(n_params, lambda0);
        else if (policy_ == CompensationPolicy::gap)
            mean_gap_.assign(n_params, 0.0);
    }

    /// chain = parameter versions theta^{read} .. theta^{current}, oldest first.
    ParamVec apply(const ParamVec& g, const std::vector<ParamVec>& chain) {
        const int tau = static_cast<int>(chain.size()) - 1;
        switch (policy_) {
            case CompensationPolicy::none:
                return g;
            case CompensationPolicy::step:
                return compensate_step_aware(g, tau);
            case CompensationPolicy::gap: {
                const ParamVec& now = chain.back();
                const ParamVec& read = chain.front();
                ParamVec out = compensate_gap_aware(g, now, read, mean_gap_);
                for (std::size_t i = 0; i < mean_gap_.size(); ++i)
                    mean_gap_[i] = 0.99 * mean_gap_[i] + 0.01 * std::abs(now[i] - read[i]);
                return out;
            }
            case CompensationPolicy::fisher:
                return compensate_fisher(g, chain.back(), chain.front(), fixed_lambda_);
            default: {
                auto [out, st] = compensate_iterative(g, chain, std::move(state_));
                state_ = std::move(st);
                return out;
            }
        }
    }

  private:
    CompensationPolicy policy_;
    CompensatorState state_;
    ParamVec fixed_lambda_;
    ParamVec mean_gap_;
};

/// Sequential online learner that injects a staleness schedule: gradients are
/// computed at the parameter version tau steps behind and compensated toward
/// the current version before applying. tau = 0 reproduces plain online SGD.
class StaleHarness {
  public:
    StaleHarness(DenseNet net, CompensationPolicy policy, std::size_t ring_depth,
                 double lr = kLearningRate, double eta_lambda = 1e-3)
        : net_(std::move(net)),
          lr_(lr),
          ring_(std::max<std::size_t>(ring_depth, 1)),
          comp_(policy, net_.n_params(), 0.2, eta_lambda),
          norm_(net_.n_inputs()) {
        ring_.push(0, flatten(net_));
    }

    /// Predict-then-train on one item; returns the prediction.
    std::size_t ocl_step(const StreamItem& item, int tau) {
        norm_.observe(item.features);
        const auto x = norm_.apply(item.features);
        const std::size_t pred = predict_class(net_, x);
        const int eff_tau = std::min<int>(tau, static_cast<int>(ring_.size()) - 1);
        const std::int64_t read_version = version_ - eff_tau;
        DenseNet read_net = net_;
        const auto chain = ring_.chain_from(read_version);
        unflatten_into(read_net, chain.front());
        auto [loss, grads] = forward_backward(read_net, Batch{{x, item.label}});
        (void)loss;
        ParamVec g = comp_.apply(flatten_grads(grads), chain);
        ParamVec params = flatten(net_);
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * g[i];
        unflatten_into(net_, params);
        ++version_;
        ring_.push(version_, std::move(params));
        return pred;
    }

    const DenseNet& net() const { return net_; }
    const RunningNormalizer& normalizer() const { return norm_; }

  private:
    DenseNet net_;
    double lr_;
    std::int64_t version_ = 0;
    VersionRing ring_;
    Compensator comp_;
    RunningNormalizer norm_;
};

struct TrainOutcome {
    std::vector<StepRecord> log;
    DenseNet net;
    RunningNormalizer normalizer;

    double oacc() const { return online_accuracy(log); }
};

/// Held-out accuracy in percentage points.
inline double test_accuracy(const DenseNet& net, const RunningNormalizer& norm,
                            const std::vector<Sample>& held_out) {
    if (held_out.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : held_out)
        correct += predict_class(net, norm.apply(s.x)) == s.label ? 1 : 0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(held_out.size());
}

/// Sequential baseline trainer: the skip policy decides which items train;
/// skipped items receive no timely prediction and log as dropped.
inline TrainOutcome train_sequential(DenseNet net, const DataStream& stream, double t_d,
                                     const SkipPolicy& policy, double processing_time,
                                     double lr = kLearningRate, bool replay = false,
                                     std::uint64_t replay_seed = 0) {
    const FilteredStream filtered =
        apply_skip_policy(stream.items.size(), t_d, policy, processing_time);
    TrainOutcome out{std::vector<StepRecord>(stream.items.size()), std::move(net),
                     RunningNormalizer(stream.n_features)};
    for (std::size_t i = 0; i < stream.items.size(); ++i)
        out.log[i] = {static_cast<std::int64_t>(i), StepOutcome::dropped, 0,
                      stream.items[i].label};
    ReplayBuffer buffer(kReplayBuffer, replay_seed);
    for (const auto& kept : filtered.kept) {
        const auto& item = stream.items[static_cast<std::size_t>(kept.index)];
        out.normalizer.observe(item.features);
        const auto x = out.normalizer.apply(item.features);
        const std::size_t pred = predict_class(out.net, x);
        out.log[static_cast<std::size_t>(kept.index)] = {
            item.index, pred == item.label ? StepOutcome::correct : StepOutcome::wrong, pred,
            item.label};
        Batch batch{{x, item.label}};
        if (replay && !buffer.empty()) batch.push_back(buffer.sample());
        auto [loss, grads] = forward_backward(out.net, batch);
        (void)loss;
        apply_sgd(out.net, grads, lr);
        if (replay) buffer.add({x, item.label});
    }
    return out;
}

namespace detail {

/// Layer range [lo, hi) of one pipeline stage.
struct StageSpan {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

inline std::vector<StageSpan> stage_spans(const PartitionScheme& scheme) {
    std::vector<StageSpan> spans;
    for (std::size_t j = 0; j < scheme.stages(); ++j)
        spans.push_back({scheme.bounds[j], scheme.bounds[j + 1]});
    return spans;
}

inline ParamVec stage_params(const DenseNet& net, const StageSpan& span) {
    ParamVec out;
    for (std::size_t l = span.lo; l < span.hi; ++l) {
        out.insert(out.end(), net.layers[l].W.begin(), net.layers[l].W.end());
        out.insert(out.end(), net.layers[l].b.begin(), net.layers[l].b.end());
    }
    return out;
}

inline void set_stage_params(DenseNet& net, const StageSpan& span, const ParamVec& v) {
    std::size_t at = 0;
    for (std::size_t l = span.lo; l < span.hi; ++l) {
        std::copy(v.begin() + at, v.begin() + at + net.layers[l].W.size(), net.layers[l].W.begin());
        at += net.layers[l].W.size();
        std::copy(v.begin() + at, v.begin() + at + net.layers[l].b.size(), net.layers[l].b.begin());
        at += net.layers[l].b.size();
    }
}

/// Stage-version store with exact retention: a version is kept while any
/// in-flight forward still needs it for a future backward/update.
class StageVersions {
  public:
    void init(ParamVec initial) {
        versions_.clear();
        versions_.push_back({0, std::move(initial)});
        current_ = 0;
    }

    std::int64_t current() const { return current_; }

    const ParamVec& at(std::int64_t v) const {
        for (const auto& e : versions_)
            if (e.version == v) return e.params;
        throw std::out_of_range("stage version evicted");
    }

    std::vector<ParamVec> chain_from(std::int64_t v) const {
        std::vector<ParamVec> out;
        for (const auto& e : versions_)
            if (e.version >= v) out.push_back(e.params);
        if (out.empty()) throw std::out_of_range("stage version chain evicted");
        return out;
    }

    void push(ParamVec params) {
        ++current_;
        versions_.push_back({current_, std::move(params)});
        gc();
    }

    void hold(std::int64_t v) { held_.insert(v); }
    void release(std::int64_t v) {
        auto it = held_.find(v);
        if (it != held_.end()) held_.erase(it);
        gc();
    }

  private:
    struct Entry {
        std::int64_t version;
        ParamVec params;
    };

    void gc() {
        const std::int64_t floor_v = held_.empty() ? current_ : std::min(*held_.begin(), current_);
        while (versions_.size() > 1 && versions_.front().version < floor_v)
            versions_.pop_front();
    }

    std::deque<Entry> versions_;
    std::multiset<std::int64_t> held_;
    std::int64_t current_ = 0;
};

} // namespace detail

struct PipelineTrainOptions {
    CompensationPolicy policy = CompensationPolicy::none;
    double lr = kLearningRate;
    double eta_lambda = 1e-3;
    bool replay = false;
    std::uint64_t replay_seed = 0;
};

/// Replays a simulator trace with real gradients: stage forwards/backwards run
/// at the parameter versions the schedule dictates, updates apply compensated
/// stale gradients to the one shared model in virtual-time order.
class PipelineTrainer {
  public:
    PipelineTrainer(DenseNet net, const PartitionScheme& scheme, const PipelineTrainOptions& opt)
        : net_(std::move(net)),
          spans_(detail::stage_spans(scheme)),
          opt_(opt),
          norm_(net_.n_inputs()),
          buffer_(kReplayBuffer, opt.replay_seed) {
        net_.validate();
        scheme.validate(net_.layers.size());
        versions_.resize(spans_.size());
        for (std::size_t j = 0; j < spans_.size(); ++j) {
            versions_[j].init(detail::stage_params(net_, spans_[j]));
            comps_.emplace_back(opt_.policy, detail::stage_params(net_, spans_[j]).size(), 0.2,
                                opt_.eta_lambda);
        }
    }

    TrainOutcome run(const SimTrace& trace, const DataStream& stream) {
        std::vector<StepRecord> log(stream.items.size());
        std::unordered_set<std::int64_t> dropped;
        for (const auto& e : trace.events)
            if (e.kind == EventKind::drop) dropped.insert(e.item);
        for (const auto& e : trace.events) {
            switch (e.kind) {
                case EventKind::arrival: on_arrival(e, stream, dropped, log); break;
                case EventKind::forward: on_forward(e, stream); break;
                case EventKind::backward: on_backward(e, stream); break;
                case EventKind::update: on_update(e); break;
                default: break;
            }
        }
        return {std::move(log), std::move(net_), std::move(norm_)};
    }

  private:
    struct InFlight {
        std::vector<double> input; // normalized features
        std::size_t label = 0;
        std::vector<std::int64_t> read_version;            // per stage
        std::vector<std::vector<std::vector<double>>> acts; // per stage: per-layer outputs
        std::vector<double> delta;                          // gradient flowing backward
    };

    struct PendingGrad {
        ParamVec grad;
        std::int64_t read_version;
    };

    DenseNet net_;
    std::vector<detail::StageSpan> spans_;
    PipelineTrainOptions opt_;
    RunningNormalizer norm_;
    ReplayBuffer buffer_;
    std::vector<detail::StageVersions> versions_;
    std::vector<Compensator> comps_;
    std::map<std::pair<int, std::int64_t>, InFlight> inflight_; // (worker, item)
    std::map<std::pair<int, int>, std::vector<PendingGrad>> acc_; // (worker, stage)

    void on_arrival(const SimEvent& e, const DataStream& stream,
                    const std::unordered_set<std::int64_t>& dropped,
                    std::vector<StepRecord>& log) {
        const auto& item = stream.items[static_cast<std::size_t>(e.item)];
        norm_.observe(item.features);
        if (dropped.count(e.item)) {
            log[static_cast<std::size_t>(e.item)] = {e.item, StepOutcome::dropped, 0, item.label};
            return;
        }
        const auto x = norm_.apply(item.features);
        const std::size_t pred = predict_class(net_, x);
        log[static_cast<std::size_t>(e.item)] = {
            e.item, pred == item.label ? StepOutcome::correct : StepOutcome::wrong, pred,
            item.label};
        InFlight fl;
        fl.input = x;
        fl.label = item.label;
        fl.read_version.assign(spans_.size(), -1);
        fl.acts.resize(spans_.size());
        inflight_[{e.worker, e.item}] = std::move(fl);
        if (opt_.replay) buffer_.add({x, item.label});
    }

    void on_forward(const SimEvent& e, const DataStream&) {
        auto it = inflight_.find({e.worker, e.item});
        if (it == inflight_.end()) return;
        InFlight& fl = it->second;
        const std::size_t j = static_cast<std::size_t>(e.stage);
        const std::int64_t v = versions_[j].current();
        fl.read_version[j] = v;
        versions_[j].hold(v);
        DenseNet stage_net = net_;
        detail::set_stage_params(stage_net, spans_[j], versions_[j].at(v));
        const std::vector<double>* input =
            j == 0 ? &fl.input : &fl.acts[j - 1].back();
        fl.acts[j].clear();
        const std::vector<double>* cur = input;
        for (std::size_t l = spans_[j].lo; l < spans_[j].hi; ++l) {
            std::vector<double> z;
            detail::affine_forward(stage_net.layers[l], *cur, z);
            detail::apply_activation(stage_net.layers[l].act, z);
            fl.acts[j].push_back(std::move(z));
            cur = &fl.acts[j].back();
        }
    }

    void on_backward(const SimEvent& e, const DataStream&) {
        auto it = inflight_.find({e.worker, e.item});
        if (it == inflight_.end()) return;
        InFlight& fl = it->second;
        const std::size_t j = static_cast<std::size_t>(e.stage);
        DenseNet stage_net = net_;
        detail::set_stage_params(stage_net, spans_[j], versions_[j].at(fl.read_version[j]));
        std::vector<double> delta;
        if (j + 1 == spans_.size()) {
            const auto probs = detail::softmax(fl.acts[j].back());
            delta = probs;
            delta[fl.label] -= 1.0;
        } else {
            delta = fl.delta;
        }
        ParamVec grad;
        for (std::size_t l = spans_[j].hi; l-- > spans_[j].lo;) {
            const auto& layer = stage_net.layers[l];
            const std::size_t local = l - spans_[j].lo;
            const std::vector<double>& input =
                local == 0 ? (j == 0 ? fl.input : fl.acts[j - 1].back()) : fl.acts[j][local - 1];
            if (layer.act == Activation::relu)
                for (std::size_t r = 0; r < layer.out; ++r)
                    if (fl.acts[j][local][r] <= 0.0) delta[r] = 0.0;
            // prepend this layer's gradients (stage param order is layer-ascending)
            ParamVec layer_grad(layer.W.size() + layer.b.size());
            for (std::size_t r = 0; r < layer.out; ++r) {
                const double d = delta[r];
                for (std::size_t c = 0; c < layer.in; ++c)
                    layer_grad[r * layer.in + c] = d * input[c];
                layer_grad[layer.W.size() + r] = d;
            }
            grad.insert(grad.begin(), layer_grad.begin(), layer_grad.end());
            std::vector<double> prev(layer.in, 0.0);
            for (std::size_t r = 0; r < layer.out; ++r) {
                const double d = delta[r];
                const double* row = layer.W.data() + r * layer.in;
                for (std::size_t c = 0; c < layer.in; ++c) prev[c] += d * row[c];
            }
            delta = std::move(prev);
        }
        fl.delta = std::move(delta);
        acc_[{e.worker, e.stage}].push_back({std::move(grad), fl.read_version[j]});
        if (j == 0) inflight_erase_when_done(e.worker, e.item);
    }

    void inflight_erase_when_done(int worker, std::int64_t item) {
        // the stage-0 backward is the item's last use of its stored state
        auto it = inflight_.find({worker, item});
        if (it != inflight_.end() && it->second.read_version[0] >= 0) {
            // keep read-version holds until their updates apply; activations can go
            it->second.acts.clear();
            it->second.delta.clear();
        }
    }

    void on_update(const SimEvent& e) {
        const std::size_t j = static_cast<std::size_t>(e.stage);
        auto it = acc_.find({e.worker, e.stage});
        if (it == acc_.end() || it->second.empty()) return;
        ParamVec mean;
        for (const auto& pg : it->second) {
            const auto chain = versions_[j].chain_from(pg.read_version);
            ParamVec g = comps_[j].apply(pg.grad, chain);
            if (mean.empty()) mean.assign(g.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i];
        }
        const double inv = 1.0 / static_cast<double>(it->second.size());
        ParamVec params = versions_[j].at(versions_[j].current());
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= opt_.lr * inv * mean[i];
        detail::set_stage_params(net_, spans_[j], params);
        versions_[j].push(std::move(params));
        for (const auto& pg : it->second) versions_[j].release(pg.read_version);
        it->second.clear();
        if (j == 0 && opt_.replay && !buffer_.empty()) replay_step();
    }

    /// One experience-replay step against the current full model.
    void replay_step() {
        auto [loss, grads] = forward_backward(net_, Batch{buffer_.sample()});
        (void)loss;
        apply_sgd(net_, grads, opt_.lr);
        for (std::size_t j = 0; j < spans_.size(); ++j)
            versions_[j].push(detail::stage_params(net_, spans_[j]));
    }
};

inline TrainOutcome train_pipeline(DenseNet net, const PartitionScheme& scheme,
                                   const SimTrace& trace, const DataStream& stream,
                                   const PipelineTrainOptions& opt) {
    return PipelineTrainer(std::move(net), scheme, opt).run(trace, stream);
}

} // namespace ferret
