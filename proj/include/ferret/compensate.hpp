#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "ferret/types.hpp"

namespace ferret {

using ParamVec = std::vector<double>;

inline void check_same_shape(const ParamVec& a, const ParamVec& b, const char* what) {
    if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

enum class CompensationPolicy : int { none = 0, step = 1, gap = 2, fisher = 3, iter_fisher = 4 };

inline std::string to_string(CompensationPolicy p) {
    switch (p) {
        case CompensationPolicy::none: return "none";
        case CompensationPolicy::step: return "step";
        case CompensationPolicy::gap: return "gap";
        case CompensationPolicy::fisher: return "fisher";
        default: return "iter_fisher";
    }
}

inline CompensationPolicy policy_from_string(const std::string& s) {
    if (s == "none") return CompensationPolicy::none;
    if (s == "step" || s == "step_aware") return CompensationPolicy::step;
    if (s == "gap" || s == "gap_aware") return CompensationPolicy::gap;
    if (s == "fisher") return CompensationPolicy::fisher;
    if (s == "iter_fisher") return CompensationPolicy::iter_fisher;
    throw ConfigError("unknown compensation policy '" + s + "'");
}

/// Diagonal-Fisher first-order correction: g + lambda .* g .* g .* (to - from).
inline ParamVec compensate_fisher(const ParamVec& g, const ParamVec& theta_to,
                                  const ParamVec& theta_from, const ParamVec& lambda) {
    check_same_shape(g, theta_to, "compensate_fisher");
    check_same_shape(g, theta_from, "compensate_fisher");
    check_same_shape(g, lambda, "compensate_fisher");
    ParamVec out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        out[i] = g[i] + lambda[i] * g[i] * g[i] * (theta_to[i] - theta_from[i]);
    return out;
}

/// State for the iterative compensator: per-parameter lambda plus EMA buffers
/// of the raw gradient (v_r) and of g.*g.*dtheta (v_a).
struct CompensatorState {
    ParamVec lambda;
    ParamVec v_r;
    ParamVec v_a;
    double alpha = 0.99;
    double eta_lambda = 0.0;
    double nu = 2e-6;

    static CompensatorState make(std::size_t n, double lambda0 = 0.2, double eta_lambda = 0.0,
                                 double alpha = 0.99, double nu = 2e-6) {
        CompensatorState st;
        st.lambda.assign(n, lambda0);
        if (eta_lambda > 0.0) {
            st.v_r.assign(n, 0.0);
            st.v_a.assign(n, 0.0);
        }
        st.alpha = alpha;
        st.eta_lambda = eta_lambda;
        st.nu = nu;
        return st;
    }
};

/// Iterative gradient compensation: optionally takes one gradient step on
/// lambda against ||dv_r - lambda.*v_a||^2 + nu*||lambda||^2, refreshes the
/// EMAs, then folds the Fisher correction across consecutive chain pairs.
/// `chain` holds the parameter versions theta^{t-1} .. theta^{t+tau-1}.
inline std::pair<ParamVec, CompensatorState> compensate_iterative(
    const ParamVec& g, const std::vector<ParamVec>& chain, CompensatorState state) {
    if (chain.empty()) throw std::invalid_argument("compensate_iterative: empty version chain");
    check_same_shape(g, state.lambda, "compensate_iterative");
    for (const auto& v : chain) check_same_shape(g, v, "compensate_iterative");
    if (state.eta_lambda > 0.0 && chain.size() >= 2) {
        const double one_m_a = 1.0 - state.alpha;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double dv_r = one_m_a * (g[i] - state.v_r[i]);
            const double resid = dv_r - state.lambda[i] * state.v_a[i];
            const double grad_l = -2.0 * resid * state.v_a[i] + 2.0 * state.nu * state.lambda[i];
            state.lambda[i] -= state.eta_lambda * grad_l;
            const double dtheta = chain[1][i] - chain[0][i];
            state.v_r[i] = state.alpha * state.v_r[i] + one_m_a * g[i];
            state.v_a[i] = state.alpha * state.v_a[i] + one_m_a * g[i] * g[i] * dtheta;
        }
    }
    ParamVec out = g;
    for (std::size_t step = 0; step + 1 < chain.size(); ++step)
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] += state.lambda[i] * out[i] * out[i] * (chain[step + 1][i] - chain[step][i]);
    return {std::move(out), std::move(state)};
}

/// Step-aware baseline: uniformly shrink the stale gradient by 1/(1+tau).
inline ParamVec compensate_step_aware(const ParamVec& g, int tau) {
    if (tau < 0) throw std::invalid_argument("compensate_step_aware: tau must be >= 0");
    ParamVec out(g.size());
    const double scale = 1.0 / (1.0 + static_cast<double>(tau));
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i] * scale;
    return out;
}

/// Gap-aware baseline: per-parameter penalty by the observed parameter gap
/// relative to its running mean (floored at 1e-12).
inline ParamVec compensate_gap_aware(const ParamVec& g, const ParamVec& theta_now,
                                     const ParamVec& theta_read,
                                     const ParamVec& running_mean_gap) {
    check_same_shape(g, theta_now, "compensate_gap_aware");
    check_same_shape(g, theta_read, "compensate_gap_aware");
    check_same_shape(g, running_mean_gap, "compensate_gap_aware");
    ParamVec out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double mean_gap = std::max(running_mean_gap[i], 1e-12);
        const double gap = std::abs(theta_now[i] - theta_read[i]);
        out[i] = g[i] / (1.0 + gap / mean_gap);
    }
    return out;
}

/// Ring of recent parameter versions, newest last.
class VersionRing {
  public:
    explicit VersionRing(std::size_t depth) : depth_(depth) {
        if (depth_ == 0) throw std::invalid_argument("VersionRing: depth must be >= 1");
    }

    void push(std::int64_t version, ParamVec params) {
        ring_.push_back({version, std::move(params)});
        while (ring_.size() > depth_) ring_.pop_front();
    }

    bool has(std::int64_t version) const {
        for (const auto& e : ring_)
            if (e.version == version) return true;
        return false;
    }

    /// Versions from `from` through the newest, inclusive, oldest first.
    std::vector<ParamVec> chain_from(std::int64_t from) const {
        std::vector<ParamVec> out;
        for (const auto& e : ring_)
            if (e.version >= from) out.push_back(e.params);
        if (out.empty()) throw std::out_of_range("VersionRing: version evicted");
        return out;
    }

    const ParamVec& newest() const {
        if (ring_.empty()) throw std::out_of_range("VersionRing: empty");
        return ring_.back().params;
    }

    std::size_t size() const { return ring_.size(); }

  private:
    struct Entry {
        std::int64_t version;
        ParamVec params;
    };
    std::size_t depth_;
    std::deque<Entry> ring_;
};

} // namespace ferret
