#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ferret/analytics.hpp"
#include "ferret/profile.hpp"
#include "ferret/types.hpp"

namespace ferret {

enum class MoveKind : int { recompute = 1, accumulate = 2, omit = 3, remove = 4 };

inline std::string to_string(MoveKind k) {
    switch (k) {
        case MoveKind::recompute: return "S1";
        case MoveKind::accumulate: return "S2";
        case MoveKind::omit: return "S3";
        default: return "S4";
    }
}

/// One applied deployment, kept for the plan's audit trace.
struct AppliedMove {
    MoveKind kind = MoveKind::accumulate;
    std::size_t worker = 0;
    std::size_t stage = 0; // unused for S4
    double d_rate = 0.0;
    std::int64_t d_memory = 0;

    bool operator==(const AppliedMove& o) const = default;
};

struct SearchResult {
    PipelineConfig config;
    double rate = 0.0;
    count_t memory = 0;
    bool infeasible = false;
    std::vector<AppliedMove> trace;
};

/// Worker count for one pipeline cycle; tolerates fp noise at exact multiples.
inline std::size_t worker_count(double cycle, double t_d) {
    const double ratio = cycle / t_d;
    const std::size_t n = static_cast<std::size_t>(std::ceil(ratio * (1.0 - 1e-9)));
    return n == 0 ? 1 : n;
}

inline PipelineConfig default_config(const StageStats& stats, double t_d, int recompute) {
    const double cycle = stats.t_f + stats.t_b + recompute * stats.t_f;
    const std::size_t n = worker_count(cycle, t_d);
    PipelineConfig cfg;
    cfg.modulus = static_cast<int>(n);
    cfg.workers.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        cfg.workers[i].delay = static_cast<int>(i);
        cfg.workers[i].recompute = recompute;
        cfg.workers[i].accum.assign(stats.stages(), 1);
        cfg.workers[i].omit.assign(stats.stages(), 0);
    }
    return cfg;
}

namespace detail {

struct Candidate {
    MoveKind kind;
    std::size_t worker;
    std::size_t stage;
    MoveDelta delta;
    int d_accum = 0;
};

/// Ranking for the greedy argmax of dM/dR: free-memory moves first (most
/// memory freed), then largest memory-per-rate ratio, then S2 < S3 < S4,
/// lowest worker, lowest stage.
inline bool better_move(const Candidate& a, const Candidate& b) {
    const auto rate_zero = [](double r) { return r == 0.0; }; // catches -0.0
    const bool a_free = rate_zero(a.delta.d_rate) && a.delta.d_memory < 0;
    const bool b_free = rate_zero(b.delta.d_rate) && b.delta.d_memory < 0;
    if (a_free != b_free) return a_free;
    if (a_free && b_free) {
        if (a.delta.d_memory != b.delta.d_memory) return a.delta.d_memory < b.delta.d_memory;
    } else {
        const double ra = rate_zero(a.delta.d_rate)
                              ? 0.0
                              : static_cast<double>(a.delta.d_memory) / a.delta.d_rate;
        const double rb = rate_zero(b.delta.d_rate)
                              ? 0.0
                              : static_cast<double>(b.delta.d_memory) / b.delta.d_rate;
        if (ra != rb) return ra > rb;
    }
    if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    if (a.worker != b.worker) return a.worker < b.worker;
    return a.stage < b.stage;
}

} // namespace detail

/// Alg. "iterative configuration search": start from the full default config
/// and greedily apply the deployment with the best memory-freed-per-rate-lost
/// ratio until the footprint fits the budget.
inline SearchResult iterative_config_search(const StageStats& stats, double t_d, int recompute,
                                            const StreamSpec& s, count_t budget) {
    SearchResult res;
    res.config = default_config(stats, t_d, recompute);
    res.rate = adaptation_rate(stats, res.config, s);
    res.memory = memory_footprint(stats, res.config);
    const std::size_t P = stats.stages();
    while (res.memory > budget) {
        std::optional<detail::Candidate> best;
        for (std::size_t n = 0; n < res.config.workers.size(); ++n) {
            const WorkerConfig& w = res.config.workers[n];
            if (!w.active()) continue;
            for (std::size_t j = 0; j < P; ++j) {
                if (w.omit[j] != 0) continue;
                MoveResult s2 = delta_accumulate(stats, res.config, s, n, j);
                detail::Candidate cand;
                if (s2.status == MoveStatus::ok) {
                    cand = {MoveKind::accumulate, n, j, s2.delta, s2.d_accum};
                } else {
                    MoveResult s3 = delta_omit(stats, res.config, s, n, j);
                    if (s3.status != MoveStatus::ok) continue;
                    cand = {MoveKind::omit, n, j, s3.delta, 0};
                }
                if (cand.delta.d_rate == 0.0 && cand.delta.d_memory == 0) continue;
                if (!best || detail::better_move(cand, *best)) best = cand;
            }
            bool removable = true;
            for (std::size_t j = 0; j + 1 < P; ++j) removable = removable && w.omit[j] != 0;
            if (removable) {
                MoveResult s4 = delta_remove(stats, res.config, s, n);
                if (s4.status == MoveStatus::ok) {
                    detail::Candidate cand{MoveKind::remove, n, 0, s4.delta, 0};
                    if (cand.delta.d_rate != 0.0 || cand.delta.d_memory != 0)
                        if (!best || detail::better_move(cand, *best)) best = cand;
                }
            }
        }
        if (!best) break;
        WorkerConfig& w = res.config.workers[best->worker];
        switch (best->kind) {
            case MoveKind::accumulate:
                w.accum[best->stage] += best->d_accum;
                break;
            case MoveKind::omit:
                w.accum[best->stage] = 1;
                w.omit[best->stage] = static_cast<int>(P - 1 - best->stage);
                break;
            default:
                w.delay = -1;
                break;
        }
        res.rate = adaptation_rate(stats, res.config, s);
        res.memory = memory_footprint(stats, res.config);
        res.trace.push_back({best->kind, best->worker, best->stage, best->delta.d_rate,
                             best->delta.d_memory});
    }
    res.infeasible = res.config.active_count() == 0;
    if (res.infeasible) res.rate = 0.0;
    return res;
}

/// Alg. "search": run the iterative search once per global recompute branch
/// (S1) and keep the higher rate; ties favour no recomputation.
inline SearchResult search(const StageStats& stats, double t_d, const StreamSpec& s,
                           count_t budget) {
    SearchResult plain = iterative_config_search(stats, t_d, 0, s, budget);
    SearchResult recomputed = iterative_config_search(stats, t_d, 1, s, budget);
    if (recomputed.infeasible && !plain.infeasible) return plain;
    if (plain.infeasible && !recomputed.infeasible) return recomputed;
    return recomputed.rate > plain.rate ? recomputed : plain;
}

struct PlanResult {
    PartitionScheme partition;
    PipelineConfig config;
    double rate = 0.0;
    count_t memory = 0;
    double t_c = 0.0;
    bool infeasible = false;
    std::vector<AppliedMove> trace;
};

/// Alg. "brute-force planning": enumerate candidate stage bounds, search each
/// induced partition, keep the best (rate, then larger t_c).
inline PlanResult plan(const ModelProfile& profile, double t_d, const StreamSpec& s,
                       count_t budget) {
    if (budget == 0) budget = 1; // a zero budget is unreachable; fall through to infeasible
    std::optional<PlanResult> best;
    for (double t_c : candidate_bounds(profile)) {
        PartitionScheme scheme = partition_by_bound(profile, t_c);
        StageStats stats = stage_stats(profile, scheme);
        SearchResult sr = search(stats, t_d, s, budget);
        PlanResult pr;
        pr.partition = std::move(scheme);
        pr.config = std::move(sr.config);
        pr.rate = sr.rate;
        pr.memory = sr.memory;
        pr.t_c = t_c;
        pr.infeasible = sr.infeasible;
        pr.trace = std::move(sr.trace);
        const bool better = !best || (pr.infeasible == best->infeasible &&
                                      (pr.rate > best->rate ||
                                       (pr.rate == best->rate && pr.t_c > best->t_c))) ||
                            (!pr.infeasible && best->infeasible);
        if (better) best = std::move(pr);
    }
    return *best;
}

inline constexpr const char* kPlanFormat = "ferret-plan v1";

inline void write_plan(std::ostream& out, const PlanResult& plan) {
    out << kPlanFormat << "\n";
    out << "t_c " << detail::fmt_double(plan.t_c) << "\n";
    out << "rate " << detail::fmt_double(plan.rate) << "\n";
    out << "memory " << plan.memory << "\n";
    out << "infeasible " << (plan.infeasible ? 1 : 0) << "\n";
    out << "bounds";
    for (auto b : plan.partition.bounds) out << ' ' << b;
    out << "\n";
    out << "modulus " << plan.config.modulus << "\n";
    out << "workers " << plan.config.workers.size() << "\n";
    for (const auto& w : plan.config.workers) {
        out << "worker " << w.delay << ' ' << w.recompute << " a";
        for (int v : w.accum) out << ' ' << v;
        out << " o";
        for (int v : w.omit) out << ' ' << v;
        out << "\n";
    }
    out << "trace " << plan.trace.size() << "\n";
    for (const auto& m : plan.trace)
        out << "move " << to_string(m.kind) << ' ' << m.worker << ' ' << m.stage << ' '
            << detail::fmt_double(m.d_rate) << ' ' << m.d_memory << "\n";
}

inline void save_plan(const std::string& path, const PlanResult& plan) {
    std::ofstream out(path);
    if (!out) throw SchemaError(path + ": cannot write plan file");
    write_plan(out, plan);
}

inline PlanResult parse_plan(std::istream& in, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line) || line != kPlanFormat)
        throw SchemaError(origin + ": expected header '" + std::string(kPlanFormat) + "'");
    PlanResult plan;
    auto expect = [&](const std::string& key) {
        if (!std::getline(in, line)) throw SchemaError(origin + ": truncated before '" + key + "'");
        std::istringstream ls(line);
        std::string k;
        ls >> k;
        if (k != key) throw SchemaError(origin + ": expected '" + key + "', got '" + k + "'");
        return ls;
    };
    { auto ls = expect("t_c"); ls >> plan.t_c; }
    { auto ls = expect("rate"); ls >> plan.rate; }
    { auto ls = expect("memory"); ls >> plan.memory; }
    { auto ls = expect("infeasible"); int v = 0; ls >> v; plan.infeasible = v != 0; }
    {
        auto ls = expect("bounds");
        std::size_t b;
        while (ls >> b) plan.partition.bounds.push_back(b);
    }
    { auto ls = expect("modulus"); ls >> plan.config.modulus; }
    std::size_t n_workers = 0;
    { auto ls = expect("workers"); ls >> n_workers; }
    const std::size_t P = plan.partition.stages();
    for (std::size_t i = 0; i < n_workers; ++i) {
        auto ls = expect("worker");
        WorkerConfig w;
        std::string tag;
        ls >> w.delay >> w.recompute;
        ls >> tag;
        if (tag != "a") throw SchemaError(origin + ": malformed worker record");
        for (std::size_t j = 0; j < P; ++j) { int v; if (!(ls >> v)) throw SchemaError(origin + ": short accum list"); w.accum.push_back(v); }
        ls >> tag;
        if (tag != "o") throw SchemaError(origin + ": malformed worker record");
        for (std::size_t j = 0; j < P; ++j) { int v; if (!(ls >> v)) throw SchemaError(origin + ": short omit list"); w.omit.push_back(v); }
        plan.config.workers.push_back(std::move(w));
    }
    std::size_t n_moves = 0;
    { auto ls = expect("trace"); ls >> n_moves; }
    for (std::size_t i = 0; i < n_moves; ++i) {
        auto ls = expect("move");
        AppliedMove m;
        std::string kind;
        ls >> kind >> m.worker >> m.stage >> m.d_rate >> m.d_memory;
        if (kind == "S1") m.kind = MoveKind::recompute;
        else if (kind == "S2") m.kind = MoveKind::accumulate;
        else if (kind == "S3") m.kind = MoveKind::omit;
        else if (kind == "S4") m.kind = MoveKind::remove;
        else throw SchemaError(origin + ": unknown move kind '" + kind + "'");
        plan.trace.push_back(m);
    }
    return plan;
}

inline PlanResult load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path + ": cannot open plan file");
    return parse_plan(in, path);
}

} // namespace ferret
