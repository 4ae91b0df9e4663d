#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ferret/types.hpp"

namespace ferret {

namespace detail {

/// LCM of {omit[k] + 1 : k in [stage, P)} — the backward cadence of a stage.
inline std::uint64_t omission_lcm(const WorkerConfig& w, std::size_t stage) {
    std::uint64_t l = 1;
    for (std::size_t k = stage; k < w.omit.size(); ++k)
        l = std::lcm(l, static_cast<std::uint64_t>(w.omit[k]) + 1);
    return l;
}

/// Value term A_{i,j}: decayed value delivered by the j-th accumulated
/// gradient of stage i, per unit of worker cycle time.
inline double value_term(const StageStats& stats, const WorkerConfig& w, const StreamSpec& s,
                         std::size_t stage, std::uint64_t offset, std::uint64_t cadence_lcm) {
    const double P = static_cast<double>(stats.stages());
    const double i = static_cast<double>(stage);
    const double j = static_cast<double>(offset);
    const double cr = static_cast<double>(w.recompute);
    const double expo = (P + j) * stats.t_f + (P - i + j) * stats.t_b + cr * (P - i + j) * stats.t_f;
    const double cycle = stats.t_f + stats.t_b + cr * stats.t_f;
    return std::exp(-s.decay_c * expo) * s.value /
           (static_cast<double>(cadence_lcm) * cycle);
}

/// One stage's rate contribution for one worker.
inline double stage_rate(const StageStats& stats, const WorkerConfig& w, const StreamSpec& s,
                         std::size_t stage) {
    const count_t total = stats.total_w();
    if (total == 0) return 0.0;
    const std::uint64_t lcm = omission_lcm(w, stage);
    const std::uint64_t ca = static_cast<std::uint64_t>(w.accum[stage]);
    double acc = 0.0;
    for (std::uint64_t j = 0; j < ca; ++j) acc += value_term(stats, w, s, stage, j, lcm);
    return static_cast<double>(stats.w[stage]) / static_cast<double>(total) * acc /
           static_cast<double>(ca);
}

inline count_t slot_size(const StageStats& stats, const WorkerConfig& w, std::size_t stage) {
    return stats.w[stage] + stats.a[stage] -
           static_cast<count_t>(w.recompute) * stats.inner_a[stage];
}

inline count_t stage_multiplicity(const StageStats& stats, const WorkerConfig& w,
                                  std::size_t stage) {
    const count_t pending = static_cast<count_t>(stats.stages() - 1 - stage);
    const std::int64_t m = 1 +
        static_cast<std::int64_t>(ceil_div(pending, static_cast<count_t>(w.accum[stage]))) -
        w.omit[stage];
    if (m < 1)
        throw ConfigError("stage " + std::to_string(stage) +
                          ": version multiplicity below 1 (inconsistent omission count)");
    return static_cast<count_t>(m);
}

} // namespace detail

/// One worker's contribution to the adaptation rate.
inline double worker_rate(const StageStats& stats, const WorkerConfig& w, const StreamSpec& s) {
    if (!w.active()) return 0.0;
    double r = 0.0;
    for (std::size_t i = 0; i < stats.stages(); ++i) r += detail::stage_rate(stats, w, s, i);
    return r;
}

/// One worker's contribution to the memory footprint, in parameter/activation
/// count units.
inline count_t worker_memory(const StageStats& stats, const WorkerConfig& w) {
    if (!w.active()) return 0;
    count_t m = 0;
    for (std::size_t i = 0; i < stats.stages(); ++i)
        m += detail::stage_multiplicity(stats, w, i) * detail::slot_size(stats, w, i);
    return m;
}

/// Closed-form adaptation rate of a pipeline configuration (value-units/second).
inline double adaptation_rate(const StageStats& stats, const PipelineConfig& cfg,
                              const StreamSpec& s) {
    cfg.validate(stats.stages());
    s.validate();
    double r = 0.0;
    for (const auto& w : cfg.workers) r += worker_rate(stats, w, s);
    return r;
}

/// Closed-form peak training memory of a pipeline configuration (count units).
inline count_t memory_footprint(const StageStats& stats, const PipelineConfig& cfg) {
    cfg.validate(stats.stages());
    count_t m = 0;
    for (const auto& w : cfg.workers) m += worker_memory(stats, w);
    return m;
}

/// Signed effect of one deployment move; both components are <= 0 for every
/// applicable move.
struct MoveDelta {
    double d_rate = 0.0;
    std::int64_t d_memory = 0;
};

enum class MoveStatus { ok, inapplicable, noop };

struct MoveResult {
    MoveStatus status = MoveStatus::ok;
    MoveDelta delta;
    int d_accum = 0;       // S2 only: the accumulation increment applied
    bool last_worker = false; // S4 only: removing the final active worker
};

/// S1 for one worker: enable activation recomputation. Rate delta follows the
/// B - C structure (recompute-cycle terms minus plain-cycle terms); memory
/// drops by the inner activations of every stored slot.
inline MoveResult delta_recompute(const StageStats& stats, const PipelineConfig& cfg,
                                  const StreamSpec& s, std::size_t worker) {
    const WorkerConfig& w = cfg.workers.at(worker);
    MoveResult res;
    if (!w.active() || w.recompute != 0) {
        res.status = MoveStatus::noop;
        return res;
    }
    WorkerConfig after = w;
    after.recompute = 1;
    for (std::size_t i = 0; i < stats.stages(); ++i) {
        res.delta.d_rate += detail::stage_rate(stats, after, s, i) - detail::stage_rate(stats, w, s, i);
        res.delta.d_memory -= static_cast<std::int64_t>(
            detail::stage_multiplicity(stats, w, i) * stats.inner_a[i]);
    }
    return res;
}

/// S2 for one stage: raise the accumulation count just enough to drop one
/// stored version. Inapplicable on the last stage or once the stored-version
/// ceiling cannot decrease (the caller falls through to S3).
inline MoveResult delta_accumulate(const StageStats& stats, const PipelineConfig& cfg,
                                   const StreamSpec& s, std::size_t worker, std::size_t stage) {
    const WorkerConfig& w = cfg.workers.at(worker);
    MoveResult res;
    if (!w.active() || w.omit[stage] != 0) {
        res.status = MoveStatus::inapplicable;
        return res;
    }
    const count_t pending = static_cast<count_t>(stats.stages() - 1 - stage);
    const count_t ca = static_cast<count_t>(w.accum[stage]);
    const count_t q = ceil_div(pending, ca);
    if (pending == 0 || q <= 1) {
        res.status = MoveStatus::inapplicable; // delta c_a would be infinite
        return res;
    }
    const count_t new_ca = ceil_div(pending, q - 1);
    res.d_accum = static_cast<int>(new_ca - ca);
    WorkerConfig after = w;
    after.accum[stage] = static_cast<int>(new_ca);
    res.delta.d_rate = detail::stage_rate(stats, after, s, stage) - detail::stage_rate(stats, w, s, stage);
    const count_t dropped = q - ceil_div(pending, new_ca);
    res.delta.d_memory =
        -static_cast<std::int64_t>(dropped * detail::slot_size(stats, w, stage));
    return res;
}

/// S3 for one stage: omit every backward that would need a stashed version
/// (accum back to 1, omit = P-1-j). Rate changes for stages <= j through the
/// E-term cadence LCM(LCM(...), P-j).
inline MoveResult delta_omit(const StageStats& stats, const PipelineConfig& cfg,
                             const StreamSpec& s, std::size_t worker, std::size_t stage) {
    const WorkerConfig& w = cfg.workers.at(worker);
    MoveResult res;
    if (!w.active() || w.omit[stage] != 0) {
        res.status = MoveStatus::noop;
        return res;
    }
    const count_t pending = static_cast<count_t>(stats.stages() - 1 - stage);
    WorkerConfig after = w;
    after.accum[stage] = 1;
    after.omit[stage] = static_cast<int>(pending);
    for (std::size_t i = 0; i <= stage; ++i)
        res.delta.d_rate += detail::stage_rate(stats, after, s, i) - detail::stage_rate(stats, w, s, i);
    res.delta.d_memory = -static_cast<std::int64_t>(
        ceil_div(pending, static_cast<count_t>(w.accum[stage])) *
        detail::slot_size(stats, w, stage));
    return res;
}

/// S4: shut down one worker; negates its full rate and memory contributions.
inline MoveResult delta_remove(const StageStats& stats, const PipelineConfig& cfg,
                               const StreamSpec& s, std::size_t worker) {
    const WorkerConfig& w = cfg.workers.at(worker);
    MoveResult res;
    if (!w.active()) {
        res.status = MoveStatus::noop;
        return res;
    }
    res.delta.d_rate = -worker_rate(stats, w, s);
    res.delta.d_memory = -static_cast<std::int64_t>(worker_memory(stats, w));
    res.last_worker = cfg.active_count() == 1;
    return res;
}

} // namespace ferret
