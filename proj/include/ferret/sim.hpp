#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ferret/analytics.hpp"
#include "ferret/profile.hpp"
#include "ferret/types.hpp"

namespace ferret {

enum class EventKind : int { arrival = 0, drop = 1, forward = 2, recompute = 3, backward = 4, update = 5 };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::arrival: return "arrival";
        case EventKind::drop: return "drop";
        case EventKind::forward: return "forward";
        case EventKind::recompute: return "recompute";
        case EventKind::backward: return "backward";
        default: return "update";
    }
}

/// One virtual-time event. `version` is the parameter version read (forward,
/// backward) or created (update); `staleness` is the update's version gap.
struct SimEvent {
    double time = 0.0;
    EventKind kind = EventKind::arrival;
    int worker = -1;
    int stage = -1;
    std::int64_t item = -1;
    std::int64_t version = -1;
    int staleness = -1;
};

/// Value credit: one stage-update applied the gradient of one item.
struct ValueCredit {
    double time = 0.0;
    std::int64_t item = 0;
    double weight_frac = 0.0;
};

struct SimTrace {
    std::vector<SimEvent> events;
    std::vector<double> item_latency; // seconds; +inf for dropped items
    std::vector<ValueCredit> credits;
    std::map<int, std::int64_t> update_staleness;
    count_t peak_memory = 0;
    std::int64_t drops = 0;
    std::size_t n_items = 0;
    double t_d = 1.0;
    int modulus = 1;
};

inline count_t peak_memory(const SimTrace& trace) { return trace.peak_memory; }

/// Time-averaged decayed value captured by updates: sum over credits of
/// e^{-c r} V_D weighted by the updated stage's parameter share, divided by
/// the covered arrival horizon. Items with index < warmup_items are excluded
/// from both numerator and horizon.
inline double realized_value(const SimTrace& trace, const StreamSpec& s,
                             std::size_t warmup_items = 0) {
    s.validate();
    if (trace.n_items == 0 || warmup_items >= trace.n_items)
        throw std::invalid_argument("realized_value: trace covers no arrival horizon");
    double total = 0.0;
    for (const auto& c : trace.credits) {
        if (c.item < static_cast<std::int64_t>(warmup_items)) continue;
        const double arrival = static_cast<double>(c.item) * trace.t_d;
        total += std::exp(-s.decay_c * (c.time - arrival)) * s.value * c.weight_frac;
    }
    const double horizon = static_cast<double>(trace.n_items - warmup_items) * trace.t_d;
    return total / horizon;
}

namespace detail {

struct PendingItem {
    std::int64_t global = 0;
    double arrival = 0.0;
};

struct ItemCtx {
    std::int64_t global = 0;
    double arrival = 0.0;
    std::size_t lowest_stage = 0;        // deepest stage whose backward runs
    std::vector<std::int64_t> read_version; // per stage, set at forward start
};

struct AccEntry {
    std::int64_t local = 0;
};

struct SimStage {
    bool busy = false;
    std::deque<std::int64_t> ready_f;
    std::deque<std::int64_t> ready_b;
    std::int64_t version = 0;
    std::unordered_map<std::int64_t, int> pins;
    std::vector<AccEntry> acc;
    std::int64_t forwards_started = 0;
    count_t weight_slabs = 1;
    count_t act_slabs = 0;
};

struct SimWorker {
    const WorkerConfig* cfg = nullptr;
    std::vector<SimStage> stages;
    std::optional<PendingItem> pending;
    std::int64_t next_local = 0;
    std::vector<ItemCtx> items; // indexed by local id
};

struct SimEventKey {
    double time;
    int type; // 0 = task completion, 1 = arrival (completions first at equal time)
    int worker;
    int stage;
    int kind; // 0 = forward, 1 = backward
    std::int64_t local;
    std::int64_t global; // arrivals only

    bool operator>(const SimEventKey& o) const {
        if (time != o.time) return time > o.time;
        if (type != o.type) return type > o.type;
        if (worker != o.worker) return worker > o.worker;
        if (stage != o.stage) return stage > o.stage;
        if (kind != o.kind) return kind > o.kind;
        return local > o.local;
    }
};

/// Deepest stage reached by the backward pass of local item k, or P if the
/// backward never starts (cannot happen while omit[P-1] == 0).
inline std::size_t lowest_backward_stage(const WorkerConfig& w, std::int64_t k) {
    std::size_t lowest = w.omit.size();
    for (std::size_t j = w.omit.size(); j-- > 0;) {
        if (k % (static_cast<std::int64_t>(w.omit[j]) + 1) != 0) break;
        lowest = j;
    }
    return lowest;
}

} // namespace detail

/// Deterministic virtual-time simulation of interleaved 1F1B pipeline
/// workers over a uniform arrival stream.
class Simulator {
  public:
    Simulator(const StageStats& stats, const PipelineConfig& cfg, const StreamSpec& s)
        : stats_(stats), cfg_(cfg), spec_(s) {
        cfg_.validate(stats_.stages());
        spec_.validate();
        total_w_ = stats_.total_w();
    }

    SimTrace run(std::size_t n_items) {
        init(n_items);
        for (std::size_t i = 0; i < n_items; ++i)
            heap_.push({static_cast<double>(i) * spec_.t_d, 1, 0, 0, 0, 0,
                        static_cast<std::int64_t>(i)});
        while (!heap_.empty()) {
            const auto ev = heap_.top();
            heap_.pop();
            if (ev.type == 1) handle_arrival(ev);
            else handle_completion(ev);
        }
        trace_.peak_memory = peak_;
        return std::move(trace_);
    }

  private:
    const StageStats& stats_;
    PipelineConfig cfg_;
    StreamSpec spec_;
    count_t total_w_ = 0;

    std::vector<detail::SimWorker> workers_;
    std::vector<int> residue_owner_;
    std::priority_queue<detail::SimEventKey, std::vector<detail::SimEventKey>,
                        std::greater<detail::SimEventKey>>
        heap_;
    SimTrace trace_;
    count_t live_mem_ = 0;
    count_t peak_ = 0;

    std::size_t stages() const { return stats_.stages(); }

    void init(std::size_t n_items) {
        trace_ = SimTrace{};
        trace_.n_items = n_items;
        trace_.t_d = spec_.t_d;
        trace_.modulus = cfg_.modulus;
        trace_.item_latency.assign(n_items, std::numeric_limits<double>::infinity());
        residue_owner_.assign(static_cast<std::size_t>(cfg_.modulus), -1);
        workers_.clear();
        workers_.resize(cfg_.workers.size());
        live_mem_ = 0;
        for (std::size_t n = 0; n < cfg_.workers.size(); ++n) {
            workers_[n].cfg = &cfg_.workers[n];
            workers_[n].stages.resize(stages());
            if (cfg_.workers[n].active()) {
                residue_owner_[static_cast<std::size_t>(cfg_.workers[n].delay)] =
                    static_cast<int>(n);
                for (std::size_t j = 0; j < stages(); ++j) live_mem_ += stats_.w[j];
            }
        }
        peak_ = live_mem_;
    }

    count_t act_slot(std::size_t n, std::size_t j) const {
        return stats_.a[j] - static_cast<count_t>(cfg_.workers[n].recompute) * stats_.inner_a[j];
    }

    void emit(double t, EventKind k, int w, int j, std::int64_t item, std::int64_t version = -1,
              int tau = -1) {
        trace_.events.push_back({t, k, w, j, item, version, tau});
    }

    void handle_arrival(const detail::SimEventKey& ev) {
        const std::int64_t item = ev.global;
        emit(ev.time, EventKind::arrival, -1, -1, item);
        const int owner = residue_owner_[static_cast<std::size_t>(item % cfg_.modulus)];
        if (owner < 0) {
            emit(ev.time, EventKind::drop, -1, -1, item);
            ++trace_.drops;
            return;
        }
        auto& w = workers_[static_cast<std::size_t>(owner)];
        if (w.pending) {
            emit(ev.time, EventKind::drop, owner, -1, item);
            ++trace_.drops;
            return;
        }
        w.pending = detail::PendingItem{item, ev.time};
        try_start(static_cast<std::size_t>(owner), 0, ev.time);
    }

    void handle_completion(const detail::SimEventKey& ev) {
        const std::size_t n = static_cast<std::size_t>(ev.worker);
        const std::size_t j = static_cast<std::size_t>(ev.stage);
        auto& st = workers_[n].stages[j];
        st.busy = false;
        if (ev.kind == 0) on_forward_done(n, j, ev.local, ev.time);
        else on_backward_done(n, j, ev.local, ev.time);
    }

    void on_forward_done(std::size_t n, std::size_t j, std::int64_t k, double t) {
        auto& w = workers_[n];
        if (j + 1 < stages()) {
            w.stages[j + 1].ready_f.push_back(k);
            try_start(n, j + 1, t);
        } else {
            // omit[P-1] is always 0: every forwarded item starts its backward
            w.stages[j].ready_b.push_back(k);
        }
        try_start(n, j, t);
    }

    void on_backward_done(std::size_t n, std::size_t j, std::int64_t k, double t) {
        auto& w = workers_[n];
        auto& st = w.stages[j];
        auto& ctx = w.items[static_cast<std::size_t>(k)];
        unpin(st, ctx.read_version[j]);
        st.acc.push_back({k});
        if (st.acc.size() == static_cast<std::size_t>(w.cfg->accum[j])) {
            const std::int64_t oldest_read =
                w.items[static_cast<std::size_t>(st.acc.front().local)].read_version[j];
            const int tau = static_cast<int>(st.version - oldest_read);
            emit(t, EventKind::update, static_cast<int>(n), static_cast<int>(j), ctx.global,
                 st.version + 1, tau);
            trace_.update_staleness[tau] += 1;
            for (const auto& entry : st.acc) {
                auto& ictx = w.items[static_cast<std::size_t>(entry.local)];
                trace_.credits.push_back({t, ictx.global,
                                          static_cast<double>(stats_.w[j]) /
                                              static_cast<double>(total_w_)});
                auto& lat = trace_.item_latency[static_cast<std::size_t>(ictx.global)];
                const double cand = t - ictx.arrival;
                lat = std::isinf(lat) ? cand : std::max(lat, cand);
            }
            st.acc.clear();
            st.version += 1;
            check_pins(st, j);
        }
        if (j > 0 && ctx.lowest_stage <= j - 1) {
            w.stages[j - 1].ready_b.push_back(k);
            try_start(n, j - 1, t);
        }
        try_start(n, j, t);
    }

    void try_start(std::size_t n, std::size_t j, double t) {
        auto& w = workers_[n];
        auto& st = w.stages[j];
        if (st.busy) return;
        const double tf = stats_.t_f;
        const double tb = stats_.t_b;
        const bool rec = w.cfg->recompute != 0;
        if (!st.ready_b.empty()) {
            const std::int64_t k = st.ready_b.front();
            st.ready_b.pop_front();
            const auto& ctx = w.items[static_cast<std::size_t>(k)];
            double start = t;
            if (rec) {
                emit(start, EventKind::recompute, static_cast<int>(n), static_cast<int>(j),
                     ctx.global, ctx.read_version[j]);
                start += tf;
            }
            emit(start, EventKind::backward, static_cast<int>(n), static_cast<int>(j), ctx.global,
                 ctx.read_version[j]);
            st.busy = true;
            heap_.push({start + tb, 0, static_cast<int>(n), static_cast<int>(j), 1, k, 0});
            return;
        }
        std::optional<std::int64_t> fwd;
        if (j == 0) {
            if (w.pending) {
                const std::int64_t local = w.next_local++;
                detail::ItemCtx ctx;
                ctx.global = w.pending->global;
                ctx.arrival = w.pending->arrival;
                ctx.lowest_stage = detail::lowest_backward_stage(*w.cfg, local);
                ctx.read_version.assign(stages(), -1);
                w.items.push_back(std::move(ctx));
                w.pending.reset();
                fwd = local;
            }
        } else if (!st.ready_f.empty()) {
            fwd = st.ready_f.front();
            st.ready_f.pop_front();
        }
        if (!fwd) return;
        auto& ctx = w.items[static_cast<std::size_t>(*fwd)];
        ctx.read_version[j] = st.version;
        st.forwards_started += 1;
        provision(n, j);
        if (ctx.lowest_stage <= j) {
            st.pins[st.version] += 1;
            check_pins(st, j);
        }
        emit(t, EventKind::forward, static_cast<int>(n), static_cast<int>(j), ctx.global,
             st.version);
        st.busy = true;
        heap_.push({t + tf, 0, static_cast<int>(n), static_cast<int>(j), 0, *fwd, 0});
    }

    /// Slot provisioning after a forward start: grow toward the stage's own
    /// steady-state multiplicity as in-flight demand appears; never shrink.
    void provision(std::size_t n, std::size_t j) {
        auto& st = workers_[n].stages[j];
        const auto& wc = *workers_[n].cfg;
        const count_t ca = static_cast<count_t>(wc.accum[j]);
        const count_t cap = ceil_div(static_cast<count_t>(stages() - 1 - j), ca);
        const count_t grown =
            ceil_div(static_cast<count_t>(st.forwards_started > 0 ? st.forwards_started - 1 : 0),
                     ca);
        const std::int64_t extra = std::max<std::int64_t>(
            0, static_cast<std::int64_t>(std::min(grown, cap)) - wc.omit[j]);
        const count_t w_target = 1 + static_cast<count_t>(extra);
        const count_t a_target = w_target; // working buffer counts once forwarding begins
        if (st.weight_slabs < w_target) {
            live_mem_ += (w_target - st.weight_slabs) * stats_.w[j];
            st.weight_slabs = w_target;
        }
        if (st.act_slabs < a_target) {
            live_mem_ += (a_target - st.act_slabs) * act_slot(n, j);
            st.act_slabs = a_target;
        }
        peak_ = std::max(peak_, live_mem_);
    }

    void unpin(detail::SimStage& st, std::int64_t version) {
        auto it = st.pins.find(version);
        if (it == st.pins.end()) return;
        if (--it->second == 0) st.pins.erase(it);
    }

    /// Physical demand may never exceed what the provisioning model granted.
    void check_pins(const detail::SimStage& st, std::size_t j) const {
        const std::size_t distinct =
            st.pins.size() + (st.pins.count(st.version) ? 0u : 1u);
        if (distinct > st.weight_slabs)
            throw std::logic_error("stage " + std::to_string(j) +
                                   ": live version demand exceeds provisioned slots");
    }
};

inline SimTrace simulate(const StageStats& stats, const PipelineConfig& cfg, const StreamSpec& s,
                         std::size_t n_items) {
    return Simulator(stats, cfg, s).run(n_items);
}

inline constexpr const char* kTraceFormat = "ferret-trace v1";

inline void write_trace(std::ostream& out, const SimTrace& trace, const StreamSpec& s) {
    out << kTraceFormat << "\n";
    out << "items " << trace.n_items << " t_d " << detail::fmt_double(trace.t_d) << " modulus "
        << trace.modulus << "\n";
    out << "peak_memory " << trace.peak_memory << "\n";
    out << "drops " << trace.drops << "\n";
    const double drop_rate =
        trace.n_items == 0 ? 0.0
                           : static_cast<double>(trace.drops) / static_cast<double>(trace.n_items);
    out << "drop_rate " << detail::fmt_double(drop_rate) << "\n";
    out << "realized_value "
        << detail::fmt_double(trace.n_items == 0 ? 0.0 : realized_value(trace, s)) << "\n";
    out << "staleness";
    for (const auto& [tau, cnt] : trace.update_staleness) out << ' ' << tau << ':' << cnt;
    out << "\n";
    out << "events " << trace.events.size() << "\n";
    for (const auto& e : trace.events) {
        out << "event " << detail::fmt_double(e.time) << ' ' << to_string(e.kind) << ' '
            << e.worker << ' ' << e.stage << ' ' << e.item;
        if (e.kind == EventKind::update) out << " v" << e.version << " tau" << e.staleness;
        out << "\n";
    }
}

inline void save_trace(const std::string& path, const SimTrace& trace, const StreamSpec& s) {
    std::ofstream out(path);
    if (!out) throw SchemaError(path + ": cannot write trace file");
    write_trace(out, trace, s);
}

} // namespace ferret
